use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Probabilities are clamped to `[CLAMP, 1 − CLAMP]` inside the logarithms.
pub const CLAMP: f64 = 1e-12;

/// Binary cross-entropy summed over classes and averaged over samples:
/// `−(1/N) Σ_i Σ_j [y log p + (1 − y) log(1 − p)]`.
///
/// Returns the loss and its gradient with respect to `pred`. Clamped entries
/// get zero gradient.
pub fn loss_e(pred: &Tensor, labels: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != labels.shape() {
        return Err(Error::dim(format!(
            "prediction {:?} vs labels {:?}",
            pred.shape(),
            labels.shape()
        )));
    }
    let n = pred.rows().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(pred.shape());
    for ((g, &p), &y) in grad.data_mut().iter_mut().zip(pred.data()).zip(labels.data()) {
        let pc = p.clamp(CLAMP, 1.0 - CLAMP);
        loss -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        if p > CLAMP && p < 1.0 - CLAMP {
            *g = -(y / pc - (1.0 - y) / (1.0 - pc)) / n;
        }
    }
    Ok((loss / n, grad))
}

/// Squared reconstruction error averaged over every entry (`N·B`, or `H·W·B`).
pub fn loss_ur(x: &Tensor, x_hat: &Tensor) -> Result<(f64, Tensor)> {
    if x.shape() != x_hat.shape() {
        return Err(Error::dim(format!(
            "input {:?} vs reconstruction {:?}",
            x.shape(),
            x_hat.shape()
        )));
    }
    let m = x.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(x.shape());
    for ((g, &a), &b) in grad.data_mut().iter_mut().zip(x.data()).zip(x_hat.data()) {
        let d = b - a;
        loss += d * d;
        *g = 2.0 * d / m;
    }
    Ok((loss / m, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_examples() {
        let one_hot = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        let (l, _) = loss_e(&one_hot, &one_hot).unwrap();
        assert!(l >= 0.0 && l <= 3.0 * 1e-11);
        let uniform = Tensor::from_rows(&[vec![0.5, 0.5]]);
        let label = Tensor::from_rows(&[vec![1.0, 0.0]]);
        let (l, _) = loss_e(&uniform, &label).unwrap();
        assert!((l - 1.3862943611198906).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_examples() {
        let x = Tensor::filled(&[3, 4], 0.5);
        assert_eq!(loss_ur(&x, &x).unwrap().0, 0.0);
        let xh = Tensor::filled(&[3, 4], 0.25);
        assert!((loss_ur(&x, &xh).unwrap().0 - 0.0625).abs() < 1e-15);
    }
}
