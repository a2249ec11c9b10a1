//! Adam with the polynomial ("poly") learning-rate decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gradients, ParamStore};
use crate::tensor::Tensor;

/// `base_lr · (1 − iter/max_iter)^power`, clamped to zero past `max_iter`.
pub fn poly_lr(iter: usize, base_lr: f64, power: f64, max_iter: usize) -> f64 {
    if max_iter == 0 || iter >= max_iter {
        return 0.0;
    }
    base_lr * (1.0 - iter as f64 / max_iter as f64).powf(power)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub base_lr: f64,
    pub power: f64,
    pub max_iter: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn new(base_lr: f64, power: f64, max_iter: usize) -> Self {
        AdamConfig {
            base_lr,
            power,
            max_iter,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    /// Number of completed steps.
    pub t: usize,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, p)| Tensor::zeros(p.shape())).collect();
        AdamState {
            config,
            first_moment: zeros.clone(),
            second_moment: zeros,
            t: 0,
        }
    }

    /// Learning rate the next step will use.
    pub fn current_lr(&self) -> f64 {
        poly_lr(self.t, self.config.base_lr, self.config.power, self.config.max_iter)
    }
}

/// One Adam update with the poly-scheduled learning rate. Returns the rate used.
pub fn adam_step(params: &mut ParamStore, grads: &Gradients, state: &mut AdamState) -> Result<f64> {
    if grads.len() != params.len() || state.first_moment.len() != params.len() {
        return Err(Error::dim(format!(
            "adam: {} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    let lr = state.current_lr();
    let c = state.config;
    state.t += 1;
    let bc1 = 1.0 - c.beta1.powi(state.t as i32);
    let bc2 = 1.0 - c.beta2.powi(state.t as i32);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::dim(format!(
                "adam: parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        for (((pv, gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = c.beta1 * *mv + (1.0 - c.beta1) * gv;
            *vv = c.beta2 * *vv + (1.0 - c.beta2) * gv * gv;
            let mhat = *mv / bc1;
            let vhat = *vv / bc2;
            *pv -= lr * mhat / (vhat.sqrt() + c.epsilon);
        }
    }
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("p", Tensor::new(vec![values.len()], values.to_vec()).unwrap());
        s
    }

    #[test]
    fn poly_schedule_examples() {
        assert_eq!(poly_lr(0, 0.1, 0.99, 200), 0.1);
        assert_eq!(poly_lr(200, 0.1, 0.99, 200), 0.0);
        assert_eq!(poly_lr(500, 0.1, 0.99, 200), 0.0);
        assert!((poly_lr(50, 0.1, 1.0, 100) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = store(&[1.0, -2.0, 3.0]);
        let before = p.get(crate::nn::ParamId(0)).clone();
        let g = p.zero_grads();
        let mut st = AdamState::new(&p, AdamConfig::new(0.1, 0.99, 10));
        adam_step(&mut p, &g, &mut st).unwrap();
        assert_eq!(p.get(crate::nn::ParamId(0)), &before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn single_step_moves_by_lr_against_gradient() {
        let mut p = store(&[1.0, 1.0]);
        let g = Gradients::from_tensors(vec![Tensor::new(vec![2], vec![0.5, -4.0]).unwrap()]);
        let mut st = AdamState::new(&p, AdamConfig::new(0.1, 0.99, 10));
        let lr = adam_step(&mut p, &g, &mut st).unwrap();
        assert_eq!(lr, 0.1);
        let d = p.get(crate::nn::ParamId(0)).data();
        // |update| = lr·|g|/(|g|+ε)
        assert!(((1.0 - d[0]) - 0.1 * 0.5 / (0.5 + 1e-8)).abs() < 1e-15);
        assert!(((d[1] - 1.0) - 0.1 * 4.0 / (4.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = store(&[0.3, -0.7]);
            let g = Gradients::from_tensors(vec![Tensor::new(vec![2], vec![0.2, 0.1]).unwrap()]);
            let mut st = AdamState::new(&p, AdamConfig::new(0.1, 0.99, 10));
            for _ in 0..3 {
                adam_step(&mut p, &g, &mut st).unwrap();
            }
            p.get(crate::nn::ParamId(0)).data().to_vec()
        };
        let a = run();
        let b = run();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let mut p = store(&[1.0]);
        let g = store(&[1.0, 2.0]).zero_grads();
        let mut st = AdamState::new(&p, AdamConfig::new(0.1, 0.99, 10));
        assert!(adam_step(&mut p, &g, &mut st).is_err());
    }
}
