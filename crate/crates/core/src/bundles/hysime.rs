//! Signal-subspace dimension by minimum error (HySime), with the noise
//! estimated by regressing every band on all the others.

use log::warn;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative ridge added to the band correlation matrix before inversion.
const RIDGE: f64 = 1e-10;

/// Per-pixel noise estimate: band `i` minus its least-squares prediction from
/// the remaining bands. Input and output are `bands×pixels`.
pub fn estimate_noise(y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (l, n) = y.shape();
    if l < 2 || n == 0 {
        return Err(Error::dim("noise estimation needs at least 2 bands and 1 pixel"));
    }
    let mut rr = y * y.transpose();
    let scale = rr.trace() / l as f64;
    let eig_min = rr.clone().symmetric_eigen().eigenvalues.min();
    if eig_min <= RIDGE * scale {
        warn!("band correlation matrix is rank deficient; regularizing with a {RIDGE:e} ridge");
    }
    for k in 0..l {
        rr[(k, k)] += RIDGE * scale.max(f64::MIN_POSITIVE);
    }
    let rri = rr
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NonFinite("band correlation matrix is singular".into()))?;
    let mut w = DMatrix::<f64>::zeros(l, n);
    for i in 0..l {
        // Inverse of RR with band i removed, via a rank-one downdate.
        let xx = &rri - rri.column(i) * rri.row(i) / rri[(i, i)];
        let mut rra = rr.column(i).into_owned();
        rra[i] = 0.0;
        let mut beta = xx * rra;
        beta[i] = 0.0;
        let pred = beta.transpose() * y;
        w.row_mut(i).copy_from(&(y.row(i) - pred));
    }
    Ok(w)
}

/// Outcome of a subspace identification.
#[derive(Debug, Clone)]
pub struct HysimeResult {
    pub dimension: usize,
    /// Signal-subspace basis, `bands×dimension`.
    pub basis: DMatrix<f64>,
}

/// Estimates the signal-subspace dimension of `y` (`bands×pixels`) given its
/// noise estimate `w` (same shape).
pub fn hysime(y: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<HysimeResult> {
    if y.shape() != w.shape() {
        return Err(Error::dim("data and noise estimate differ in shape"));
    }
    let (l, n) = y.shape();
    let nf = n as f64;
    let x = y - w;
    let ry = y * y.transpose() / nf;
    let rx = &x * x.transpose() / nf;
    let mut rn = w * w.transpose() / nf;
    let tr = rx.trace();
    for k in 0..l {
        rn[(k, k)] += tr / l as f64 / 1e10;
    }
    let eig = rx.symmetric_eigen();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let e = eig.eigenvectors.select_columns(&order);
    let py = (e.transpose() * &ry * &e).diagonal();
    let pn = (e.transpose() * &rn * &e).diagonal();
    let selected: Vec<usize> = (0..l).filter(|&k| -py[k] + 2.0 * pn[k] < 0.0).collect();
    Ok(HysimeResult {
        dimension: selected.len(),
        basis: e.select_columns(&selected),
    })
}

/// [`estimate_noise`] followed by [`hysime`].
pub fn estimate_dimension(y: &DMatrix<f64>) -> Result<usize> {
    let w = estimate_noise(y)?;
    Ok(hysime(y, &w)?.dimension)
}
