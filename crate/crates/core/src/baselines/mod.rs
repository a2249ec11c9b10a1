//! Classic abundance solvers: FCLSU, PCLSU, SUnSAL, and the blind (alternating)
//! variants that also update the endmembers.

pub mod nnls;
mod sunsal;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use nnls::{nnls, nnls_gram, nnls_with, NnlsOptions, NnlsSolution};
pub use sunsal::{sunsal, SunsalResult};

/// Weight of the sum-to-one row appended for FCLSU.
pub const DEFAULT_ASC_WEIGHT: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraints {
    None,
    Anc,
    AncAsc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub asc_weight: f64,
    pub lambda: f64,
    pub admm_rho: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            asc_weight: DEFAULT_ASC_WEIGHT,
            lambda: 1e-3,
            admm_rho: 1e-2,
            max_iter: 1000,
            tol: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::config("solver tol must be positive"));
        }
        if self.max_iter < 1 {
            return Err(Error::config("solver max_iter must be at least 1"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::config("sparsity weight must be nonnegative"));
        }
        if !(self.admm_rho > 0.0) {
            return Err(Error::config("ADMM penalty must be positive"));
        }
        if !(self.asc_weight > 0.0) {
            return Err(Error::config("sum-to-one weight must be positive"));
        }
        Ok(())
    }
}

fn check_endmembers(e: &DMatrix<f64>, bands: usize) -> Result<()> {
    if e.nrows() != bands {
        return Err(Error::dim(format!(
            "pixel has {bands} bands but endmembers have {}",
            e.nrows()
        )));
    }
    if let Some(j) = (0..e.ncols()).find(|&j| e.column(j).iter().all(|&v| v == 0.0)) {
        return Err(Error::config(format!("endmember column {j} is zero")));
    }
    Ok(())
}

/// Fully constrained least squares: `min ‖x − E a‖² s.t. a ≥ 0, Σa = 1`.
///
/// The sum-to-one constraint is enforced by a heavily weighted all-ones row
/// (weight `asc_weight`) before NNLS; the result is then rescaled to sum to 1.
pub fn fclsu(pixel: &[f64], e: &DMatrix<f64>, asc_weight: f64) -> Result<DVector<f64>> {
    check_endmembers(e, pixel.len())?;
    let (b, c) = e.shape();
    let mut aug = DMatrix::<f64>::zeros(b + 1, c);
    aug.row_mut(0).fill(asc_weight);
    aug.view_mut((1, 0), (b, c)).copy_from(e);
    let mut rhs = DVector::<f64>::zeros(b + 1);
    rhs[0] = asc_weight;
    rhs.rows_mut(1, b).copy_from_slice(pixel);
    let mut a = nnls(&aug, &rhs)?;
    let s = a.sum();
    if s > 0.0 {
        a /= s;
    } else {
        a.fill(1.0 / c as f64);
    }
    Ok(a)
}

/// Partially constrained least squares (nonnegativity only).
pub fn pclsu(pixel: &[f64], e: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_endmembers(e, pixel.len())?;
    nnls(e, &DVector::from_column_slice(pixel))
}

/// FCLSU on every column of a `bands×pixels` matrix; returns `classes×pixels`.
pub fn fclsu_image(x: &DMatrix<f64>, e: &DMatrix<f64>, asc_weight: f64) -> Result<DMatrix<f64>> {
    per_pixel(x, e, |p| fclsu(p, e, asc_weight))
}

/// PCLSU on every column of a `bands×pixels` matrix; returns `classes×pixels`.
pub fn pclsu_image(x: &DMatrix<f64>, e: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    per_pixel(x, e, |p| pclsu(p, e))
}

fn per_pixel(
    x: &DMatrix<f64>,
    e: &DMatrix<f64>,
    solve: impl Fn(&[f64]) -> Result<DVector<f64>> + Sync,
) -> Result<DMatrix<f64>> {
    check_endmembers(e, x.nrows())?;
    let cols: Vec<DVector<f64>> = (0..x.ncols())
        .into_par_iter()
        .map(|i| solve(x.column(i).as_slice()))
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_columns(&cols))
}

/// `min_E ‖X − E Y‖²_F s.t. E ≥ 0`, solved exactly band by band with NNLS.
///
/// `ridge` is added to the diagonal of `Y Yᵀ` (zero for the plain problem).
pub(crate) fn nonneg_endmembers(x: &DMatrix<f64>, y: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    if x.ncols() != y.ncols() {
        return Err(Error::dim(format!(
            "X has {} pixels but Y has {}",
            x.ncols(),
            y.ncols()
        )));
    }
    let c = y.nrows();
    let mut g = y * y.transpose();
    for k in 0..c {
        g[(k, k)] += ridge;
    }
    let h_all = y * x.transpose(); // C×B, column b is Y x_bᵀ
    let rows: Vec<DVector<f64>> = (0..x.nrows())
        .into_par_iter()
        .map(|band| {
            let h = h_all.column(band).into_owned();
            nnls_gram(&g, &h, NnlsOptions::default()).map(|s| s.x)
        })
        .collect::<Result<_>>()?;
    let mut e = DMatrix::<f64>::zeros(x.nrows(), c);
    for (band, r) in rows.iter().enumerate() {
        e.row_mut(band).copy_from(&r.transpose());
    }
    Ok(e)
}

/// Endmember step of the blind baselines: nonnegative least squares for `E`
/// with the abundances `Y` held fixed. `e_prev` fixes the expected shape.
pub fn blind_update_endmembers(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    e_prev: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if e_prev.nrows() != x.nrows() || e_prev.ncols() != y.nrows() {
        return Err(Error::dim(format!(
            "previous endmembers are {}×{}, expected {}×{}",
            e_prev.nrows(),
            e_prev.ncols(),
            x.nrows(),
            y.nrows()
        )));
    }
    nonneg_endmembers(x, y, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Fclsu,
    Pclsu,
    Sunsal,
}

/// Outcome of a (possibly blind) baseline run.
#[derive(Debug, Clone)]
pub struct BaselineResult {
    /// `classes×pixels`.
    pub abundances: DMatrix<f64>,
    /// `bands×classes`.
    pub endmembers: DMatrix<f64>,
    pub outer_iterations: usize,
}

/// Runs one abundance solver against fixed endmembers.
pub fn unmix(
    method: BaselineMethod,
    x: &DMatrix<f64>,
    e: &DMatrix<f64>,
    cfg: &SolverConfig,
) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    match method {
        BaselineMethod::Fclsu => fclsu_image(x, e, cfg.asc_weight),
        BaselineMethod::Pclsu => pclsu_image(x, e),
        BaselineMethod::Sunsal => {
            let r = sunsal(x, e, cfg.lambda, Constraints::AncAsc, cfg)?;
            if !r.converged {
                warn!(
                    "SUnSAL stopped after {} iterations (primal {:e}, dual {:e})",
                    r.iterations, r.primal_residual, r.dual_residual
                );
            }
            Ok(r.abundances)
        }
    }
}

/// Alternates the abundance solver and [`blind_update_endmembers`] starting from
/// `e0`, for at most `outer_iter` rounds or until the relative objective change
/// drops below `rel_tol`.
pub fn blind_unmix(
    method: BaselineMethod,
    x: &DMatrix<f64>,
    e0: &DMatrix<f64>,
    cfg: &SolverConfig,
    outer_iter: usize,
    rel_tol: f64,
) -> Result<BaselineResult> {
    let mut e = e0.clone();
    let mut y = unmix(method, x, &e, cfg)?;
    let mut prev = (x - &e * &y).norm_squared();
    let mut rounds = 0;
    for _ in 0..outer_iter {
        rounds += 1;
        let e_new = blind_update_endmembers(x, &y, &e)?;
        if (0..e_new.ncols()).any(|j| e_new.column(j).iter().all(|&v| v == 0.0)) {
            warn!("blind update produced an empty endmember; keeping the previous estimate");
            break;
        }
        e = e_new;
        y = unmix(method, x, &e, cfg)?;
        let obj = (x - &e * &y).norm_squared();
        let change = (prev - obj).abs() / prev.max(f64::MIN_POSITIVE);
        prev = obj;
        if change < rel_tol {
            break;
        }
    }
    Ok(BaselineResult {
        abundances: y,
        endmembers: e,
        outer_iterations: rounds,
    })
}
