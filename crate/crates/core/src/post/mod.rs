//! Endmember recovery from abundances and the evaluation metrics
//! (aRMSE, SAD, aSAD) with permutation matching.

mod hungarian;
mod report;

use std::f64::consts::FRAC_PI_2;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::nonneg_endmembers;
use crate::error::{Error, Result};
use crate::types::EndmemberMatrix;

pub use hungarian::min_cost_assignment;
pub use report::{MeanStd, MonteCarloReport};

/// Recovers nonnegative endmembers from known abundances:
/// `min_E ‖X − E Y‖²_F s.t. E ≥ 0` for `X` (`bands×pixels`) and `Y` (`classes×pixels`).
///
/// Only meant for visualizing and scoring the spectra implied by an abundance
/// estimate. A rank-deficient `Y` falls back to a small ridge term.
pub fn recover_endmembers(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<EndmemberMatrix> {
    if x.ncols() != y.ncols() {
        return Err(Error::dim(format!(
            "X has {} pixels but Y has {}",
            x.ncols(),
            y.ncols()
        )));
    }
    let gram = y * y.transpose();
    let eig = gram.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let ridge = if max <= 0.0 || min <= 1e-12 * max {
        let r = 1e-8 * max.max(1.0);
        warn!("abundance matrix is rank deficient (eigenvalue ratio {:e}); using ridge {r:e}", min / max.max(f64::MIN_POSITIVE));
        r
    } else {
        0.0
    };
    let e = nonneg_endmembers(x, y, ridge)?;
    if let Some(j) = (0..e.ncols()).find(|&j| e.column(j).iter().all(|&v| v == 0.0)) {
        return Err(Error::Extraction(format!(
            "class {j} recovers an all-zero spectrum; its abundances explain none of the data"
        )));
    }
    EndmemberMatrix::new(e, None)
}

/// Mean over pixels of the per-pixel abundance RMSE. Inputs are `classes×pixels`.
pub fn armse(y_true: &DMatrix<f64>, y_est: &DMatrix<f64>) -> Result<f64> {
    if y_true.shape() != y_est.shape() {
        return Err(Error::dim(format!(
            "abundance shapes differ: {:?} vs {:?}",
            y_true.shape(),
            y_est.shape()
        )));
    }
    let (c, n) = y_true.shape();
    if n == 0 || c == 0 {
        return Err(Error::dim("empty abundance matrix"));
    }
    let total: f64 = (0..n)
        .map(|i| {
            let sq: f64 = y_true
                .column(i)
                .iter()
                .zip(y_est.column(i).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (sq / c as f64).sqrt()
        })
        .sum();
    Ok(total / n as f64)
}

/// Spectral angle in radians.
pub fn sad(e: &[f64], e_hat: &[f64]) -> Result<f64> {
    if e.len() != e_hat.len() {
        return Err(Error::dim("spectra differ in length"));
    }
    let dot: f64 = e.iter().zip(e_hat).map(|(a, b)| a * b).sum();
    let na = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = e_hat.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::config("spectral angle of a zero vector is undefined"));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0).acos())
}

/// Expresses an angle as a percentage of a right angle (the secondary reporting unit).
pub fn sad_percent(radians: f64) -> f64 {
    100.0 * radians / FRAC_PI_2
}

/// Matched mean spectral angle between two `bands×classes` endmember sets.
#[derive(Debug, Clone, PartialEq)]
pub struct AsadResult {
    pub asad: f64,
    /// Angle per true class, after matching.
    pub per_class: Vec<f64>,
    /// `permutation[j]` is the estimated column matched to true column `j`.
    pub permutation: Vec<usize>,
}

pub fn asad(e_true: &DMatrix<f64>, e_est: &DMatrix<f64>) -> Result<AsadResult> {
    if e_true.shape() != e_est.shape() {
        return Err(Error::dim(format!(
            "endmember shapes differ: {:?} vs {:?}",
            e_true.shape(),
            e_est.shape()
        )));
    }
    let c = e_true.ncols();
    let mut cost = vec![vec![0.0; c]; c];
    for (i, row) in cost.iter_mut().enumerate() {
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = sad(e_true.column(i).as_slice(), e_est.column(j).as_slice())?;
        }
    }
    let permutation = min_cost_assignment(&cost);
    let per_class: Vec<f64> = (0..c).map(|j| cost[j][permutation[j]]).collect();
    let asad = per_class.iter().sum::<f64>() / c as f64;
    Ok(AsadResult {
        asad,
        per_class,
        permutation,
    })
}

/// Reorders the rows of `y_est` (`classes×pixels`) to best match `y_true`,
/// minimizing the total per-class RMSE. Returns the permuted matrix and the
/// permutation (`permutation[j]` = estimated row placed at position `j`).
pub fn align_abundances(
    y_true: &DMatrix<f64>,
    y_est: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    if y_true.shape() != y_est.shape() {
        return Err(Error::dim(format!(
            "abundance shapes differ: {:?} vs {:?}",
            y_true.shape(),
            y_est.shape()
        )));
    }
    let (c, n) = y_true.shape();
    let cost: Vec<Vec<f64>> = (0..c)
        .map(|i| {
            (0..c)
                .map(|j| ((y_true.row(i) - y_est.row(j)).norm_squared() / n.max(1) as f64).sqrt())
                .collect()
        })
        .collect();
    let permutation = min_cost_assignment(&cost);
    Ok((permute_rows(y_est, &permutation), permutation))
}

pub fn permute_rows(m: &DMatrix<f64>, permutation: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(permutation[i], j)])
}

pub fn permute_columns(m: &DMatrix<f64>, permutation: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, permutation[j])])
}

/// Scores of one unmixing result against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub armse: f64,
    /// Radians, one per true class; empty when no endmembers were scored.
    pub sad_per_class: Vec<f64>,
    pub asad: Option<f64>,
    /// `permutation[j]` = estimated class matched to true class `j`.
    pub permutation: Vec<usize>,
}

/// Aligns abundances, scores them, and optionally scores endmembers with the
/// same class permutation.
pub fn evaluate(
    y_true: &DMatrix<f64>,
    y_est: &DMatrix<f64>,
    endmembers: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
) -> Result<EvalReport> {
    let (aligned, permutation) = align_abundances(y_true, y_est)?;
    let armse = armse(y_true, &aligned)?;
    let (sad_per_class, asad) = match endmembers {
        Some((e_true, e_est)) => {
            if e_true.shape() != e_est.shape() || e_true.ncols() != y_true.nrows() {
                return Err(Error::dim("endmember matrices do not match the class count"));
            }
            let e_est = permute_columns(e_est, &permutation);
            let per: Vec<f64> = (0..e_true.ncols())
                .map(|j| sad(e_true.column(j).as_slice(), e_est.column(j).as_slice()))
                .collect::<Result<_>>()?;
            let mean = per.iter().sum::<f64>() / per.len() as f64;
            (per, Some(mean))
        }
        None => (vec![], None),
    };
    Ok(EvalReport {
        armse,
        sad_per_class,
        asad,
        permutation,
    })
}

/// Mean and (population) standard deviation of a sample.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Abundances as a `classes×pixels` matrix from per-pixel rows.
pub fn rows_to_class_matrix(rows: &[DVector<f64>]) -> DMatrix<f64> {
    DMatrix::from_columns(rows)
}
