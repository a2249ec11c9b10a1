//! Sparse unmixing by variable splitting and augmented Lagrangian (ADMM).
//!
//! Solves `min ½‖X − E Y‖²_F + λ‖Y‖₁` with optional nonnegativity and
//! sum-to-one constraints via the split `Y = V`:
//! the `Y`-step is a (constrained) ridge solve, the `V`-step a soft threshold.

use nalgebra::{DMatrix, DVector};

use super::{Constraints, SolverConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SunsalResult {
    /// `classes×pixels`.
    pub abundances: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Penalty parameter at exit (after residual balancing).
    pub rho: f64,
}

struct Factors {
    /// `(EᵀE + ρI)⁻¹`, or its sum-to-one-projected form.
    solve: DMatrix<f64>,
    /// Affine offset enforcing `1ᵀY = 1` (zero without the ASC).
    offset: DVector<f64>,
}

fn factor(ete: &DMatrix<f64>, rho: f64, asc: bool) -> Result<Factors> {
    let c = ete.nrows();
    let mut m = ete.clone();
    for k in 0..c {
        m[(k, k)] += rho;
    }
    let inv = m
        .try_inverse()
        .ok_or_else(|| Error::NonFinite("SUnSAL system matrix is singular".into()))?;
    if !asc {
        return Ok(Factors {
            solve: inv,
            offset: DVector::zeros(c),
        });
    }
    let ones = DVector::<f64>::from_element(c, 1.0);
    let if1 = &inv * &ones;
    let denom = ones.dot(&if1);
    let aux = if1 / denom;
    let solve = &inv - &aux * (ones.transpose() * &inv);
    Ok(Factors { solve, offset: aux })
}

pub fn sunsal(
    x: &DMatrix<f64>,
    e: &DMatrix<f64>,
    lambda: f64,
    constraints: Constraints,
    cfg: &SolverConfig,
) -> Result<SunsalResult> {
    cfg.validate()?;
    if !(lambda >= 0.0) {
        return Err(Error::config("sparsity weight must be nonnegative"));
    }
    if x.nrows() != e.nrows() {
        return Err(Error::dim(format!(
            "X has {} bands but E has {}",
            x.nrows(),
            e.nrows()
        )));
    }
    let asc = constraints == Constraints::AncAsc;
    let anc = constraints != Constraints::None;
    let n = x.ncols();
    let c = e.ncols();
    let ete = e.tr_mul(e);
    let etx = e.tr_mul(x);

    let mut rho = cfg.admm_rho;
    let mut f = factor(&ete, rho, asc)?;
    let y_step = |f: &Factors, rhs: &DMatrix<f64>| {
        let mut u = &f.solve * rhs;
        for mut col in u.column_iter_mut() {
            col += &f.offset;
        }
        u
    };

    let mut u = y_step(&f, &etx);
    let mut v = u.clone();
    let mut d = DMatrix::<f64>::zeros(c, n);
    let mut primal = f64::INFINITY;
    let mut dual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for k in 1..=cfg.max_iter {
        iterations = k;
        let v_prev = v.clone();
        let thresh = lambda / rho;
        v = &u - &d;
        v.apply(|val| {
            let mut s = val.signum() * (val.abs() - thresh).max(0.0);
            if anc {
                s = s.max(0.0);
            }
            *val = s;
        });
        let rhs = &etx + (&v + &d) * rho;
        u = y_step(&f, &rhs);
        d -= &u - &v;

        primal = (&u - &v).norm();
        dual = rho * (&v - &v_prev).norm();
        if primal < cfg.tol && dual < cfg.tol {
            converged = true;
            break;
        }
        if k % 10 == 0 {
            if primal > 10.0 * dual {
                rho *= 2.0;
                d /= 2.0;
                f = factor(&ete, rho, asc)?;
            } else if dual > 10.0 * primal {
                rho /= 2.0;
                d *= 2.0;
                f = factor(&ete, rho, asc)?;
            }
        }
    }

    // V carries the sparsity and nonnegativity exactly; with the sum-to-one
    // constraint its columns are rescaled onto the simplex.
    let mut abundances = v;
    if asc {
        for mut col in abundances.column_iter_mut() {
            let s = col.sum();
            if s > 0.0 {
                col /= s;
            } else {
                col.fill(1.0 / c as f64);
            }
        }
    }
    Ok(SunsalResult {
        abundances,
        iterations,
        converged,
        primal_residual: primal,
        dual_residual: dual,
        rho,
    })
}
