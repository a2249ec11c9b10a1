//! Lawson–Hanson active-set nonnegative least squares.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct NnlsOptions {
    /// KKT tolerance relative to the problem scale.
    pub tol: f64,
    /// Cap on outer (variable-adding) iterations; `None` picks `30·n + 50`.
    pub max_iter: Option<usize>,
}

impl Default for NnlsOptions {
    fn default() -> Self {
        NnlsOptions {
            tol: 1e-12,
            max_iter: None,
        }
    }
}

/// Solution of an NNLS problem.
#[derive(Debug, Clone)]
pub struct NnlsSolution {
    pub x: DVector<f64>,
    /// Largest positive component of the dual (negative gradient) on the zero set.
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// `min ‖A x − b‖² s.t. x ≥ 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    nnls_with(a, b, NnlsOptions::default()).map(|s| s.x)
}

pub fn nnls_with(a: &DMatrix<f64>, b: &DVector<f64>, opts: NnlsOptions) -> Result<NnlsSolution> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(Error::dim("nnls needs a non-empty matrix"));
    }
    if b.len() != m {
        return Err(Error::dim(format!("nnls: A is {m}×{n} but b has {} entries", b.len())));
    }
    let scale = a.norm() * b.norm();
    let problem = Dense { a, b };
    active_set(&problem, n, opts.tol * scale.max(f64::MIN_POSITIVE), opts)
}

/// NNLS given the normal equations `G = AᵀA`, `h = Aᵀb`; efficient when A is tall.
pub fn nnls_gram(g: &DMatrix<f64>, h: &DVector<f64>, opts: NnlsOptions) -> Result<NnlsSolution> {
    let n = g.nrows();
    if n == 0 || g.ncols() != n || h.len() != n {
        return Err(Error::dim("nnls_gram needs a square Gram matrix matching h"));
    }
    let scale = g.norm().sqrt() * h.norm().max(f64::MIN_POSITIVE).sqrt();
    let problem = Gram { g, h };
    active_set(&problem, n, opts.tol * scale.max(f64::MIN_POSITIVE), opts)
}

trait LeastSquares {
    /// `Aᵀ(b − A x)`.
    fn dual(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Unconstrained least squares restricted to the `passive` columns.
    fn solve_passive(&self, passive: &[usize]) -> DVector<f64>;
}

struct Dense<'a> {
    a: &'a DMatrix<f64>,
    b: &'a DVector<f64>,
}

impl LeastSquares for Dense<'_> {
    fn dual(&self, x: &DVector<f64>) -> DVector<f64> {
        self.a.tr_mul(&(self.b - self.a * x))
    }

    fn solve_passive(&self, passive: &[usize]) -> DVector<f64> {
        let sub = self.a.select_columns(passive);
        let svd = sub.svd(true, true);
        let eps = 1e-14 * svd.singular_values.max();
        svd.solve(self.b, eps).expect("svd with both factors")
    }
}

struct Gram<'a> {
    g: &'a DMatrix<f64>,
    h: &'a DVector<f64>,
}

impl LeastSquares for Gram<'_> {
    fn dual(&self, x: &DVector<f64>) -> DVector<f64> {
        self.h - self.g * x
    }

    fn solve_passive(&self, passive: &[usize]) -> DVector<f64> {
        let sub = self.g.select_rows(passive).select_columns(passive);
        let rhs = DVector::from_iterator(passive.len(), passive.iter().map(|&i| self.h[i]));
        if let Some(ch) = sub.clone().cholesky() {
            return ch.solve(&rhs);
        }
        let svd = sub.svd(true, true);
        let eps = 1e-14 * svd.singular_values.max();
        svd.solve(&rhs, eps).expect("svd with both factors")
    }
}

fn active_set(
    problem: &impl LeastSquares,
    n: usize,
    tol: f64,
    opts: NnlsOptions,
) -> Result<NnlsSolution> {
    let max_iter = opts.max_iter.unwrap_or(30 * n + 50);
    let mut x = DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let mut blocked = vec![false; n];
    let mut w = problem.dual(&x);
    let mut iterations = 0;

    loop {
        let candidate = (0..n)
            .filter(|&j| !passive[j] && !blocked[j])
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let j = match candidate {
            Some(j) if w[j] > tol => j,
            _ => break,
        };
        if iterations >= max_iter {
            return Err(Error::Solver {
                iterations,
                residual: w[j],
            });
        }
        iterations += 1;
        passive[j] = true;

        let mut first_inner = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let s_p = problem.solve_passive(&idx);
            let mut s = DVector::<f64>::zeros(n);
            for (k, &i) in idx.iter().enumerate() {
                s[i] = s_p[k];
            }
            if first_inner && s[j] <= 0.0 {
                // the entering variable cannot move; numerical dependence
                passive[j] = false;
                blocked[j] = true;
                break;
            }
            first_inner = false;
            if idx.iter().all(|&i| s[i] > 0.0) {
                x = s;
                blocked.iter_mut().for_each(|b| *b = false);
                break;
            }
            let alpha = idx
                .iter()
                .filter(|&&i| s[i] <= 0.0)
                .map(|&i| x[i] / (x[i] - s[i]))
                .fold(f64::INFINITY, f64::min);
            x += (&s - &x) * alpha;
            for &i in &idx {
                if x[i] <= f64::EPSILON * x.amax().max(1.0) {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
        w = problem.dual(&x);
    }

    let kkt_residual = (0..n)
        .filter(|&j| !passive[j])
        .map(|j| w[j])
        .fold(0.0, f64::max);
    Ok(NnlsSolution {
        x,
        kkt_residual,
        iterations,
    })
}
