//! Vertex component analysis: picks the pixels at the vertices of the data
//! simplex by repeated projection onto directions orthogonal to the vertices
//! found so far.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct VcaResult {
    /// Column indices of the selected pixels, in extraction order.
    pub indices: Vec<usize>,
    /// `bands×C`, copies of the selected pixels.
    pub endmembers: DMatrix<f64>,
    /// Signal-to-noise estimate (dB) used to choose the projection.
    pub snr_db: f64,
}

fn top_left_singular(m: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    // Eigenvectors of the (small, bands×bands) correlation, largest first.
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    eig.eigenvectors.select_columns(&order[..d])
}

/// Numerical rank of `y`, relative to its largest singular value.
pub fn numerical_rank(y: &DMatrix<f64>) -> usize {
    let s = y.singular_values();
    let max = s.max();
    if max == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > 1e-10 * max).count()
}

/// Extracts `c` endmembers from `y` (`bands×pixels`).
pub fn vca<R: Rng + ?Sized>(y: &DMatrix<f64>, c: usize, rng: &mut R) -> Result<VcaResult> {
    let (l, n) = y.shape();
    if c == 0 {
        return Err(Error::config("VCA needs at least one endmember"));
    }
    if c > l.min(n) {
        return Err(Error::config(format!(
            "cannot extract {c} endmembers from {n} pixels with {l} bands"
        )));
    }
    let rank = numerical_rank(y);
    if c > rank {
        return Err(Error::DegenerateSimplex { requested: c, rank });
    }
    let nf = n as f64;

    if c == 1 {
        let u = top_left_singular(&(y * y.transpose()), 1);
        let proj = u.transpose() * y;
        let idx = argmax_abs(proj.row(0).iter().copied());
        return Ok(VcaResult {
            indices: vec![idx],
            endmembers: y.select_columns(&[idx]),
            snr_db: f64::INFINITY,
        });
    }

    let mean = y.column_mean();
    let mut centered = y.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let ud = top_left_singular(&(&centered * centered.transpose() / nf), c);
    let xp = ud.transpose() * &centered;
    let p_y = y.norm_squared() / nf;
    let p_x = xp.norm_squared() / nf + mean.norm_squared();
    let denom = p_y - p_x;
    let snr_db = if denom <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * ((p_x - c as f64 / l as f64 * p_y) / denom).log10()
    };
    let snr_th = 15.0 + 10.0 * (c as f64).log10();

    // `proj` is the c×n matrix searched for extreme columns.
    let proj = if snr_db.is_nan() || snr_db > snr_th {
        let ud = top_left_singular(&(y * y.transpose() / nf), c);
        let x = ud.transpose() * y;
        let u = x.column_mean();
        let mut p = x;
        for mut col in p.column_iter_mut() {
            let s = col.dot(&u);
            col /= s;
        }
        p
    } else {
        let d = c - 1;
        let x = xp.rows(0, d).into_owned();
        let cmax = x.column_iter().map(|col| col.norm()).fold(0.0, f64::max);
        let mut p = DMatrix::<f64>::zeros(c, n);
        p.view_mut((0, 0), (d, n)).copy_from(&x);
        p.row_mut(d).fill(cmax);
        p
    };

    let mut indices = Vec::with_capacity(c);
    let mut last = DVector::<f64>::zeros(c);
    last[c - 1] = 1.0;
    for i in 0..c {
        let constraints: Vec<DVector<f64>> = if i == 0 {
            vec![last.clone()]
        } else {
            indices.iter().map(|&k| proj.column(k).into_owned()).collect()
        };
        let ortho = gram_schmidt(&constraints);
        let mut f = DVector::<f64>::zeros(c);
        for _ in 0..8 {
            let w = DVector::<f64>::from_fn(c, |_, _| rng.sample(StandardNormal));
            f = w;
            for q in &ortho {
                let a = q.dot(&f);
                f -= q * a;
            }
            if f.norm() > 1e-12 {
                break;
            }
        }
        let norm = f.norm();
        if !(norm > 1e-12) {
            return Err(Error::DegenerateSimplex { requested: c, rank: i });
        }
        f /= norm;
        let v = f.transpose() * &proj;
        let idx = argmax_abs(v.iter().copied());
        indices.push(idx);
    }
    Ok(VcaResult {
        endmembers: y.select_columns(&indices),
        indices,
        snr_db,
    })
}

fn argmax_abs(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v.abs() > best_v {
            best_v = v.abs();
            best = i;
        }
    }
    best
}

/// Orthonormal basis of the span of `vectors` (zero directions dropped).
fn gram_schmidt(vectors: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::new();
    for v in vectors {
        let mut u = v.clone();
        for _ in 0..2 {
            for q in &out {
                let a = q.dot(&u);
                u -= q * a;
            }
        }
        let norm = u.norm();
        if norm > 1e-10 * v.norm().max(f64::MIN_POSITIVE) {
            out.push(u / norm);
        }
    }
    out
}
