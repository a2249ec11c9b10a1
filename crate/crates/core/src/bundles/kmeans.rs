//! Lloyd's k-means with k-means++ seeding.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// `dims×k`.
    pub centers: DMatrix<f64>,
    pub assignment: Vec<usize>,
    /// Inertia after each center update.
    pub inertia_history: Vec<f64>,
    pub converged: bool,
}

impl KMeansResult {
    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }
}

fn sq_dist(points: &DMatrix<f64>, i: usize, centers: &DMatrix<f64>, j: usize) -> f64 {
    points
        .column(i)
        .iter()
        .zip(centers.column(j).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Clusters the columns of `points` (`dims×m`) into `k` groups.
pub fn kmeans<R: Rng + ?Sized>(
    points: &DMatrix<f64>,
    k: usize,
    rng: &mut R,
    max_iter: usize,
) -> Result<KMeansResult> {
    let m = points.ncols();
    if k == 0 || k > m {
        return Err(Error::config(format!("k-means needs 1 ≤ k ≤ {m}, got {k}")));
    }
    let mut centers = seed_plus_plus(points, k, rng);
    let mut assignment = vec![usize::MAX; m];
    let mut history = Vec::new();
    let mut converged = false;

    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        for i in 0..m {
            let best = nearest(points, i, &centers).0;
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        if !changed {
            converged = true;
            break;
        }
        reseed_empty(points, &mut centers, &mut assignment);
        update_centers(points, &mut centers, &assignment);
        history.push(inertia(points, &centers, &assignment));
    }
    if history.is_empty() {
        history.push(inertia(points, &centers, &assignment));
    }
    Ok(KMeansResult {
        centers,
        assignment,
        inertia_history: history,
        converged,
    })
}

fn nearest(points: &DMatrix<f64>, i: usize, centers: &DMatrix<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for j in 0..centers.ncols() {
        let d = sq_dist(points, i, centers, j);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn seed_plus_plus<R: Rng + ?Sized>(points: &DMatrix<f64>, k: usize, rng: &mut R) -> DMatrix<f64> {
    let m = points.ncols();
    let mut centers = DMatrix::<f64>::zeros(points.nrows(), k);
    let first = rng.random_range(0..m);
    centers.set_column(0, &points.column(first));
    let mut d2: Vec<f64> = (0..m).map(|i| sq_dist(points, i, &centers, 0)).collect();
    for j in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = m - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            if d2[pick] == 0.0 {
                pick = (0..m).max_by(|&a, &b| d2[a].total_cmp(&d2[b])).unwrap_or(0);
            }
            pick
        } else {
            rng.random_range(0..m)
        };
        centers.set_column(j, &points.column(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points, i, &centers, j));
        }
    }
    centers
}

/// Moves the point farthest from its center into each empty cluster.
fn reseed_empty(points: &DMatrix<f64>, centers: &mut DMatrix<f64>, assignment: &mut [usize]) {
    let k = centers.ncols();
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignment.iter() {
            counts[a] += 1;
        }
        let Some(empty) = (0..k).find(|&j| counts[j] == 0) else {
            return;
        };
        let far = (0..points.ncols())
            .filter(|&i| counts[assignment[i]] > 1)
            .max_by(|&a, &b| {
                sq_dist(points, a, centers, assignment[a])
                    .total_cmp(&sq_dist(points, b, centers, assignment[b]))
            });
        let Some(far) = far else {
            return;
        };
        centers.set_column(empty, &points.column(far));
        assignment[far] = empty;
    }
}

fn update_centers(points: &DMatrix<f64>, centers: &mut DMatrix<f64>, assignment: &[usize]) {
    let k = centers.ncols();
    let mut sums = DMatrix::<f64>::zeros(points.nrows(), k);
    let mut counts = vec![0usize; k];
    for (i, &a) in assignment.iter().enumerate() {
        let mut col = sums.column_mut(a);
        col += points.column(i);
        counts[a] += 1;
    }
    for j in 0..k {
        if counts[j] > 0 {
            centers.set_column(j, &(sums.column(j) / counts[j] as f64));
        }
    }
}

fn inertia(points: &DMatrix<f64>, centers: &DMatrix<f64>, assignment: &[usize]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, &a)| sq_dist(points, i, centers, a))
        .sum()
}
