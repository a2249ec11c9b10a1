//! Metric oracles: the library metrics against direct, exhaustive
//! reference computations on random instances.

use egunet::post::{armse, asad, min_cost_assignment, sad};
use egunet::rng::rng_from_seed;
use nalgebra::DMatrix;
use rand::Rng;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..n {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

fn ref_armse(y: &DMatrix<f64>, y_hat: &DMatrix<f64>) -> f64 {
    let (c, n) = y.shape();
    let mut total = 0.0;
    for i in 0..n {
        let mut sq = 0.0;
        for j in 0..c {
            sq += (y[(j, i)] - y_hat[(j, i)]).powi(2);
        }
        total += (sq / c as f64).sqrt();
    }
    total / n as f64
}

fn ref_sad(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let cos: f64 = a.iter().zip(b).map(|(x, y)| (x / na) * (y / nb)).sum();
    cos.clamp(-1.0, 1.0).acos()
}

/// Smallest mean SAD over every column matching.
fn ref_asad(e: &DMatrix<f64>, e_hat: &DMatrix<f64>) -> f64 {
    let c = e.ncols();
    permutations(c)
        .iter()
        .map(|p| {
            (0..c)
                .map(|j| ref_sad(e.column(j).as_slice(), e_hat.column(p[j]).as_slice()))
                .sum::<f64>()
                / c as f64
        })
        .fold(f64::INFINITY, f64::min)
}

/// Largest deviation of armse, sad and asad from their references over `cases` instances.
pub fn metric_deviation(cases: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..cases {
        let mut rng = rng_from_seed(seed);
        let c = rng.random_range(1..=5);
        let n = rng.random_range(1..=40);
        let b = rng.random_range(2..=30);
        let y = DMatrix::from_fn(c, n, |_, _| rng.random_range(0.0..1.0));
        let y_hat = DMatrix::from_fn(c, n, |_, _| rng.random_range(0.0..1.0));
        worst = worst.max((armse(&y, &y_hat).unwrap() - ref_armse(&y, &y_hat)).abs());
        let e = DMatrix::from_fn(b, c, |_, _| rng.random_range(0.01..1.0));
        let e_hat = DMatrix::from_fn(b, c, |_, _| rng.random_range(0.01..1.0));
        for j in 0..c {
            let (u, v) = (e.column(j), e_hat.column(j));
            worst = worst.max((sad(u.as_slice(), v.as_slice()).unwrap() - ref_sad(u.as_slice(), v.as_slice())).abs());
        }
        worst = worst.max((asad(&e, &e_hat).unwrap().asad - ref_asad(&e, &e_hat)).abs());
    }
    worst
}

/// Largest gap between the assignment cost and the brute-force optimum, C ≤ 5.
pub fn hungarian_gap(cases: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..cases {
        let mut rng = rng_from_seed(1000 + seed);
        let c = rng.random_range(1..=5);
        // Every fourth case uses small integers so ties are common.
        let cost: Vec<Vec<f64>> = (0..c)
            .map(|_| {
                (0..c)
                    .map(|_| if seed % 4 == 0 { rng.random_range(0..3) as f64 } else { rng.random_range(0.0..10.0) })
                    .collect()
            })
            .collect();
        let p = min_cost_assignment(&cost);
        let mut sorted = p.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..c).collect::<Vec<_>>(), "not a permutation");
        let got: f64 = (0..c).map(|i| cost[i][p[i]]).sum();
        let best = permutations(c)
            .iter()
            .map(|q| (0..c).map(|i| cost[i][q[i]]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(got - best);
    }
    worst
}
