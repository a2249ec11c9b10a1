use egunet::bundles::{
    estimate_dimension, estimate_noise, extract_bundles, hysime, kmeans, partition_blocks, vca,
    BundleConfig,
};
use egunet::data::{generate_scene, Scene, SceneSpec};
use egunet::post::sad;
use egunet::rng::rng_from_seed;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// `bands×n` data in the span of `rank` random spectra plus white noise at `snr_db`.
fn subspace_data(bands: usize, n: usize, rank: usize, snr_db: Option<f64>, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    let basis = DMatrix::from_fn(bands, rank, |_, _| rng.random_range(0.0..1.0));
    let coef = DMatrix::from_fn(rank, n, |_, _| rng.random_range(0.0..1.0));
    let signal = basis * coef;
    match snr_db {
        None => signal,
        Some(snr) => {
            let power = signal.norm_squared() / (bands * n) as f64;
            let sigma = (power / 10f64.powf(snr / 10.0)).sqrt();
            let normal = Normal::new(0.0, sigma).unwrap();
            signal.map(|v| v + normal.sample(&mut rng))
        }
    }
}

/// Columns of `e` mixed with random simplex weights; the first `c` pixels are pure.
fn simplex_with_pure_pixels(e: &DMatrix<f64>, n: usize, seed: u64) -> DMatrix<f64> {
    let c = e.ncols();
    let mut rng = rng_from_seed(seed);
    let mut y = DMatrix::<f64>::zeros(c, n);
    for i in 0..n {
        if i < c {
            y[(i, i)] = 1.0;
        } else {
            // Stay away from the vertices so the pure pixels are the unique extremes.
            let w: Vec<f64> = (0..c).map(|_| rng.random_range(0.2..1.0)).collect();
            let s: f64 = w.iter().sum();
            for j in 0..c {
                y[(j, i)] = w[j] / s;
            }
        }
    }
    e * y
}

#[test]
fn hysime_finds_four_dimensional_signal_at_40_db() {
    let y = subspace_data(50, 2000, 4, Some(40.0), 1);
    assert_eq!(estimate_dimension(&y).unwrap(), 4);
}

#[test]
fn hysime_on_white_noise_finds_at_most_one() {
    let mut rng = rng_from_seed(2);
    let normal = Normal::new(0.0, 0.1).unwrap();
    let y = DMatrix::from_fn(30, 1500, |_, _| normal.sample(&mut rng));
    assert!(estimate_dimension(&y).unwrap() <= 1);
}

#[test]
fn hysime_on_repeated_spectrum_finds_one() {
    let y = subspace_data(30, 1500, 1, Some(50.0), 3);
    let w = estimate_noise(&y).unwrap();
    let r = hysime(&y, &w).unwrap();
    assert_eq!(r.dimension, 1);
    assert_eq!(r.basis.shape(), (30, 1));
}

#[test]
fn vca_recovers_pure_pixels_of_a_noiseless_simplex() {
    let mut rng = rng_from_seed(4);
    let e = DMatrix::from_fn(40, 3, |_, _| rng.random_range(0.05..1.0));
    let y = simplex_with_pure_pixels(&e, 300, 5);
    let mut sets = Vec::new();
    for seed in [6, 7] {
        let r = vca(&y, 3, &mut rng_from_seed(seed)).unwrap();
        let mut idx = r.indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2]);
        for (k, &i) in r.indices.iter().enumerate() {
            let angle = sad(r.endmembers.column(k).as_slice(), e.column(i).as_slice()).unwrap();
            assert!(angle < 1e-6);
        }
        sets.push(idx);
    }
    assert_eq!(sets[0], sets[1]);
}

#[test]
fn vca_single_endmember_is_the_largest_pixel() {
    let y = subspace_data(20, 100, 3, None, 8);
    let r = vca(&y, 1, &mut rng_from_seed(9)).unwrap();
    let largest = (0..y.ncols())
        .max_by(|&a, &b| y.column(a).norm().total_cmp(&y.column(b).norm()))
        .unwrap();
    assert_eq!(r.indices, vec![largest]);
}

#[test]
fn vca_rejects_more_endmembers_than_rank() {
    let y = subspace_data(20, 100, 2, None, 10);
    assert!(vca(&y, 3, &mut rng_from_seed(11)).is_err());
}

#[test]
fn kmeans_examples() {
    let mut rng = rng_from_seed(12);
    let points = DMatrix::from_fn(3, 5, |_, _| rng.random_range(0.0..1.0));
    let r = kmeans(&points, 5, &mut rng, 50).unwrap();
    assert_eq!(r.inertia(), 0.0);
    let mut assigned = r.assignment.clone();
    assigned.sort_unstable();
    assert_eq!(assigned, vec![0, 1, 2, 3, 4]);

    // Two blobs far apart.
    let normal = Normal::new(0.0, 0.05).unwrap();
    let blobs = DMatrix::from_fn(2, 60, |d, i| {
        let centre = if i < 30 { 0.0 } else { 5.0 };
        centre + d as f64 + normal.sample(&mut rng)
    });
    let r = kmeans(&blobs, 2, &mut rng, 100).unwrap();
    assert!(r.converged);
    assert!(r.assignment[..30].iter().all(|&a| a == r.assignment[0]));
    assert!(r.assignment[30..].iter().all(|&a| a == r.assignment[30]));
    assert_ne!(r.assignment[0], r.assignment[30]);
    assert!(r.inertia_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));

    assert!(kmeans(&blobs, 61, &mut rng, 10).is_err());
}

/// Three materials, noiseless, with enough pure pixels that every block's
/// extreme pixels are pure. With sparse pure pixels or 30 dB noise, blocks
/// whose materials only appear mixed contribute mixed-pixel clusters.
fn scene_3(seed: u64) -> Scene {
    let spec = SceneSpec {
        height: 30,
        width: 30,
        bands: 50,
        classes: 3,
        pure_pixels: 30,
        snr_db: None,
        impulse_fraction: 0.0,
        ..Default::default()
    };
    generate_scene(&spec, seed).unwrap()
}

#[test]
fn extracted_clusters_are_close_to_true_materials() {
    let scene = scene_3(13);
    let cfg = BundleConfig {
        classes: Some(3),
        ..Default::default()
    };
    let b = extract_bundles(&scene.cube, &cfg, 14).unwrap();
    let e = &scene.endmembers.matrix;
    for k in 0..b.cluster_means.ncols() {
        let best = (0..3)
            .map(|j| sad(b.cluster_means.column(k).as_slice(), e.column(j).as_slice()).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!(best < 0.1, "cluster {k} is {best} rad from every material");
    }
}

#[test]
fn bundle_bookkeeping_and_provenance() {
    let scene = scene_3(15);
    let cfg = BundleConfig {
        classes: Some(3),
        ..Default::default()
    };
    let b = extract_bundles(&scene.cube, &cfg, 16).unwrap();
    b.validate().unwrap();
    let n = scene.cube.pixels();
    assert!(b.len() >= 3 && b.len() <= (0.2 * n as f64).round() as usize);
    assert_eq!(b.len(), b.cluster_means.ncols());
    for (i, &p) in b.source_indices.iter().enumerate() {
        assert_eq!(b.signatures.column(i).as_slice(), scene.cube.pixel(p));
    }
    for col in b.labels.column_iter() {
        assert!(col.iter().all(|&v| v >= 0.0));
        assert!((col.sum() - 1.0).abs() < 1e-6);
    }
    assert_eq!(b, extract_bundles(&scene.cube, &cfg, 16).unwrap());
}

#[test]
fn too_few_candidates_is_an_error() {
    let scene = scene_3(17);
    let cfg = BundleConfig {
        classes: Some(3),
        block_classes: Some(1),
        block_size: Some(30),
        overlap: Some(0),
        ..Default::default()
    };
    assert!(extract_bundles(&scene.cube, &cfg, 18).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn partition_covers_every_pixel(
        h in 1usize..60,
        w in 1usize..60,
        frac in 0.1f64..1.0,
        ov in 0.0f64..0.9,
    ) {
        let block = ((frac * h.min(w) as f64).ceil() as usize).max(1);
        let overlap = ((ov * block as f64) as usize).min(block - 1);
        let p = partition_blocks(h, w, block, overlap).unwrap();
        let mut covered = vec![false; h * w];
        for win in &p.blocks {
            prop_assert!(win.row + win.height <= h && win.col + win.width <= w);
            for r in win.row..win.row + win.height {
                for c in win.col..win.col + win.width {
                    covered[r * w + c] = true;
                }
            }
        }
        prop_assert!(covered.iter().all(|&c| c));
    }
}
