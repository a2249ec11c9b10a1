use egunet::bundles::{extract_bundles, BundleConfig};
use egunet::data::{generate_scene, Scene, SceneSpec};
use egunet::egunet::{
    build_network, infer_abundances, load_checkpoint, save_checkpoint, train, Ablation, Network,
    NetworkConfig, TrainConfig, Variant, Widths,
};
use egunet::nn::Mode;
use egunet::rng::rng_from_seed;
use egunet::types::HsiCube;
use egunet::{Error, Tensor};
use rand::Rng;

const SMALL: Widths = Widths {
    encoder: [12, 8],
    decoder: [8, 12, 16],
};

fn config(variant: Variant, ablation: Ablation, bands: usize, classes: usize) -> NetworkConfig {
    NetworkConfig {
        variant,
        bands,
        classes,
        widths: SMALL,
        dropout_keep: 0.9,
        ablation,
    }
}

fn net(variant: Variant, ablation: Ablation, seed: u64) -> Network {
    build_network(config(variant, ablation, 10, 3), &mut rng_from_seed(seed)).unwrap()
}

fn positive(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = rng_from_seed(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(0.05..1.0)).collect()).unwrap()
}

fn rows_are_simplex(t: &Tensor, c: usize, tol: f64) {
    for row in t.data().chunks(c) {
        assert!(row.iter().all(|&v| v >= -1e-12), "negative entry in {row:?}");
        let s: f64 = row.iter().sum();
        assert!((s - 1.0).abs() <= tol, "row sums to {s}");
    }
}

fn small_scene(seed: u64) -> Scene {
    let spec = SceneSpec {
        height: 16,
        width: 16,
        bands: 20,
        classes: 3,
        impulse_fraction: 0.0,
        ..Default::default()
    };
    generate_scene(&spec, seed).unwrap()
}

fn small_train(variant: Variant, ablation: Ablation, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        seed,
        variant,
        ablation,
        widths: SMALL,
        ..Default::default()
    }
}

#[test]
fn sharing_maps_and_parameter_counts() {
    for (variant, shared) in [(Variant::Pw, 4), (Variant::Ss, 2)] {
        let full = net(variant, Ablation::Full, 1);
        assert_eq!(full.sharing_map().len(), shared);
        assert!(net(variant, Ablation::UrOnly, 1).sharing_map().is_empty());
        let extra = full.scalar_count(true, true) - full.scalar_count(false, true);
        let unshared: usize = full.e_net.blocks[..4 - shared]
            .iter()
            .flat_map(|b| b.param_ids())
            .map(|id| full.params.get(id).len())
            .sum();
        assert_eq!(extra, unshared, "{variant}");
    }
    let pw = net(Variant::Pw, Ablation::Full, 1);
    assert_eq!(pw.scalar_count(true, true), pw.scalar_count(false, true));
}

#[test]
fn aliased_blocks_refer_to_the_same_tensors() {
    for variant in [Variant::Pw, Variant::Ss] {
        let mut n = net(variant, Ablation::Full, 2);
        for (e, u) in n.sharing_map() {
            let ids_e = n.e_net.blocks[e].param_ids();
            assert_eq!(ids_e, n.ur_encoder.blocks[u].param_ids());
            // Writing through the E-Net handle is visible from the UR-Net handle.
            let id = ids_e[0];
            n.params.get_mut(id).data_mut()[0] = 123.0;
            let ur_id = n.ur_encoder.blocks[u].param_ids()[0];
            assert_eq!(n.params.get(ur_id).data()[0], 123.0);
        }
    }
}

#[test]
fn e_net_rows_are_simplex_and_uniform_on_average_at_init() {
    // A single Glorot draw can put 0.5+ on one class; uniformity holds for the
    // average over initializations, which is what the symmetric init implies.
    for variant in [Variant::Pw, Variant::Ss] {
        let shape: &[usize] = match variant {
            Variant::Pw => &[9, 10],
            Variant::Ss => &[9, 1, 1, 10],
        };
        let x = positive(shape, 4);
        for mode in [Mode::Train, Mode::Infer] {
            let mut mean = vec![0.0; 9 * 3];
            let seeds = 200;
            for seed in 0..seeds {
                let mut n = net(variant, Ablation::Full, seed);
                let p = n.e_net_forward(&x, mode, &mut rng_from_seed(5)).unwrap();
                rows_are_simplex(&p, 3, 1e-12);
                mean.iter_mut().zip(p.data()).for_each(|(m, v)| *m += v / seeds as f64);
            }
            for &v in &mean {
                assert!((v - 1.0 / 3.0).abs() <= 0.2, "{variant} {mode:?}: {v}");
            }
        }
        let mut n = net(variant, Ablation::Full, 3);
        let wrong = positive(&[9, 11], 6);
        assert!(n.e_net_forward(&wrong, Mode::Infer, &mut rng_from_seed(5)).is_err());
    }
}

#[test]
fn train_and_infer_differ_only_through_dropout_and_batchnorm() {
    let mut cfg = config(Variant::Pw, Ablation::Full, 10, 3);
    cfg.dropout_keep = 1.0;
    let mut n = build_network(cfg, &mut rng_from_seed(7)).unwrap();
    // Fresh running statistics are (0, 1), so a standardized batch looks the same in both modes.
    let mut x = positive(&[200, 10], 8);
    let b = 10;
    for j in 0..b {
        let col: Vec<f64> = x.data().iter().skip(j).step_by(b).copied().collect();
        let (m, v) = (
            col.iter().sum::<f64>() / col.len() as f64,
            col.iter().map(|c| c * c).sum::<f64>() / col.len() as f64,
        );
        let sd = (v - m * m).sqrt();
        for i in 0..200 {
            x.data_mut()[i * b + j] = (x.data()[i * b + j] - m) / sd;
        }
    }
    let infer = n.e_net_forward(&x, Mode::Infer, &mut rng_from_seed(9)).unwrap();
    let train = n.e_net_forward(&x, Mode::Train, &mut rng_from_seed(9)).unwrap();
    // Later BN layers see non-standardized activations, so only closeness is expected.
    let gap = infer.data().iter().zip(train.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap < 0.2, "gap {gap}");
    // With dropout on, train mode is random and infer mode is not.
    let mut d = net(Variant::Pw, Ablation::Full, 7);
    let a = d.e_net_forward(&x, Mode::Infer, &mut rng_from_seed(1)).unwrap();
    let b2 = d.e_net_forward(&x, Mode::Infer, &mut rng_from_seed(2)).unwrap();
    assert_eq!(a, b2);
    let t1 = d.e_net_forward(&x, Mode::Train, &mut rng_from_seed(1)).unwrap();
    let t2 = d.e_net_forward(&x, Mode::Train, &mut rng_from_seed(2)).unwrap();
    assert_ne!(t1, t2);
}

#[test]
fn ur_net_outputs_satisfy_their_ranges() {
    for variant in [Variant::Pw, Variant::Ss] {
        let mut n = net(variant, Ablation::Full, 10);
        let shape: &[usize] = match variant {
            Variant::Pw => &[20, 10],
            Variant::Ss => &[1, 5, 4, 10],
        };
        let x = positive(shape, 11);
        let (a, x_hat) = n.ur_net_forward(&x, Mode::Train, &mut rng_from_seed(12)).unwrap();
        rows_are_simplex(&a, 3, 1e-12);
        assert_eq!(x_hat.shape(), x.shape());
        assert!(x_hat.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
    let mut ss = net(Variant::Ss, Ablation::Full, 10);
    let two = positive(&[2, 3, 3, 10], 13);
    assert!(ss.ur_net_forward(&two, Mode::Infer, &mut rng_from_seed(1)).is_err());
}

/// Copies pw weights into the centre taps of the ss kernels (zeros elsewhere).
/// Under full sharing pw's first two UR blocks are the E-Net's, so ss's
/// unshared `ur.0`/`ur.1` take those weights.
fn one_by_one_equivalent(pw: &Network, ss: &mut Network) {
    let ids: Vec<_> = ss.params.iter().map(|(id, _)| id).collect();
    for s in ids {
        let name = ss.params.name(s).replace(".kernel", ".weight");
        let lookup = |n: &str| pw.params.iter().find(|(id, _)| pw.params.name(*id) == n).map(|(_, t)| t.clone());
        let src = lookup(&name)
            .or_else(|| lookup(&name.replacen("ur.", "e.", 1)))
            .unwrap_or_else(|| panic!("no pw counterpart for {name}"));
        let deconv = name.starts_with("ur.3") || name.starts_with("dec.") || name.starts_with("e.3");
        let dst = ss.params.get_mut(s);
        if dst.ndim() != 4 {
            dst.data_mut().copy_from_slice(src.data());
            continue;
        }
        let (k, d2, d3) = (dst.shape()[0], dst.shape()[2], dst.shape()[3]);
        let ro = src.shape()[1];
        let centre = (k / 2) * k + k / 2;
        dst.data_mut().iter_mut().for_each(|v| *v = 0.0);
        for a in 0..d2 {
            for b in 0..d3 {
                // conv kernels are kh×kw×c_in×c_out like dense i×o; deconv
                // kernels are kh×kw×c_out×c_in, the transpose.
                let v = if deconv { src.data()[b * ro + a] } else { src.data()[a * ro + b] };
                dst.data_mut()[centre * d2 * d3 + a * d3 + b] = v;
            }
        }
    }
}

#[test]
fn pw_and_ss_agree_on_a_single_pixel() {
    for ablation in [Ablation::UrOnly, Ablation::Full] {
        let pw = build_network(config(Variant::Pw, ablation, 10, 3), &mut rng_from_seed(14)).unwrap();
        let mut ss = build_network(config(Variant::Ss, ablation, 10, 3), &mut rng_from_seed(15)).unwrap();
        one_by_one_equivalent(&pw, &mut ss);
        let mut pw = pw;
        let x = positive(&[1, 10], 16);
        let img = x.clone().reshape(&[1, 1, 1, 10]).unwrap();
        let (a_pw, r_pw) = pw.ur_net_forward(&x, Mode::Infer, &mut rng_from_seed(0)).unwrap();
        let (a_ss, r_ss) = ss.ur_net_forward(&img, Mode::Infer, &mut rng_from_seed(0)).unwrap();
        for (u, v) in a_pw.data().iter().zip(a_ss.data()).chain(r_pw.data().iter().zip(r_ss.data())) {
            assert!((u - v).abs() < 1e-10, "{ablation}: {u} vs {v}");
        }
        let e_pw = pw.e_net_forward(&x, Mode::Infer, &mut rng_from_seed(0)).unwrap();
        let e_ss = ss.e_net_forward(&img, Mode::Infer, &mut rng_from_seed(0)).unwrap();
        for (u, v) in e_pw.data().iter().zip(e_ss.data()) {
            assert!((u - v).abs() < 1e-10);
        }
    }
}

#[test]
fn ss_inference_on_a_constant_image_is_constant_away_from_the_border() {
    // Zero "same" padding in the convolutions makes border pixels differ; the
    // receptive field reaches 3 pixels up/left and 6 down/right.
    let (h, w, b) = (16, 16, 10);
    let spectrum: Vec<f64> = (0..b).map(|k| 0.2 + 0.05 * k as f64).collect();
    let cube = HsiCube::new(h, w, b, None, spectrum.repeat(h * w)).unwrap();
    let mut n = net(Variant::Ss, Ablation::Full, 17);
    n.epochs_trained = 1;
    let map = infer_abundances(&cube, &n).unwrap();
    let reference = map.pixel(4 * w + 4).to_vec();
    for r in 3..h - 6 {
        for c in 3..w - 6 {
            for (u, v) in map.pixel(r * w + c).iter().zip(&reference) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn pw_inference_is_permutation_equivariant() {
    let scene = small_scene(18);
    let mut n = build_network(config(Variant::Pw, Ablation::Full, 20, 3), &mut rng_from_seed(19)).unwrap();
    n.epochs_trained = 1;
    let cube = &scene.cube;
    let a = infer_abundances(cube, &n).unwrap();
    let p = cube.pixels();
    let perm: Vec<usize> = (0..p).map(|i| (i * 7 + 3) % p).collect();
    let mut data = Vec::with_capacity(p * cube.bands);
    for &i in &perm {
        data.extend_from_slice(cube.pixel(i));
    }
    let shuffled = HsiCube::new(cube.height, cube.width, cube.bands, cube.wavelengths.clone(), data).unwrap();
    let b = infer_abundances(&shuffled, &n).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        assert_eq!(b.pixel(k), a.pixel(i));
    }
    for k in 0..p {
        let row = a.pixel(k);
        assert!(row.iter().all(|&v| v >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn training_reduces_the_endmember_loss_and_is_deterministic() {
    let scene = small_scene(20);
    let bundle = extract_bundles(&scene.cube, &BundleConfig { classes: Some(3), ..Default::default() }, 21).unwrap();
    let cfg = small_train(Variant::Pw, Ablation::Full, 200, 22);
    let (net_a, log) = train(&scene.cube, &bundle, &cfg).unwrap();
    assert_eq!(log.len(), 200);
    assert!(log[199].loss_e < log[0].loss_e, "{:?} vs {:?}", log[199], log[0]);
    assert_eq!(net_a.epochs_trained, 200);

    let short = small_train(Variant::Pw, Ablation::Full, 5, 22);
    let (x, lx) = train(&scene.cube, &bundle, &short).unwrap();
    let (y, ly) = train(&scene.cube, &bundle, &short).unwrap();
    for ((_, a), (_, b)) in x.params.iter().zip(y.params.iter()) {
        assert_eq!(a.data(), b.data());
    }
    assert_eq!(lx, ly);
    for (e, u) in x.sharing_map() {
        for (i, j) in x.e_net.blocks[e].param_ids().into_iter().zip(x.ur_encoder.blocks[u].param_ids()) {
            assert_eq!(x.params.get(i).data(), x.params.get(j).data());
        }
    }
}

#[test]
fn ablations_train_and_infer_simplex_abundances() {
    let scene = small_scene(23);
    let bundle = extract_bundles(&scene.cube, &BundleConfig { classes: Some(3), ..Default::default() }, 24).unwrap();
    for variant in [Variant::Pw, Variant::Ss] {
        for ablation in [Ablation::Full, Ablation::UrOnly, Ablation::EOnly] {
            let (n, log) = train(&scene.cube, &bundle, &small_train(variant, ablation, 3, 25)).unwrap();
            match ablation {
                Ablation::UrOnly => assert!(log.iter().all(|l| l.loss_e == 0.0)),
                Ablation::EOnly => assert!(log.iter().all(|l| l.loss_ur == 0.0)),
                Ablation::Full => assert!(log.iter().all(|l| l.loss_e > 0.0 && l.loss_ur > 0.0)),
            }
            let map = infer_abundances(&scene.cube, &n).unwrap();
            for k in 0..scene.cube.pixels() {
                let row = map.pixel(k);
                assert!(row.iter().all(|&v| v >= -1e-12));
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn diverging_training_reports_epoch_and_rate() {
    let scene = small_scene(26);
    let bundle = extract_bundles(&scene.cube, &BundleConfig { classes: Some(3), ..Default::default() }, 27).unwrap();
    let mut cfg = small_train(Variant::Pw, Ablation::Full, 20, 28);
    cfg.base_lr = 1e300;
    match train(&scene.cube, &bundle, &cfg) {
        Err(e @ Error::Diverged { .. }) => assert!(e.is_numerical()),
        other => panic!("expected divergence, got {:?}", other.map(|(_, l)| l.len())),
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::TempDir::new().unwrap();
    for variant in [Variant::Pw, Variant::Ss] {
        let mut n = net(variant, Ablation::Full, 29);
        n.epochs_trained = 7;
        let path = dir.path().join(format!("{variant}.eguc"));
        save_checkpoint(&path, &n, 99).unwrap();
        let (m, header) = load_checkpoint(&path).unwrap();
        assert_eq!(header.seed, 99);
        assert_eq!(m.config, n.config);
        assert_eq!(m.epochs_trained, 7);
        assert_eq!(m.sharing_map(), n.sharing_map());
        for ((_, a), (_, b)) in m.params.iter().zip(n.params.iter()) {
            assert_eq!(a, b);
        }
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}

