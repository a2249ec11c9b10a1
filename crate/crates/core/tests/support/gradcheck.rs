//! Analytic gradients against central finite differences (h = 1e-5, f64).
//!
//! Every check uses the scalar objective `L = Σ out ⊙ R` for a fixed random
//! `R` unless a network loss is being checked. Relative error is
//! `|a − n| / max(|a|, |n|, 1e-6)`; the floor keeps entries whose true
//! gradient is zero from dividing round-off by round-off.

use egunet::egunet::{build_network, Ablation, Network, NetworkConfig, Terms, Variant, Widths};
use egunet::nn::{ActivationKind, Block, Gradients, LayerSpec, Mode, ParamStore, Sequential};
use egunet::rng::{rng_from_seed, Rng};
use egunet::Tensor;
use rand::Rng as _;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-6;

fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

struct Case {
    net: Sequential,
    params: ParamStore,
    input: Tensor,
    weight: Tensor,
    seed: u64,
}

impl Case {
    fn new(specs: &[LayerSpec], input_shape: &[usize], seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut params = ParamStore::new();
        let block = Block::new("b", specs, &mut params, &mut rng).unwrap();
        // Randomize every parameter so batch-norm scales and biases are generic.
        for t in params.iter_mut() {
            for v in t.data_mut() {
                *v = rng.random_range(-1.0..1.0) + if *v == 1.0 { 1.0 } else { 0.0 };
            }
        }
        let mut net = Sequential::new(vec![block]);
        let input = random(input_shape, &mut rng);
        let out = net
            .forward(&params, &input, Mode::Train, &mut rng_from_seed(seed + 1))
            .unwrap();
        let weight = random(out.shape(), &mut rng);
        Case {
            net,
            params,
            input,
            weight,
            seed,
        }
    }

    /// Objective with the same dropout mask every time.
    fn objective(&mut self, params: &ParamStore, input: &Tensor) -> f64 {
        let out = self
            .net
            .forward(params, input, Mode::Train, &mut rng_from_seed(self.seed + 1))
            .unwrap();
        out.dot(&self.weight)
    }

    fn analytic(&mut self) -> (Gradients, Tensor) {
        let (params, input) = (self.params.clone(), self.input.clone());
        self.objective(&params, &input);
        let mut grads = params.zero_grads();
        let gx = self.net.backward(&params, &self.weight.clone(), &mut grads).unwrap();
        (grads, gx)
    }

    /// Largest relative error over all parameters and input entries.
    fn max_error(&mut self) -> f64 {
        let (grads, gx) = self.analytic();
        let mut worst: f64 = 0.0;
        let ids: Vec<_> = self.params.iter().map(|(id, _)| id).collect();
        for id in ids {
            for k in 0..self.params.get(id).len() {
                let mut p = self.params.clone();
                p.get_mut(id).data_mut()[k] += H;
                let input = self.input.clone();
                let up = self.objective(&p, &input);
                p.get_mut(id).data_mut()[k] -= 2.0 * H;
                let down = self.objective(&p, &input);
                worst = worst.max(rel_err(grads.get(id).data()[k], (up - down) / (2.0 * H)));
            }
        }
        let params = self.params.clone();
        for k in 0..self.input.len() {
            let mut x = self.input.clone();
            x.data_mut()[k] += H;
            let up = self.objective(&params, &x);
            x.data_mut()[k] -= 2.0 * H;
            let down = self.objective(&params, &x);
            worst = worst.max(rel_err(gx.data()[k], (up - down) / (2.0 * H)));
        }
        worst
    }
}

fn check(name: &str, specs: &[LayerSpec], input_shape: &[usize], seed: u64) {
    let err = Case::new(specs, input_shape, seed).max_error();
    assert!(err < TOL, "{name}: max relative error {err:e}");
}

/// Random sizes in `lo..=8`.
fn dims<const N: usize>(rng: &mut Rng, lo: usize) -> [usize; N] {
    std::array::from_fn(|_| rng.random_range(lo..=8))
}

pub fn dense_layer() {
    let mut rng = rng_from_seed(100);
    for s in 0..3 {
        let [n, i, o] = dims(&mut rng, 1);
        check("dense", &[LayerSpec::dense(i, o)], &[n, i], s);
    }
}

pub fn batchnorm_layer_matrix_and_image() {
    let mut rng = rng_from_seed(101);
    for s in 0..3 {
        let [n, d] = dims(&mut rng, 2);
        check("batchnorm", &[LayerSpec::batchnorm(d)], &[n, d], s);
        let [h, w, c] = dims(&mut rng, 1);
        check("batchnorm 4-d", &[LayerSpec::batchnorm(c)], &[2, h, w, c], s);
    }
}

pub fn activation_layers() {
    let mut rng = rng_from_seed(102);
    for kind in [
        ActivationKind::Relu,
        ActivationKind::Sigmoid,
        ActivationKind::Tanh,
        ActivationKind::Softmax,
    ] {
        let [n, d] = dims(&mut rng, 1);
        check(&format!("{kind:?}"), &[LayerSpec::activation(d, kind)], &[n, d], 7);
        let [h, w, c] = dims(&mut rng, 1);
        check(&format!("{kind:?} 4-d"), &[LayerSpec::activation(c, kind)], &[1, h, w, c], 8);
    }
}

pub fn dropout_layer() {
    let mut rng = rng_from_seed(103);
    for s in 0..3 {
        let [n, d] = dims(&mut rng, 1);
        check("dropout", &[LayerSpec::dropout(d, 0.7)], &[n, d], s);
    }
}

pub fn conv_and_deconv_layers() {
    let mut rng = rng_from_seed(104);
    for k in [1, 3, 5] {
        let [h, w, ci, co] = dims(&mut rng, 1);
        let n = rng.random_range(1..=2);
        check(&format!("conv {k}×{k}"), &[LayerSpec::conv2d(ci, co, k)], &[n, h, w, ci], k as u64);
        check(&format!("deconv {k}×{k}"), &[LayerSpec::deconv2d(ci, co, k)], &[n, h, w, ci], k as u64);
    }
}

pub fn avgpool_layer() {
    let mut rng = rng_from_seed(105);
    for s in 0..3 {
        let [h, w, c] = dims(&mut rng, 1);
        check("avgpool", &[LayerSpec::avgpool(c)], &[2, h, w, c], s);
    }
}

pub fn composed_block() {
    check(
        "block",
        &[
            LayerSpec::conv2d(3, 4, 3),
            LayerSpec::batchnorm(4),
            LayerSpec::dropout(4, 0.8),
            LayerSpec::avgpool(4),
            LayerSpec::activation(4, ActivationKind::Tanh),
            LayerSpec::deconv2d(4, 2, 1),
            LayerSpec::activation(2, ActivationKind::Softmax),
        ],
        &[1, 5, 6, 3],
        11,
    );
}

struct NetCase {
    net: Network,
    sig: Tensor,
    labels: Tensor,
    x: Tensor,
}

fn net_case(variant: Variant, seed: u64, dropout_keep: f64) -> NetCase {
    let (b, c) = (7, 3);
    let config = NetworkConfig {
        variant,
        bands: b,
        classes: c,
        widths: Widths {
            encoder: [6, 5],
            decoder: [4, 5, 6],
        },
        dropout_keep,
        ablation: Ablation::Full,
    };
    let mut rng = rng_from_seed(seed);
    let net = build_network(config, &mut rng).unwrap();
    let n_e = 5;
    let positive = |t: Tensor| {
        let d = t.data().iter().map(|v| 0.5 + 0.4 * v).collect();
        Tensor::new(t.shape().to_vec(), d).unwrap()
    };
    let (sig_shape, x_shape) = match variant {
        Variant::Pw => (vec![n_e, b], vec![6, b]),
        Variant::Ss => (vec![n_e, 1, 1, b], vec![1, 4, 5, b]),
    };
    let sig = positive(random(&sig_shape, &mut rng));
    let mut labels = Tensor::zeros(&[n_e, c]);
    for i in 0..n_e {
        let row: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = row.iter().sum();
        labels.data_mut()[i * c..(i + 1) * c]
            .iter_mut()
            .zip(&row)
            .for_each(|(d, v)| *d = v / s);
    }
    let x = positive(random(&x_shape, &mut rng));
    NetCase { net, sig, labels, x }
}

impl NetCase {
    fn loss(&mut self, terms: Terms) -> (f64, Gradients) {
        let mut rng = rng_from_seed(42);
        let (parts, g) = self
            .net
            .loss_and_grads(&self.sig, &self.labels, &self.x, terms, &mut rng)
            .unwrap();
        (parts.total(), g)
    }

    fn max_error(&mut self, terms: Terms) -> f64 {
        let (_, grads) = self.loss(terms);
        let ids: Vec<_> = self.net.params.iter().map(|(id, _)| id).collect();
        let mut worst: f64 = 0.0;
        for id in ids {
            for k in 0..self.net.params.get(id).len() {
                let orig = self.net.params.get(id).data()[k];
                self.net.params.get_mut(id).data_mut()[k] = orig + H;
                let up = self.loss(terms).0;
                self.net.params.get_mut(id).data_mut()[k] = orig - H;
                let down = self.loss(terms).0;
                self.net.params.get_mut(id).data_mut()[k] = orig;
                worst = worst.max(rel_err(grads.get(id).data()[k], (up - down) / (2.0 * H)));
            }
        }
        worst
    }
}

const E: Terms = Terms { e: true, ur: false };
const UR: Terms = Terms { e: false, ur: true };
const BOTH: Terms = Terms { e: true, ur: true };

pub fn network_losses_pw() {
    for (name, terms) in [("L_E", E), ("L_UR", UR), ("L_O", BOTH)] {
        let err = net_case(Variant::Pw, 1, 0.8).max_error(terms);
        assert!(err < TOL, "pw {name}: max relative error {err:e}");
    }
}

pub fn network_losses_ss() {
    for (name, terms) in [("L_E", E), ("L_UR", UR), ("L_O", BOTH)] {
        let err = net_case(Variant::Ss, 2, 0.8).max_error(terms);
        assert!(err < TOL, "ss {name}: max relative error {err:e}");
    }
}

pub fn shared_gradient_is_sum_of_stream_gradients() {
    // Without dropout, so both streams see the same masks whichever runs first.
    for variant in [Variant::Pw, Variant::Ss] {
        let mut case = net_case(variant, 3, 1.0);
        let (_, ge) = case.loss(E);
        let (_, gu) = case.loss(UR);
        let (_, go) = case.loss(BOTH);
        let mut shared = 0;
        for (id, _) in case.net.params.iter() {
            let (e, u, o) = (ge.get(id), gu.get(id), go.get(id));
            if e.data().iter().any(|&v| v != 0.0) && u.data().iter().any(|&v| v != 0.0) {
                shared += 1;
            }
            for k in 0..o.len() {
                let sum = e.data()[k] + u.data()[k];
                assert!((o.data()[k] - sum).abs() <= 1e-12 * (1.0 + sum.abs()));
            }
        }
        assert!(shared > 0, "{variant}: no parameter received gradients from both streams");
    }
}
