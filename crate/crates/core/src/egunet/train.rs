use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{build_network, Ablation, Network, NetworkConfig, Terms, Variant, Widths};
use crate::bundles::EndmemberBundle;
use crate::error::{Error, Result};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rng::{rng_from_seed, split_seed};
use crate::tensor::Tensor;
use crate::types::{AbundanceMap, HsiCube};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub power: f64,
    pub dropout_keep: f64,
    pub seed: u64,
    pub variant: Variant,
    pub ablation: Ablation,
    pub widths: Widths,
    /// Unmixing minibatch size for `pw`; defaults to the bundle size `N_e`.
    pub batch_size: Option<usize>,
    /// Optimizer steps per epoch; defaults to one pass over the pixels for
    /// `pw` and one whole-image step for `ss`.
    pub steps_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            base_lr: 0.1,
            power: 0.99,
            dropout_keep: 0.9,
            seed: 0,
            variant: Variant::Pw,
            ablation: Ablation::Full,
            widths: Widths::default(),
            batch_size: None,
            steps_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if !(self.base_lr > 0.0) || !self.power.is_finite() {
            return Err(Error::config("learning rate must be positive and power finite"));
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return Err(Error::config("dropout keep probability must be in (0, 1]"));
        }
        if self.batch_size == Some(0) || self.batch_size == Some(1) {
            return Err(Error::config("batch size must be at least 2 (batch normalization)"));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::config("steps per epoch must be positive"));
        }
        Ok(())
    }

    pub fn network_config(&self, bands: usize, classes: usize) -> NetworkConfig {
        NetworkConfig {
            variant: self.variant,
            bands,
            classes,
            widths: self.widths,
            dropout_keep: self.dropout_keep,
            ablation: self.ablation,
        }
    }

    /// `(batch size, steps per epoch)` for a scene with `pixels` pixels and a
    /// bundle of `bundle_len` signatures.
    pub fn schedule(&self, pixels: usize, bundle_len: usize) -> (usize, usize) {
        match self.variant {
            Variant::Ss => (pixels, self.steps_per_epoch.unwrap_or(1)),
            Variant::Pw => {
                let batch = self.batch_size.unwrap_or(bundle_len).clamp(2, pixels.max(2));
                let steps = self.steps_per_epoch.unwrap_or(pixels.div_ceil(batch));
                (batch, steps)
            }
        }
    }
}

/// Per-epoch averages of the loss terms and the last learning rate used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_e: f64,
    pub loss_ur: f64,
    pub loss_o: f64,
    pub lr: f64,
}

/// Bundle signatures and labels laid out for the endmember stream.
pub fn bundle_tensors(bundle: &EndmemberBundle, variant: Variant) -> Result<(Tensor, Tensor)> {
    let (b, n) = bundle.signatures.shape();
    let c = bundle.labels.nrows();
    // Column-major storage puts each signature contiguously.
    let sig = Tensor::new(vec![n, b], bundle.signatures.as_slice().to_vec())?;
    let lab = Tensor::new(vec![n, c], bundle.labels.as_slice().to_vec())?;
    Ok(match variant {
        Variant::Pw => (sig, lab),
        Variant::Ss => (sig.reshape(&[n, 1, 1, b])?, lab.reshape(&[n, 1, 1, c])?),
    })
}

fn gather_rows(pixels: &Tensor, idx: &[usize]) -> Tensor {
    let b = pixels.last_dim();
    let mut data = Vec::with_capacity(idx.len() * b);
    for &i in idx {
        data.extend_from_slice(pixels.row(i));
    }
    Tensor::new(vec![idx.len(), b], data).expect("row gather")
}

/// Trains a freshly built network on `cube` with `bundle` as endmember
/// supervision. Deterministic for a given configuration.
pub fn train(
    cube: &HsiCube,
    bundle: &EndmemberBundle,
    cfg: &TrainConfig,
) -> Result<(Network, Vec<EpochLog>)> {
    cfg.validate()?;
    bundle.validate()?;
    if bundle.bands() != cube.bands {
        return Err(Error::dim(format!(
            "bundle has {} bands, cube has {}",
            bundle.bands(),
            cube.bands
        )));
    }
    let mut init_rng = rng_from_seed(split_seed(cfg.seed, 1));
    let net = build_network(cfg.network_config(cube.bands, bundle.classes()), &mut init_rng)?;
    train_network(net, cube, bundle, cfg)
}

/// Continues training `net` for `cfg.epochs` epochs.
pub fn train_network(
    mut net: Network,
    cube: &HsiCube,
    bundle: &EndmemberBundle,
    cfg: &TrainConfig,
) -> Result<(Network, Vec<EpochLog>)> {
    let variant = net.config.variant;
    let terms = Terms::from(net.config.ablation);
    let (sig, lab) = bundle_tensors(bundle, variant)?;
    let n = cube.pixels();
    let (batch, steps) = cfg.schedule(n, bundle.len());
    let pixels = cube.pixel_rows();
    let image = match variant {
        Variant::Ss => Some(cube.image_tensor()),
        Variant::Pw => None,
    };

    let max_iter = cfg.epochs * steps;
    let mut adam = AdamState::new(&net.params, AdamConfig::new(cfg.base_lr, cfg.power, max_iter));
    let mut drop_rng = rng_from_seed(split_seed(cfg.seed, 2));
    let mut batch_rng = rng_from_seed(split_seed(cfg.seed, 3));
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    info!(
        "training {variant}/{} for {} epochs × {steps} steps (batch {batch}, bundle {})",
        net.config.ablation,
        cfg.epochs,
        bundle.len()
    );

    for epoch in 1..=cfg.epochs {
        let mut sum_e = 0.0;
        let mut sum_ur = 0.0;
        let mut lr = 0.0;
        if variant == Variant::Pw {
            order.shuffle(&mut batch_rng);
        }
        for step in 0..steps {
            let x = match &image {
                Some(img) => img.clone(),
                None => {
                    let idx: Vec<usize> =
                        (0..batch).map(|k| order[(step * batch + k) % n]).collect();
                    gather_rows(&pixels, &idx)
                }
            };
            let result = net.loss_and_grads(&sig, &lab, &x, terms, &mut drop_rng);
            let (parts, grads) = match result {
                Ok(v) => v,
                Err(e @ Error::NonFinite(_)) => {
                    return Err(Error::Diverged {
                        epoch,
                        lr: adam.current_lr(),
                        detail: e.to_string(),
                    })
                }
                Err(e) => return Err(e),
            };
            if !parts.total().is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    lr: adam.current_lr(),
                    detail: format!("loss is {} (L_E {}, L_UR {})", parts.total(), parts.e, parts.ur),
                });
            }
            lr = adam_step(&mut net.params, &grads, &mut adam)?;
            sum_e += parts.e;
            sum_ur += parts.ur;
        }
        let entry = EpochLog {
            epoch,
            loss_e: sum_e / steps as f64,
            loss_ur: sum_ur / steps as f64,
            loss_o: (sum_e + sum_ur) / steps as f64,
            lr,
        };
        log::debug!(
            "epoch {epoch}: L_E {:.6} L_UR {:.6} lr {:.3e}",
            entry.loss_e,
            entry.loss_ur,
            entry.lr
        );
        log.push(entry);
        net.epochs_trained += 1;
    }
    Ok((net, log))
}

/// Per-pixel abundances from the trained network in inference mode: the
/// unmixing encoder's softmax output, or the endmember stream for `e_only`.
pub fn infer_abundances(cube: &HsiCube, net: &Network) -> Result<AbundanceMap> {
    if net.epochs_trained == 0 {
        warn!("inferring with an untrained network");
    }
    if cube.bands != net.config.bands {
        return Err(Error::dim(format!(
            "cube has {} bands, network expects {}",
            cube.bands, net.config.bands
        )));
    }
    let stream = match net.config.ablation {
        Ablation::EOnly => &net.e_net,
        _ => &net.ur_encoder,
    };
    let input = match net.config.variant {
        Variant::Pw => cube.pixel_rows(),
        Variant::Ss => cube.image_tensor(),
    };
    let a = stream.infer(&net.params, &input)?;
    AbundanceMap::new(cube.height, cube.width, net.config.classes, a.into_data())
}
