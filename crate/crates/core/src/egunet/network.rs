//! The two streams and their block plans.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ActivationKind, Block, Gradients, LayerSpec, Mode, ParamId, ParamStore, Sequential};
use crate::tensor::Tensor;

use super::loss::{loss_e, loss_ur};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Fully connected, one pixel at a time.
    Pw,
    /// Convolutional, whole image at once.
    Ss,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pw" => Ok(Variant::Pw),
            "ss" => Ok(Variant::Ss),
            other => Err(Error::config(format!("unknown variant {other:?} (pw or ss)"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Pw => "pw",
            Variant::Ss => "ss",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Both streams, shared encoder blocks, `L_E + L_UR`.
    Full,
    /// Unmixing stream alone; no endmember loss, no sharing.
    UrOnly,
    /// Endmember stream alone; abundances are inferred with it.
    EOnly,
}

impl std::str::FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "ur_only" => Ok(Ablation::UrOnly),
            "e_only" => Ok(Ablation::EOnly),
            other => Err(Error::config(format!(
                "unknown ablation {other:?} (full, ur_only or e_only)"
            ))),
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Ablation::Full => "full",
            Ablation::UrOnly => "ur_only",
            Ablation::EOnly => "e_only",
        })
    }
}

/// Hidden widths (channel counts for `ss`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Widths {
    pub encoder: [usize; 2],
    pub decoder: [usize; 3],
}

impl Default for Widths {
    fn default() -> Self {
        Widths {
            encoder: [128, 64],
            decoder: [64, 128, 192],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub variant: Variant,
    pub bands: usize,
    pub classes: usize,
    pub widths: Widths,
    pub dropout_keep: f64,
    pub ablation: Ablation,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.bands <= self.classes {
            return Err(Error::config(format!(
                "need B > C ≥ 2, got B={} C={}",
                self.bands, self.classes
            )));
        }
        if self.widths.encoder.iter().chain(&self.widths.decoder).any(|&w| w == 0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return Err(Error::config("dropout keep probability must be in (0, 1]"));
        }
        Ok(())
    }

    /// Encoder blocks of the two streams alias each other only in the full model.
    pub fn shares(&self) -> bool {
        self.ablation == Ablation::Full
    }

    /// `(e_block, ur_block)` pairs that alias the same parameters (0-based).
    pub fn sharing_map(&self) -> Vec<(usize, usize)> {
        if !self.shares() {
            return vec![];
        }
        match self.variant {
            Variant::Pw => vec![(0, 0), (1, 1), (2, 2), (3, 3)],
            Variant::Ss => vec![(2, 2), (3, 3)],
        }
    }
}

/// Loss values of one joint evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub e: f64,
    pub ur: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.e + self.ur
    }
}

/// Which loss terms a joint evaluation includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Terms {
    pub e: bool,
    pub ur: bool,
}

impl From<Ablation> for Terms {
    fn from(a: Ablation) -> Self {
        match a {
            Ablation::Full => Terms { e: true, ur: true },
            Ablation::UrOnly => Terms { e: false, ur: true },
            Ablation::EOnly => Terms { e: true, ur: false },
        }
    }
}

/// Both streams over one parameter store.
#[derive(Debug, Clone)]
pub struct Network {
    pub config: NetworkConfig,
    pub params: ParamStore,
    pub e_net: Sequential,
    pub ur_encoder: Sequential,
    pub ur_decoder: Sequential,
    /// Completed training epochs; zero for a freshly built network.
    pub epochs_trained: usize,
}

fn activation(d: usize, kind: ActivationKind) -> LayerSpec {
    LayerSpec::activation(d, kind)
}

fn alias_block(block: &Block, name: impl Into<String>, insert_pool_before: Option<usize>) -> Block {
    let mut layers: Vec<_> = block.layers.iter().map(|l| l.alias()).collect();
    if let Some(pos) = insert_pool_before {
        layers.insert(pos, crate::nn::Layer::AvgPool);
    }
    Block {
        name: name.into(),
        layers,
    }
}

/// Allocates both streams. Aliased encoder blocks refer to the endmember
/// stream's parameters; decoder blocks are never shared.
pub fn build_network<R: Rng + ?Sized>(config: NetworkConfig, rng: &mut R) -> Result<Network> {
    config.validate()?;
    let NetworkConfig {
        variant,
        bands: b,
        classes: c,
        widths,
        dropout_keep: keep,
        ..
    } = config;
    let share = config.shares();
    let [h1, h2] = widths.encoder;
    let [d1, d2, d3] = widths.decoder;
    let mut params = ParamStore::new();
    use ActivationKind::{Relu, Sigmoid, Softmax, Tanh};

    let (e_net, ur_encoder, ur_decoder) = match variant {
        Variant::Pw => {
            let plan: [Vec<LayerSpec>; 4] = [
                vec![
                    LayerSpec::dense(b, h1),
                    LayerSpec::batchnorm(h1),
                    LayerSpec::dropout(h1, keep),
                    activation(h1, Tanh),
                ],
                vec![LayerSpec::dense(h1, h2), LayerSpec::batchnorm(h2), activation(h2, Tanh)],
                vec![LayerSpec::dense(h2, c), LayerSpec::batchnorm(c), activation(c, Relu)],
                vec![LayerSpec::dense(c, c), activation(c, Softmax)],
            ];
            let e_blocks = plan
                .iter()
                .enumerate()
                .map(|(i, s)| Block::new(format!("e.{i}"), s, &mut params, rng))
                .collect::<Result<Vec<_>>>()?;
            let ur_blocks = if share {
                e_blocks
                    .iter()
                    .enumerate()
                    .map(|(i, blk)| alias_block(blk, format!("ur.{i}"), None))
                    .collect()
            } else {
                plan.iter()
                    .enumerate()
                    .map(|(i, s)| Block::new(format!("ur.{i}"), s, &mut params, rng))
                    .collect::<Result<Vec<_>>>()?
            };
            let dims = [c, d1, d2, d3, b];
            let dec = (0..4)
                .map(|i| {
                    Block::new(
                        format!("dec.{i}"),
                        &[
                            LayerSpec::dense(dims[i], dims[i + 1]),
                            LayerSpec::batchnorm(dims[i + 1]),
                            activation(dims[i + 1], Sigmoid),
                        ],
                        &mut params,
                        rng,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            (e_blocks, ur_blocks, dec)
        }
        Variant::Ss => {
            let e_plan: [Vec<LayerSpec>; 4] = [
                vec![
                    LayerSpec::conv2d(b, h1, 1),
                    LayerSpec::batchnorm(h1),
                    LayerSpec::dropout(h1, keep),
                    activation(h1, Tanh),
                ],
                vec![LayerSpec::conv2d(h1, h2, 1), LayerSpec::batchnorm(h2), activation(h2, Tanh)],
                vec![LayerSpec::conv2d(h2, c, 1), LayerSpec::batchnorm(c), activation(c, Relu)],
                vec![LayerSpec::deconv2d(c, c, 1), activation(c, Softmax)],
            ];
            let e_blocks = e_plan
                .iter()
                .enumerate()
                .map(|(i, s)| Block::new(format!("e.{i}"), s, &mut params, rng))
                .collect::<Result<Vec<_>>>()?;
            let mut ur = vec![
                Block::new(
                    "ur.0",
                    &[
                        LayerSpec::conv2d(b, h1, 5),
                        LayerSpec::batchnorm(h1),
                        LayerSpec::dropout(h1, keep),
                        LayerSpec::avgpool(h1),
                        activation(h1, Tanh),
                    ],
                    &mut params,
                    rng,
                )?,
                Block::new(
                    "ur.1",
                    &[
                        LayerSpec::conv2d(h1, h2, 3),
                        LayerSpec::batchnorm(h2),
                        LayerSpec::avgpool(h2),
                        activation(h2, Tanh),
                    ],
                    &mut params,
                    rng,
                )?,
            ];
            if share {
                ur.push(alias_block(&e_blocks[2], "ur.2", Some(2)));
                ur.push(alias_block(&e_blocks[3], "ur.3", None));
            } else {
                ur.push(Block::new(
                    "ur.2",
                    &[
                        LayerSpec::conv2d(h2, c, 1),
                        LayerSpec::batchnorm(c),
                        LayerSpec::avgpool(c),
                        activation(c, Relu),
                    ],
                    &mut params,
                    rng,
                )?);
                ur.push(Block::new(
                    "ur.3",
                    &[LayerSpec::deconv2d(c, c, 1), activation(c, Softmax)],
                    &mut params,
                    rng,
                )?);
            }
            let dims = [c, d1, d2, d3, b];
            let kernels = [1, 1, 3, 5];
            let dec = (0..4)
                .map(|i| {
                    Block::new(
                        format!("dec.{i}"),
                        &[
                            LayerSpec::deconv2d(dims[i], dims[i + 1], kernels[i]),
                            LayerSpec::batchnorm(dims[i + 1]),
                            activation(dims[i + 1], Sigmoid),
                        ],
                        &mut params,
                        rng,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            (e_blocks, ur, dec)
        }
    };
    Ok(Network {
        config,
        params,
        e_net: Sequential::new(e_net),
        ur_encoder: Sequential::new(ur_encoder),
        ur_decoder: Sequential::new(ur_decoder),
        epochs_trained: 0,
    })
}

impl Network {
    pub fn sharing_map(&self) -> Vec<(usize, usize)> {
        self.config.sharing_map()
    }

    /// Distinct parameters reachable from the given streams.
    pub fn scalar_count(&self, e_net: bool, ur: bool) -> usize {
        let mut ids: Vec<ParamId> = Vec::new();
        if e_net {
            ids.extend(self.e_net.param_ids());
        }
        if ur {
            ids.extend(self.ur_encoder.param_ids());
            ids.extend(self.ur_decoder.param_ids());
        }
        ids.sort_by_key(|p| p.0);
        ids.dedup();
        ids.iter().map(|&id| self.params.get(id).len()).sum()
    }

    /// Endmember-stream prediction for bundle signatures (`N_e×B`, or
    /// `N_e×1×1×B` for `ss`).
    pub fn e_net_forward<R: Rng + ?Sized>(
        &mut self,
        signatures: &Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Tensor> {
        self.check_input(signatures, "bundle signatures")?;
        self.e_net.forward(&self.params, signatures, mode, rng)
    }

    /// Unmixing-stream pass: `(abundances, reconstruction)`.
    pub fn ur_net_forward<R: Rng + ?Sized>(
        &mut self,
        x: &Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor, Tensor)> {
        self.check_input(x, "unmixing input")?;
        if self.config.variant == Variant::Ss && x.shape()[0] != 1 {
            return Err(Error::dim("the ss unmixing stream takes one whole image (1×H×W×B)"));
        }
        let a = self.ur_encoder.forward(&self.params, x, mode, rng)?;
        let x_hat = self.ur_decoder.forward(&self.params, &a, mode, rng)?;
        Ok((a, x_hat))
    }

    fn check_input(&self, x: &Tensor, what: &str) -> Result<()> {
        let ok = match self.config.variant {
            Variant::Pw => x.ndim() == 2,
            Variant::Ss => x.ndim() == 4,
        } && x.last_dim() == self.config.bands;
        if ok {
            Ok(())
        } else {
            Err(Error::dim(format!(
                "{what} has shape {:?}; {} network expects {} bands as {}",
                x.shape(),
                self.config.variant,
                self.config.bands,
                if self.config.variant == Variant::Pw { "N×B" } else { "N×H×W×B" }
            )))
        }
    }

    /// Training-mode joint evaluation of the selected loss terms and their
    /// gradients. Shared parameters receive the sum of both streams' gradients.
    pub fn loss_and_grads<R: Rng + ?Sized>(
        &mut self,
        signatures: &Tensor,
        labels: &Tensor,
        x: &Tensor,
        terms: Terms,
        rng: &mut R,
    ) -> Result<(LossParts, Gradients)> {
        let mut grads = self.params.zero_grads();
        let mut parts = LossParts::default();
        if terms.e {
            let pred = self.e_net_forward(signatures, Mode::Train, rng)?;
            let labels = labels.clone().reshape(pred.shape())?;
            let (l, g) = loss_e(&pred, &labels)?;
            parts.e = l;
            self.e_net.backward(&self.params, &g, &mut grads)?;
        }
        if terms.ur {
            let (_, x_hat) = self.ur_net_forward(x, Mode::Train, rng)?;
            let (l, g) = loss_ur(x, &x_hat)?;
            parts.ur = l;
            let ga = self.ur_decoder.backward(&self.params, &g, &mut grads)?;
            self.ur_encoder.backward(&self.params, &ga, &mut grads)?;
        }
        Ok((parts, grads))
    }
}
