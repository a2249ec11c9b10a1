//! Layers with analytic gradients and a small block-structured sequential model.
//!
//! Learnable tensors live in a [`ParamStore`]; layers refer to them by
//! [`ParamId`]. Two layers holding the same id alias one tensor, so gradients
//! from both paths accumulate into the same slot of [`Gradients`].

pub mod ops;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use ops::{ActivationKind, Mode, RunningStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    tensors: Vec<Tensor>,
    names: Vec<String>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.tensors.push(value);
        self.names.push(name.into());
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.tensors.iter().enumerate().map(|(i, t)| (ParamId(i), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients(self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect())
    }
}

/// One gradient tensor per parameter, indexed like the owning [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Gradients(Vec<Tensor>);

impl Gradients {
    pub fn from_tensors(tensors: Vec<Tensor>) -> Self {
        Gradients(tensors)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id.0]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.0.iter()
    }

    pub fn zero(&mut self) {
        self.0.iter_mut().for_each(|t| t.fill(0.0));
    }

    fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        let slot = &mut self.0[id.0];
        debug_assert_eq!(slot.shape(), g.shape());
        slot.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|t| t.data().iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    Conv2d,
    Deconv2d,
    Batchnorm,
    Dropout,
    Avgpool,
    Activation,
}

/// Declarative description of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub fan_in: usize,
    pub fan_out: usize,
    pub kernel: Option<(usize, usize)>,
    pub activation: ActivationKind,
    pub dropout_keep: f64,
}

impl LayerSpec {
    fn base(kind: LayerKind, fan_in: usize, fan_out: usize) -> Self {
        LayerSpec {
            kind,
            fan_in,
            fan_out,
            kernel: None,
            activation: ActivationKind::None,
            dropout_keep: 1.0,
        }
    }

    pub fn dense(fan_in: usize, fan_out: usize) -> Self {
        Self::base(LayerKind::Dense, fan_in, fan_out)
    }

    pub fn conv2d(fan_in: usize, fan_out: usize, k: usize) -> Self {
        LayerSpec {
            kernel: Some((k, k)),
            ..Self::base(LayerKind::Conv2d, fan_in, fan_out)
        }
    }

    pub fn deconv2d(fan_in: usize, fan_out: usize, k: usize) -> Self {
        LayerSpec {
            kernel: Some((k, k)),
            ..Self::base(LayerKind::Deconv2d, fan_in, fan_out)
        }
    }

    pub fn batchnorm(features: usize) -> Self {
        Self::base(LayerKind::Batchnorm, features, features)
    }

    pub fn dropout(features: usize, keep: f64) -> Self {
        LayerSpec {
            dropout_keep: keep,
            ..Self::base(LayerKind::Dropout, features, features)
        }
    }

    pub fn avgpool(features: usize) -> Self {
        Self::base(LayerKind::Avgpool, features, features)
    }

    pub fn activation(features: usize, activation: ActivationKind) -> Self {
        LayerSpec {
            activation,
            ..Self::base(LayerKind::Activation, features, features)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fan_in == 0 || self.fan_out == 0 {
            return Err(Error::config("layer fan-in and fan-out must be positive"));
        }
        match self.kind {
            LayerKind::Conv2d | LayerKind::Deconv2d => match self.kernel {
                Some((kh, kw)) if kh % 2 == 1 && kw % 2 == 1 => Ok(()),
                Some(k) => Err(Error::config(format!("kernel {k:?} must have odd sides"))),
                None => Err(Error::config("convolution layers need a kernel size")),
            },
            LayerKind::Dropout if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) => Err(
                Error::config(format!("dropout keep {} not in (0, 1]", self.dropout_keep)),
            ),
            _ => Ok(()),
        }
    }
}

/// Glorot-uniform initial tensor.
fn glorot<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-limit..limit)).collect())
        .expect("shape product matches")
}

/// A layer bound to its parameters.
#[derive(Debug, Clone)]
pub enum Layer {
    Dense { weight: ParamId, bias: ParamId },
    Conv2d { kernel: ParamId, bias: ParamId },
    Deconv2d { kernel: ParamId, bias: ParamId },
    BatchNorm { gamma: ParamId, beta: ParamId, stats: RunningStats },
    Dropout { keep: f64 },
    AvgPool,
    Activation(ActivationKind),
}

impl Layer {
    /// Allocates and initializes the parameters this layer needs.
    pub fn create<R: Rng + ?Sized>(
        spec: &LayerSpec,
        prefix: &str,
        params: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Layer> {
        spec.validate()?;
        let (i, o) = (spec.fan_in, spec.fan_out);
        Ok(match spec.kind {
            LayerKind::Dense => Layer::Dense {
                weight: params.add(format!("{prefix}.weight"), glorot(&[i, o], i, o, rng)),
                bias: params.add(format!("{prefix}.bias"), Tensor::zeros(&[o])),
            },
            LayerKind::Conv2d => {
                let (kh, kw) = spec.kernel.unwrap();
                let area = kh * kw;
                Layer::Conv2d {
                    kernel: params.add(
                        format!("{prefix}.kernel"),
                        glorot(&[kh, kw, i, o], area * i, area * o, rng),
                    ),
                    bias: params.add(format!("{prefix}.bias"), Tensor::zeros(&[o])),
                }
            }
            LayerKind::Deconv2d => {
                let (kh, kw) = spec.kernel.unwrap();
                let area = kh * kw;
                Layer::Deconv2d {
                    kernel: params.add(
                        format!("{prefix}.kernel"),
                        glorot(&[kh, kw, o, i], area * i, area * o, rng),
                    ),
                    bias: params.add(format!("{prefix}.bias"), Tensor::zeros(&[o])),
                }
            }
            LayerKind::Batchnorm => Layer::BatchNorm {
                gamma: params.add(format!("{prefix}.gamma"), Tensor::filled(&[i], 1.0)),
                beta: params.add(format!("{prefix}.beta"), Tensor::zeros(&[i])),
                stats: RunningStats::new(i),
            },
            LayerKind::Dropout => Layer::Dropout {
                keep: spec.dropout_keep,
            },
            LayerKind::Avgpool => Layer::AvgPool,
            LayerKind::Activation => Layer::Activation(spec.activation),
        })
    }

    /// Learnable parameters referenced by this layer, in declaration order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        match self {
            Layer::Dense { weight, bias } => vec![*weight, *bias],
            Layer::Conv2d { kernel, bias } | Layer::Deconv2d { kernel, bias } => {
                vec![*kernel, *bias]
            }
            Layer::BatchNorm { gamma, beta, .. } => vec![*gamma, *beta],
            _ => vec![],
        }
    }

    /// A copy of this layer that refers to the same parameters but keeps its own
    /// batch-norm running statistics.
    pub fn alias(&self) -> Layer {
        match self {
            Layer::BatchNorm { gamma, beta, stats } => Layer::BatchNorm {
                gamma: *gamma,
                beta: *beta,
                stats: RunningStats::new(stats.mean.len()),
            },
            other => other.clone(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::Deconv2d { .. } => "deconv2d",
            Layer::BatchNorm { .. } => "batchnorm",
            Layer::Dropout { .. } => "dropout",
            Layer::AvgPool => "avgpool",
            Layer::Activation(_) => "activation",
        }
    }

    fn forward<R: Rng + ?Sized>(
        &mut self,
        params: &ParamStore,
        x: &Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor, Cache)> {
        Ok(match self {
            Layer::Dense { weight, bias } => (
                ops::dense_forward(x, params.get(*weight), params.get(*bias))?,
                Cache::Input(x.clone()),
            ),
            Layer::Conv2d { kernel, bias } => (
                ops::conv2d_forward(x, params.get(*kernel), params.get(*bias))?,
                Cache::Input(x.clone()),
            ),
            Layer::Deconv2d { kernel, bias } => (
                ops::deconv2d_forward(x, params.get(*kernel), params.get(*bias))?,
                Cache::Input(x.clone()),
            ),
            Layer::BatchNorm { gamma, beta, stats } => {
                let (out, cache) =
                    ops::batchnorm_forward(x, params.get(*gamma), params.get(*beta), mode, stats)?;
                (out, cache.map_or(Cache::None, Cache::BatchNorm))
            }
            Layer::Dropout { keep } => {
                let (out, mask) = ops::dropout_forward(x, *keep, mode, rng)?;
                (out, mask.map_or(Cache::None, Cache::Mask))
            }
            Layer::AvgPool => (ops::avgpool2d(x)?, Cache::None),
            Layer::Activation(kind) => {
                let out = ops::activation_forward(x, *kind);
                (out.clone(), Cache::Activation { input: x.clone(), output: out })
            }
        })
    }

    fn infer(&self, params: &ParamStore, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::BatchNorm { gamma, beta, stats } => {
                let mut stats = stats.clone();
                Ok(ops::batchnorm_forward(
                    x,
                    params.get(*gamma),
                    params.get(*beta),
                    Mode::Infer,
                    &mut stats,
                )?
                .0)
            }
            Layer::Dropout { .. } => Ok(x.clone()),
            Layer::Dense { weight, bias } => {
                ops::dense_forward(x, params.get(*weight), params.get(*bias))
            }
            Layer::Conv2d { kernel, bias } => {
                ops::conv2d_forward(x, params.get(*kernel), params.get(*bias))
            }
            Layer::Deconv2d { kernel, bias } => {
                ops::deconv2d_forward(x, params.get(*kernel), params.get(*bias))
            }
            Layer::AvgPool => ops::avgpool2d(x),
            Layer::Activation(kind) => Ok(ops::activation_forward(x, *kind)),
        }
    }

    fn backward(
        &self,
        params: &ParamStore,
        cache: &Cache,
        grad_out: &Tensor,
        grads: &mut Gradients,
    ) -> Result<Tensor> {
        match (self, cache) {
            (Layer::Dense { weight, bias }, Cache::Input(x)) => {
                let (gx, gw, gb) = ops::dense_backward(x, params.get(*weight), grad_out)?;
                grads.accumulate(*weight, &gw);
                grads.accumulate(*bias, &gb);
                Ok(gx)
            }
            (Layer::Conv2d { kernel, bias }, Cache::Input(x)) => {
                let (gx, gk, gb) = ops::conv2d_backward(x, params.get(*kernel), grad_out)?;
                grads.accumulate(*kernel, &gk);
                grads.accumulate(*bias, &gb);
                Ok(gx)
            }
            (Layer::Deconv2d { kernel, bias }, Cache::Input(x)) => {
                let (gx, gk, gb) = ops::deconv2d_backward(x, params.get(*kernel), grad_out)?;
                grads.accumulate(*kernel, &gk);
                grads.accumulate(*bias, &gb);
                Ok(gx)
            }
            (Layer::BatchNorm { gamma, beta, .. }, Cache::BatchNorm(c)) => {
                let (gz, gg, gb) = ops::batchnorm_backward(c, params.get(*gamma), grad_out)?;
                grads.accumulate(*gamma, &gg);
                grads.accumulate(*beta, &gb);
                Ok(gz)
            }
            (Layer::Dropout { .. }, Cache::Mask(mask)) => Ok(ops::dropout_backward(mask, grad_out)),
            (Layer::AvgPool, Cache::None) => ops::avgpool2d_backward(grad_out),
            (Layer::Activation(kind), Cache::Activation { input, output }) => {
                ops::activation_backward(input, output, *kind, grad_out)
            }
            (layer, _) => Err(Error::State(format!(
                "{} backward called with a cache from a different pass",
                layer.name()
            ))),
        }
    }
}

#[derive(Debug, Clone)]
enum Cache {
    None,
    Input(Tensor),
    BatchNorm(ops::BatchNormCache),
    Mask(Vec<f64>),
    Activation { input: Tensor, output: Tensor },
}

/// A named group of layers (encoder + BN + dropout + pooling + activation).
#[derive(Debug, Clone)]
pub struct Block {
    pub name: String,
    pub layers: Vec<Layer>,
}

impl Block {
    pub fn new<R: Rng + ?Sized>(
        name: impl Into<String>,
        specs: &[LayerSpec],
        params: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Block> {
        let name = name.into();
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, s)| Layer::create(s, &format!("{name}.{i}"), params, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Block { name, layers })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(Layer::param_ids).collect()
    }
}

/// Blocks applied in order, with a recorded tape for reverse-mode gradients.
#[derive(Debug, Clone, Default)]
pub struct Sequential {
    pub blocks: Vec<Block>,
    tape: Option<Vec<Cache>>,
}

impl Sequential {
    pub fn new(blocks: Vec<Block>) -> Self {
        Sequential { blocks, tape: None }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.blocks.iter().flat_map(Block::param_ids).collect()
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.blocks.iter_mut().flat_map(|b| b.layers.iter_mut())
    }

    fn layers(&self) -> impl DoubleEndedIterator<Item = &Layer> {
        self.blocks.iter().flat_map(|b| b.layers.iter())
    }

    /// Runs the stack. In training mode the tape needed by [`Sequential::backward`]
    /// is recorded and batch-norm running statistics are updated.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        params: &ParamStore,
        input: &Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Tensor> {
        if mode == Mode::Infer {
            self.tape = None;
            return self.infer(params, input);
        }
        let mut tape = Vec::new();
        let mut x = input.clone();
        for layer in self.layers_mut() {
            let (y, cache) = layer.forward(params, &x, mode, rng)?;
            y.ensure_finite(layer.name())?;
            tape.push(cache);
            x = y;
        }
        self.tape = Some(tape);
        Ok(x)
    }

    /// Inference-mode forward pass; never touches the tape or running statistics.
    pub fn infer(&self, params: &ParamStore, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        for layer in self.layers() {
            x = layer.infer(params, &x)?;
            x.ensure_finite(layer.name())?;
        }
        Ok(x)
    }

    /// Back-propagates `grad_out` through the last training-mode forward pass,
    /// accumulating parameter gradients into `grads`. Returns the input gradient.
    pub fn backward(
        &mut self,
        params: &ParamStore,
        grad_out: &Tensor,
        grads: &mut Gradients,
    ) -> Result<Tensor> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::State("backward called without a training forward pass".into()))?;
        let mut g = grad_out.clone();
        for (layer, cache) in self.layers().rev().zip(tape.iter().rev()) {
            g = layer.backward(params, cache, &g, grads)?;
        }
        Ok(g)
    }

    /// Running statistics of every batch-norm layer, in order.
    pub fn running_stats(&self) -> Vec<&RunningStats> {
        self.layers()
            .filter_map(|l| match l {
                Layer::BatchNorm { stats, .. } => Some(stats),
                _ => None,
            })
            .collect()
    }

    pub fn running_stats_mut(&mut self) -> Vec<&mut RunningStats> {
        self.layers_mut()
            .filter_map(|l| match l {
                Layer::BatchNorm { stats, .. } => Some(stats),
                _ => None,
            })
            .collect()
    }
}
