//! Forward and backward kernels for every layer kind.
//!
//! Image tensors are `N×H×W×C` (channels last). Convolutions use stride 1 and
//! "same" zero padding with odd kernels; the transposed convolution is the exact
//! adjoint of the convolution for a shared kernel.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Tanh,
    Relu,
    Sigmoid,
    Softmax,
    None,
}

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

/// `input · W + b` over the trailing axis. `weights` is `d_in×d_out`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (d_in, d_out) = matrix_dims(weights, "dense weights")?;
    if input.last_dim() != d_in || bias.len() != d_out {
        return Err(Error::dim(format!(
            "dense: input {:?}, weights {:?}, bias {:?}",
            input.shape(),
            weights.shape(),
            bias.shape()
        )));
    }
    let rows = input.rows();
    let mut out = broadcast_rows(bias.data(), rows);
    gemm(rows, d_in, d_out, input.data(), false, weights.data(), false, 1.0, &mut out);
    let mut shape = input.shape().to_vec();
    *shape.last_mut().unwrap() = d_out;
    Tensor::new(shape, out)
}

/// Returns `(dL/dinput, dL/dW, dL/db)`.
pub fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (d_in, d_out) = matrix_dims(weights, "dense weights")?;
    let rows = input.rows();
    if grad_out.rows() != rows || grad_out.last_dim() != d_out {
        return Err(Error::dim("dense backward: upstream gradient shape"));
    }
    let mut gw = vec![0.0; d_in * d_out];
    gemm(d_in, rows, d_out, input.data(), true, grad_out.data(), false, 0.0, &mut gw);
    let gb = column_sums(grad_out.data(), d_out);
    let mut gx = vec![0.0; rows * d_in];
    gemm(rows, d_out, d_in, grad_out.data(), false, weights.data(), true, 0.0, &mut gx);
    Ok((
        Tensor::new(input.shape().to_vec(), gx)?,
        Tensor::new(weights.shape().to_vec(), gw)?,
        Tensor::new(vec![d_out], gb)?,
    ))
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
}

impl RunningStats {
    pub fn new(features: usize) -> Self {
        RunningStats {
            mean: vec![0.0; features],
            var: vec![1.0; features],
            momentum: BN_MOMENTUM,
        }
    }
}

/// Cached normalized activations for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Per-feature batch normalization over every axis but the last.
///
/// In training mode the minibatch z-score is used and `stats` is updated with an
/// exponential moving average; in inference mode `stats` is used as-is.
pub fn batchnorm_forward(
    z: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mode: Mode,
    stats: &mut RunningStats,
) -> Result<(Tensor, Option<BatchNormCache>)> {
    let d = z.last_dim();
    if gamma.len() != d || beta.len() != d || stats.mean.len() != d {
        return Err(Error::dim(format!(
            "batchnorm: input {:?} with {} scale / {} shift entries",
            z.shape(),
            gamma.len(),
            beta.len()
        )));
    }
    let m = z.rows();
    let g = gamma.data();
    let b = beta.data();
    let x = z.data();
    let mut out = vec![0.0; x.len()];
    match mode {
        Mode::Train => {
            if m < 2 {
                return Err(Error::DegenerateBatch(m));
            }
            let mean: Vec<f64> = column_sums(x, d).into_iter().map(|s| s / m as f64).collect();
            let mut var = vec![0.0; d];
            for row in x.chunks_exact(d) {
                for j in 0..d {
                    let c = row[j] - mean[j];
                    var[j] += c * c;
                }
            }
            var.iter_mut().for_each(|v| *v /= m as f64);
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
            let mut xhat = vec![0.0; x.len()];
            for (i, row) in x.chunks_exact(d).enumerate() {
                for j in 0..d {
                    let h = (row[j] - mean[j]) * inv_std[j];
                    xhat[i * d + j] = h;
                    out[i * d + j] = g[j] * h + b[j];
                }
            }
            let unbias = m as f64 / (m as f64 - 1.0);
            let mo = stats.momentum;
            for j in 0..d {
                stats.mean[j] = mo * stats.mean[j] + (1.0 - mo) * mean[j];
                stats.var[j] = mo * stats.var[j] + (1.0 - mo) * var[j] * unbias;
            }
            Ok((
                Tensor::new(z.shape().to_vec(), out)?,
                Some(BatchNormCache { xhat, inv_std }),
            ))
        }
        Mode::Infer => {
            let scale: Vec<f64> = (0..d)
                .map(|j| g[j] / (stats.var[j] + BN_EPSILON).sqrt())
                .collect();
            for (i, row) in x.chunks_exact(d).enumerate() {
                for j in 0..d {
                    out[i * d + j] = scale[j] * (row[j] - stats.mean[j]) + b[j];
                }
            }
            Ok((Tensor::new(z.shape().to_vec(), out)?, None))
        }
    }
}

/// Training-mode batch-norm gradient. Returns `(dL/dz, dL/dgamma, dL/dbeta)`.
pub fn batchnorm_backward(
    cache: &BatchNormCache,
    gamma: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let d = gamma.len();
    let go = grad_out.data();
    if go.len() != cache.xhat.len() || grad_out.last_dim() != d {
        return Err(Error::dim("batchnorm backward: upstream gradient shape"));
    }
    let m = go.len() / d;
    let mut ggamma = vec![0.0; d];
    let mut gbeta = vec![0.0; d];
    for (row, xh) in go.chunks_exact(d).zip(cache.xhat.chunks_exact(d)) {
        for j in 0..d {
            gbeta[j] += row[j];
            ggamma[j] += row[j] * xh[j];
        }
    }
    // dxhat = go·γ;  dz = inv_std/m · (m·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
    let g = gamma.data();
    let mf = m as f64;
    let mut gz = vec![0.0; go.len()];
    for (i, (row, xh)) in go.chunks_exact(d).zip(cache.xhat.chunks_exact(d)).enumerate() {
        for j in 0..d {
            let sum_dxhat = g[j] * gbeta[j];
            let sum_dxhat_xhat = g[j] * ggamma[j];
            gz[i * d + j] = cache.inv_std[j] / mf
                * (mf * g[j] * row[j] - sum_dxhat - xh[j] * sum_dxhat_xhat);
        }
    }
    Ok((
        Tensor::new(grad_out.shape().to_vec(), gz)?,
        Tensor::new(vec![d], ggamma)?,
        Tensor::new(vec![d], gbeta)?,
    ))
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

pub fn activation_forward(z: &Tensor, kind: ActivationKind) -> Tensor {
    let mut out = z.clone();
    match kind {
        ActivationKind::Tanh => out.data_mut().iter_mut().for_each(|v| *v = v.tanh()),
        ActivationKind::Relu => out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0)),
        ActivationKind::Sigmoid => out.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v)),
        ActivationKind::Softmax => {
            let d = z.last_dim();
            if d > 0 {
                out.data_mut().chunks_exact_mut(d).for_each(softmax_in_place);
            }
        }
        ActivationKind::None => {}
    }
    out
}

/// Gradient through an activation given its input `z` and output `a`.
pub fn activation_backward(
    z: &Tensor,
    a: &Tensor,
    kind: ActivationKind,
    grad_out: &Tensor,
) -> Result<Tensor> {
    if grad_out.len() != a.len() {
        return Err(Error::dim("activation backward: upstream gradient shape"));
    }
    let mut g = grad_out.clone();
    let gd = g.data_mut();
    match kind {
        ActivationKind::Tanh => {
            for (gv, av) in gd.iter_mut().zip(a.data()) {
                *gv *= 1.0 - av * av;
            }
        }
        ActivationKind::Relu => {
            for (gv, zv) in gd.iter_mut().zip(z.data()) {
                if *zv <= 0.0 {
                    *gv = 0.0;
                }
            }
        }
        ActivationKind::Sigmoid => {
            for (gv, av) in gd.iter_mut().zip(a.data()) {
                *gv *= av * (1.0 - av);
            }
        }
        ActivationKind::Softmax => {
            let d = a.last_dim();
            for (grow, arow) in gd.chunks_exact_mut(d).zip(a.data().chunks_exact(d)) {
                let s: f64 = grow.iter().zip(arow).map(|(x, y)| x * y).sum();
                for (gv, av) in grow.iter_mut().zip(arow) {
                    *gv = av * (*gv - s);
                }
            }
        }
        ActivationKind::None => {}
    }
    Ok(g)
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

/// Inverted dropout. Returns the output and the (already scaled) mask; the mask
/// is `None` in inference mode, where the layer is the identity.
pub fn dropout_forward<R: Rng + ?Sized>(
    a: &Tensor,
    keep_prob: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::config(format!(
            "dropout keep probability must be in (0, 1], got {keep_prob}"
        )));
    }
    if mode == Mode::Infer {
        return Ok((a.clone(), None));
    }
    let scale = 1.0 / keep_prob;
    let mask: Vec<f64> = if keep_prob == 1.0 {
        vec![1.0; a.len()]
    } else {
        (0..a.len())
            .map(|_| if rng.random::<f64>() < keep_prob { scale } else { 0.0 })
            .collect()
    };
    let mut out = a.clone();
    out.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
    Ok((out, Some(mask)))
}

pub fn dropout_backward(mask: &[f64], grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    g.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
    g
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

fn image_dims(t: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [n, h, w, c] => Ok((n, h, w, c)),
        _ => Err(Error::dim(format!("{what}: expected N×H×W×C, got {:?}", t.shape()))),
    }
}

fn kernel_dims(k: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match *k.shape() {
        [kh, kw, a, b] if kh % 2 == 1 && kw % 2 == 1 => Ok((kh, kw, a, b)),
        _ => Err(Error::dim(format!(
            "kernel must be kh×kw×c×c with odd kh, kw; got {:?}",
            k.shape()
        ))),
    }
}

/// Gathers same-padded patches: row `(n, y, x)`, column `(dy, dx, c)`.
fn im2col(x: &[f64], n: usize, h: usize, w: usize, c: usize, kh: usize, kw: usize) -> Vec<f64> {
    if kh == 1 && kw == 1 {
        return x.to_vec();
    }
    let (ph, pw) = (kh / 2, kw / 2);
    let width = kh * kw * c;
    let mut cols = vec![0.0; n * h * w * width];
    for b in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let row = ((b * h + y) * w + xx) * width;
                for dy in 0..kh {
                    let sy = y as isize + dy as isize - ph as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for dx in 0..kw {
                        let sx = xx as isize + dx as isize - pw as isize;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let src = ((b * h + sy as usize) * w + sx as usize) * c;
                        let dst = row + (dy * kw + dx) * c;
                        cols[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
    cols
}

/// Exact transpose of [`im2col`]: scatter-adds patch columns back into an image.
#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
) -> Vec<f64> {
    if kh == 1 && kw == 1 {
        return cols.to_vec();
    }
    let (ph, pw) = (kh / 2, kw / 2);
    let width = kh * kw * c;
    let mut x = vec![0.0; n * h * w * c];
    for b in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let row = ((b * h + y) * w + xx) * width;
                for dy in 0..kh {
                    let sy = y as isize + dy as isize - ph as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for dx in 0..kw {
                        let sx = xx as isize + dx as isize - pw as isize;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let dst = ((b * h + sy as usize) * w + sx as usize) * c;
                        let src = row + (dy * kw + dx) * c;
                        for k in 0..c {
                            x[dst + k] += cols[src + k];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Same-padded stride-1 cross-correlation. `kernel` is `kh×kw×c_in×c_out`.
pub fn conv2d_forward(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, h, w, c) = image_dims(input, "conv2d input")?;
    let (kh, kw, c_in, c_out) = kernel_dims(kernel)?;
    if c != c_in || bias.len() != c_out {
        return Err(Error::dim(format!(
            "conv2d: input has {c} channels, kernel {:?}, bias {}",
            kernel.shape(),
            bias.len()
        )));
    }
    let cols = im2col(input.data(), n, h, w, c, kh, kw);
    let rows = n * h * w;
    let mut out = broadcast_rows(bias.data(), rows);
    gemm(rows, kh * kw * c_in, c_out, &cols, false, kernel.data(), false, 1.0, &mut out);
    Tensor::new(vec![n, h, w, c_out], out)
}

/// Returns `(dL/dinput, dL/dkernel, dL/dbias)`.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, h, w, c) = image_dims(input, "conv2d input")?;
    let (kh, kw, c_in, c_out) = kernel_dims(kernel)?;
    if grad_out.shape() != [n, h, w, c_out] || c != c_in {
        return Err(Error::dim("conv2d backward: upstream gradient shape"));
    }
    let rows = n * h * w;
    let width = kh * kw * c_in;
    let cols = im2col(input.data(), n, h, w, c, kh, kw);
    let mut gk = vec![0.0; width * c_out];
    gemm(width, rows, c_out, &cols, true, grad_out.data(), false, 0.0, &mut gk);
    let gb = column_sums(grad_out.data(), c_out);
    let mut gcols = vec![0.0; rows * width];
    gemm(rows, c_out, width, grad_out.data(), false, kernel.data(), true, 0.0, &mut gcols);
    let gx = col2im(&gcols, n, h, w, c, kh, kw);
    Ok((
        Tensor::new(input.shape().to_vec(), gx)?,
        Tensor::new(kernel.shape().to_vec(), gk)?,
        Tensor::new(vec![c_out], gb)?,
    ))
}

/// Stride-1 transposed convolution with same padding.
///
/// `kernel` is laid out `kh×kw×c_out×c_in` (the layout of a convolution kernel
/// mapping `c_out → c_in`), so `deconv2d_forward(y, K)` without bias is the exact
/// adjoint of `conv2d_forward(·, K)`.
pub fn deconv2d_forward(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, h, w, c) = image_dims(input, "deconv2d input")?;
    let (kh, kw, c_out, c_in) = kernel_dims(kernel)?;
    if c != c_in || bias.len() != c_out {
        return Err(Error::dim(format!(
            "deconv2d: input has {c} channels, kernel {:?}, bias {}",
            kernel.shape(),
            bias.len()
        )));
    }
    let rows = n * h * w;
    let width = kh * kw * c_out;
    let mut cols = vec![0.0; rows * width];
    gemm(rows, c_in, width, input.data(), false, kernel.data(), true, 0.0, &mut cols);
    let mut out = col2im(&cols, n, h, w, c_out, kh, kw);
    for px in out.chunks_exact_mut(c_out) {
        px.iter_mut().zip(bias.data()).for_each(|(v, b)| *v += b);
    }
    Tensor::new(vec![n, h, w, c_out], out)
}

/// Returns `(dL/dinput, dL/dkernel, dL/dbias)`.
pub fn deconv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, h, w, c) = image_dims(input, "deconv2d input")?;
    let (kh, kw, c_out, c_in) = kernel_dims(kernel)?;
    if grad_out.shape() != [n, h, w, c_out] || c != c_in {
        return Err(Error::dim("deconv2d backward: upstream gradient shape"));
    }
    let rows = n * h * w;
    let width = kh * kw * c_out;
    let gcols = im2col(grad_out.data(), n, h, w, c_out, kh, kw);
    let mut gx = vec![0.0; rows * c_in];
    gemm(rows, width, c_in, &gcols, false, kernel.data(), false, 0.0, &mut gx);
    let mut gk = vec![0.0; width * c_in];
    gemm(width, rows, c_in, &gcols, true, input.data(), false, 0.0, &mut gk);
    let gb = column_sums(grad_out.data(), c_out);
    Ok((
        Tensor::new(input.shape().to_vec(), gx)?,
        Tensor::new(kernel.shape().to_vec(), gk)?,
        Tensor::new(vec![c_out], gb)?,
    ))
}

// ---------------------------------------------------------------------------
// Average pooling
// ---------------------------------------------------------------------------

/// 2×2 average pooling, stride 1, "same" padding (the window hangs over the
/// bottom/right edge and averages only the pixels inside the image).
pub fn avgpool2d(input: &Tensor) -> Result<Tensor> {
    let (n, h, w, c) = image_dims(input, "avgpool input")?;
    let x = input.data();
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for y in 0..h {
            let y1 = (y + 1).min(h - 1);
            for xx in 0..w {
                let x1 = (xx + 1).min(w - 1);
                let count = ((y1 - y + 1) * (x1 - xx + 1)) as f64;
                let dst = ((b * h + y) * w + xx) * c;
                for sy in y..=y1 {
                    for sx in xx..=x1 {
                        let src = ((b * h + sy) * w + sx) * c;
                        for k in 0..c {
                            out[dst + k] += x[src + k];
                        }
                    }
                }
                out[dst..dst + c].iter_mut().for_each(|v| *v /= count);
            }
        }
    }
    Tensor::new(input.shape().to_vec(), out)
}

pub fn avgpool2d_backward(grad_out: &Tensor) -> Result<Tensor> {
    let (n, h, w, c) = image_dims(grad_out, "avgpool gradient")?;
    let g = grad_out.data();
    let mut gx = vec![0.0; g.len()];
    for b in 0..n {
        for y in 0..h {
            let y1 = (y + 1).min(h - 1);
            for xx in 0..w {
                let x1 = (xx + 1).min(w - 1);
                let count = ((y1 - y + 1) * (x1 - xx + 1)) as f64;
                let src = ((b * h + y) * w + xx) * c;
                for sy in y..=y1 {
                    for sx in xx..=x1 {
                        let dst = ((b * h + sy) * w + sx) * c;
                        for k in 0..c {
                            gx[dst + k] += g[src + k] / count;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(grad_out.shape().to_vec(), gx)
}

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------

fn matrix_dims(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [a, b] => Ok((a, b)),
        _ => Err(Error::dim(format!("{what}: expected a matrix, got {:?}", t.shape()))),
    }
}

fn broadcast_rows(bias: &[f64], rows: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * bias.len());
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    out
}

fn column_sums(x: &[f64], d: usize) -> Vec<f64> {
    let mut s = vec![0.0; d];
    for row in x.chunks_exact(d) {
        s.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    s
}
