//! Synthetic scenes: smooth parametric spectra, spatially correlated
//! abundances, per-pixel illumination scaling, Gaussian and impulse noise.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::post::sad;
use crate::rng::{rng_from_seed, split_seed};
use crate::types::{AbundanceMap, EndmemberMatrix, HsiCube};

/// Value written into impulse-corrupted entries.
pub const IMPULSE_VALUE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub classes: usize,
    /// First and last band centre, µm.
    pub wavelength_range: [f64; 2],
    /// Gaussian absorption features per endmember.
    pub absorptions: usize,
    /// Minimum pairwise spectral angle between endmembers, radians.
    pub min_angle: f64,
    /// Correlation length of the abundance fields, pixels.
    pub correlation_length: f64,
    /// Softmax temperature; smaller gives purer pixels.
    pub temperature: f64,
    /// Pixels per class forced to be exactly pure.
    pub pure_pixels: usize,
    /// Per-pixel scaling factor range `[s_lo, s_hi]`.
    pub scale_range: [f64; 2],
    /// Gaussian noise level; `None` disables it.
    pub snr_db: Option<f64>,
    /// Fraction of pixel-band entries replaced by [`IMPULSE_VALUE`].
    pub impulse_fraction: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            height: 50,
            width: 50,
            bands: 100,
            classes: 4,
            wavelength_range: [0.4, 2.5],
            absorptions: 4,
            min_angle: 0.15,
            correlation_length: 6.0,
            temperature: 0.25,
            pure_pixels: 0,
            scale_range: [0.75, 1.25],
            snr_db: Some(30.0),
            impulse_fraction: 0.005,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::config("scene needs at least one pixel"));
        }
        if self.classes < 1 || self.classes > 8 {
            return Err(Error::config(format!("classes must be in 1..=8, got {}", self.classes)));
        }
        if self.bands < 2 || self.bands <= self.classes {
            return Err(Error::config("need more bands than classes (and at least 2)"));
        }
        let [lo, hi] = self.wavelength_range;
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::config("wavelength range must be positive and increasing"));
        }
        let [s_lo, s_hi] = self.scale_range;
        if !(s_lo > 0.0 && s_hi >= s_lo) {
            return Err(Error::config("scale range needs 0 < s_lo ≤ s_hi"));
        }
        if let Some(snr) = self.snr_db {
            if !(snr > 0.0) {
                return Err(Error::config("SNR must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.impulse_fraction) {
            return Err(Error::config("impulse fraction must be in [0, 1]"));
        }
        if !(self.temperature > 0.0) || !(self.correlation_length > 0.0) {
            return Err(Error::config("temperature and correlation length must be positive"));
        }
        if self.pure_pixels * self.classes > self.height * self.width {
            return Err(Error::config("more pure pixels requested than the scene has"));
        }
        if !(self.min_angle >= 0.0 && self.min_angle < 1.0) {
            return Err(Error::config("minimum endmember angle must be in [0, 1) rad"));
        }
        Ok(())
    }

    pub fn wavelengths(&self) -> Vec<f64> {
        let [lo, hi] = self.wavelength_range;
        let b = self.bands;
        (0..b).map(|i| lo + (hi - lo) * i as f64 / (b - 1) as f64).collect()
    }
}

/// A generated scene with its ground truth.
#[derive(Debug, Clone)]
pub struct Scene {
    pub cube: HsiCube,
    pub abundances: AbundanceMap,
    pub endmembers: EndmemberMatrix,
    /// Per-pixel scaling factors.
    pub scales: Vec<f64>,
}

fn spectrum<R: Rng + ?Sized>(wl: &[f64], spec: &SceneSpec, rng: &mut R) -> Vec<f64> {
    let [lo, hi] = spec.wavelength_range;
    let span = hi - lo;
    let base = rng.random_range(0.3..0.7);
    let slope = rng.random_range(-0.3..0.3);
    let curve = rng.random_range(-0.2..0.2);
    let features: Vec<(f64, f64, f64)> = (0..spec.absorptions)
        .map(|_| {
            (
                rng.random_range(lo..hi),
                rng.random_range(0.03..0.15) * span / 2.1,
                rng.random_range(0.1..0.6),
            )
        })
        .collect();
    wl.iter()
        .map(|&l| {
            let t = (l - lo) / span;
            let mut v = base + slope * (t - 0.5) + curve * (t - 0.5) * (t - 0.5);
            for &(mu, w, depth) in &features {
                v *= 1.0 - depth * (-(l - mu) * (l - mu) / (2.0 * w * w)).exp();
            }
            v.clamp(0.02, 0.98)
        })
        .collect()
}

fn endmembers<R: Rng + ?Sized>(wl: &[f64], spec: &SceneSpec, rng: &mut R) -> Result<DMatrix<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut attempts = 0;
    while cols.len() < spec.classes {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::config(
                "could not draw endmembers separated by the minimum angle",
            ));
        }
        let s = spectrum(wl, spec, rng);
        let far = cols
            .iter()
            .all(|c| sad(c, &s).map(|a| a >= spec.min_angle).unwrap_or(false));
        if far {
            cols.push(s);
        }
    }
    Ok(DMatrix::from_fn(spec.bands, spec.classes, |b, j| cols[j][b]))
}

/// Separable periodic Gaussian blur of an `h×w` field.
fn blur_periodic(field: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let ksum: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / ksum).collect();
    let wrap = |i: isize, n: usize| i.rem_euclid(n as isize) as usize;
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * field[r * w + wrap(c as isize + k as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[wrap(r as isize + k as isize - radius, h) * w + c])
                .sum();
        }
    }
    out
}

fn abundance_fields<R: Rng + ?Sized>(spec: &SceneSpec, rng: &mut R) -> Vec<f64> {
    let (h, w, c) = (spec.height, spec.width, spec.classes);
    let n = h * w;
    let fields: Vec<Vec<f64>> = (0..c)
        .map(|_| {
            let white: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let mut f = blur_periodic(&white, h, w, spec.correlation_length);
            let mean = f.iter().sum::<f64>() / n as f64;
            let sd = (f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            let sd = if sd > 0.0 { sd } else { 1.0 };
            f.iter_mut().for_each(|v| *v = (*v - mean) / sd);
            f
        })
        .collect();
    let mut values = vec![0.0; n * c];
    for p in 0..n {
        let logits: Vec<f64> = (0..c).map(|j| fields[j][p] / spec.temperature).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        for j in 0..c {
            values[p * c + j] = e[j] / s;
        }
    }
    values
}

/// Generates a scene; identical `(spec, seed)` give bit-identical output.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let wl = spec.wavelengths();
    let (h, w, b, c) = (spec.height, spec.width, spec.bands, spec.classes);
    let n = h * w;

    let e = endmembers(&wl, spec, &mut rng_from_seed(split_seed(seed, 10)))?;
    let mut a = abundance_fields(spec, &mut rng_from_seed(split_seed(seed, 11)));

    if spec.pure_pixels > 0 {
        let mut rng = rng_from_seed(split_seed(seed, 15));
        let picks = rand::seq::index::sample(&mut rng, n, spec.pure_pixels * c);
        for (k, p) in picks.iter().enumerate() {
            let class = k % c;
            for j in 0..c {
                a[p * c + j] = if j == class { 1.0 } else { 0.0 };
            }
        }
    }

    let mut rng = rng_from_seed(split_seed(seed, 12));
    let [s_lo, s_hi] = spec.scale_range;
    let scales: Vec<f64> = (0..n)
        .map(|_| if s_hi > s_lo { rng.random_range(s_lo..s_hi) } else { s_lo })
        .collect();

    let mut x = vec![0.0; n * b];
    for p in 0..n {
        for band in 0..b {
            let mut v = 0.0;
            for j in 0..c {
                v += e[(band, j)] * a[p * c + j];
            }
            x[p * b + band] = scales[p] * v;
        }
    }

    if let Some(snr) = spec.snr_db {
        let power = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        let sigma = (power / 10f64.powf(snr / 10.0)).sqrt();
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::config(e.to_string()))?;
        let mut rng = rng_from_seed(split_seed(seed, 13));
        x.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    if spec.impulse_fraction > 0.0 {
        let mut rng = rng_from_seed(split_seed(seed, 14));
        for v in x.iter_mut() {
            if rng.random::<f64>() < spec.impulse_fraction {
                *v = IMPULSE_VALUE;
            }
        }
    }

    let names = (0..c).map(|j| format!("material_{j}")).collect();
    Ok(Scene {
        cube: HsiCube::new(h, w, b, Some(wl), x)?,
        abundances: AbundanceMap::new(h, w, c, a)?,
        endmembers: EndmemberMatrix::new(e, Some(names))?,
        scales,
    })
}
