//! Ground truth from a high-resolution classification map: class fractions per
//! low-resolution pixel, Gaussian downsampling of the cube, and reference
//! endmembers averaged over pure pixels.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::types::{AbundanceMap, EndmemberMatrix, HsiCube};

/// Fraction of each `r×r` block of `labels` (`(r·H)×(r·W)`, row-major) carrying
/// each class in `0..classes`.
pub fn classmap_to_abundance(
    labels: &[usize],
    high_height: usize,
    high_width: usize,
    r: usize,
    classes: usize,
) -> Result<AbundanceMap> {
    if r == 0 || high_height % r != 0 || high_width % r != 0 {
        return Err(Error::dim(format!(
            "{high_height}×{high_width} label map is not divisible by factor {r}"
        )));
    }
    if labels.len() != high_height * high_width {
        return Err(Error::dim("label map length differs from its dimensions"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::config(format!("label {bad} outside 0..{classes}")));
    }
    let (h, w) = (high_height / r, high_width / r);
    let mut values = vec![0.0; h * w * classes];
    let area = (r * r) as f64;
    for row in 0..high_height {
        for col in 0..high_width {
            let p = (row / r) * w + col / r;
            values[p * classes + labels[row * high_width + col]] += 1.0;
        }
    }
    values.iter_mut().for_each(|v| *v /= area);
    AbundanceMap::new(h, w, classes, values)
}

/// Class means over pixels whose abundance for that class is at least `threshold`.
pub fn reference_endmembers_from_pure(
    cube: &HsiCube,
    gt: &AbundanceMap,
    threshold: f64,
) -> Result<EndmemberMatrix> {
    if cube.height != gt.height || cube.width != gt.width {
        return Err(Error::dim("cube and abundance map differ in size"));
    }
    let (b, c) = (cube.bands, gt.classes);
    let mut sums = DMatrix::<f64>::zeros(b, c);
    let mut counts = vec![0usize; c];
    for p in 0..cube.pixels() {
        let a = gt.pixel(p);
        for j in 0..c {
            if a[j] >= threshold {
                counts[j] += 1;
                let mut col = sums.column_mut(j);
                for (dst, &v) in col.iter_mut().zip(cube.pixel(p)) {
                    *dst += v;
                }
            }
        }
    }
    let missing: Vec<usize> = (0..c).filter(|&j| counts[j] == 0).collect();
    if !missing.is_empty() {
        return Err(Error::MissingPureClasses(missing));
    }
    for j in 0..c {
        let mut col = sums.column_mut(j);
        col /= counts[j] as f64;
    }
    EndmemberMatrix::new(sums, None)
}

/// Normalized 1-D Gaussian with σ = r/2, truncated at 2σ.
pub fn gaussian_kernel(r: usize) -> Vec<f64> {
    let sigma = r as f64 / 2.0;
    let radius = (2.0 * sigma).floor() as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Per-band separable Gaussian blur with periodic boundaries.
pub fn gaussian_blur(cube: &HsiCube, r: usize) -> Result<HsiCube> {
    if r == 0 {
        return Err(Error::config("downsampling factor must be positive"));
    }
    let (h, w, b) = (cube.height, cube.width, cube.bands);
    let k = gaussian_kernel(r);
    let radius = (k.len() / 2) as isize;
    let wrap = |i: isize, n: usize| i.rem_euclid(n as isize) as usize;
    let src = cube.data();
    let mut tmp = vec![0.0; src.len()];
    for row in 0..h {
        for col in 0..w {
            let dst = (row * w + col) * b;
            for (t, kv) in k.iter().enumerate() {
                let sc = wrap(col as isize + t as isize - radius, w);
                let s = (row * w + sc) * b;
                for band in 0..b {
                    tmp[dst + band] += kv * src[s + band];
                }
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for row in 0..h {
        for col in 0..w {
            let dst = (row * w + col) * b;
            for (t, kv) in k.iter().enumerate() {
                let sr = wrap(row as isize + t as isize - radius, h);
                let s = (sr * w + col) * b;
                for band in 0..b {
                    out[dst + band] += kv * tmp[s + band];
                }
            }
        }
    }
    HsiCube::new(h, w, b, cube.wavelengths.clone(), out)
}

/// [`gaussian_blur`] followed by keeping every `r`-th pixel, starting at `r/2`.
pub fn gaussian_downsample(cube: &HsiCube, r: usize) -> Result<HsiCube> {
    if r == 0 || cube.height % r != 0 || cube.width % r != 0 {
        return Err(Error::dim(format!(
            "{}×{} cube is not divisible by factor {r}",
            cube.height, cube.width
        )));
    }
    let blurred = gaussian_blur(cube, r)?;
    let (h, w, b) = (cube.height / r, cube.width / r, cube.bands);
    let off = r / 2;
    let mut data = Vec::with_capacity(h * w * b);
    for row in 0..h {
        for col in 0..w {
            data.extend_from_slice(blurred.pixel_at(row * r + off, col * r + off));
        }
    }
    HsiCube::new(h, w, b, cube.wavelengths.clone(), data)
}
