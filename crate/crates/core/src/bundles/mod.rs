//! Endmember-bundle extraction: block-wise VCA on overlapping windows,
//! pooling, k-means deduplication and FCLSU pseudo-labels. The result feeds
//! the endmember stream of the network as `(signature, label)` pairs.

mod hysime;
mod kmeans;
mod vca;

use log::{debug, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fclsu, DEFAULT_ASC_WEIGHT};
use crate::error::{Error, Result};
use crate::post::sad;
use crate::rng::{rng_from_seed, split_seed};
use crate::types::HsiCube;

pub use hysime::{estimate_dimension, estimate_noise, hysime, HysimeResult};
pub use kmeans::{kmeans, KMeansResult};
pub use vca::{numerical_rank, vca, VcaResult};

/// A rectangular window `(row, col, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    pub block_size: usize,
    pub overlap: usize,
    pub blocks: Vec<Window>,
}

fn starts(dim: usize, block: usize, stride: usize) -> Vec<usize> {
    let mut s = vec![0];
    let mut next = stride;
    while next + block < dim {
        s.push(next);
        next += stride;
    }
    if block < dim {
        s.push(dim - block);
    }
    s.dedup();
    s
}

/// Sliding square windows with stride `block_size − overlap`; the last window
/// along each axis is clamped to end at the image border.
pub fn partition_blocks(
    height: usize,
    width: usize,
    block_size: usize,
    overlap: usize,
) -> Result<BlockPartition> {
    if block_size <= overlap {
        return Err(Error::config(format!(
            "block size {block_size} must exceed the overlap {overlap}"
        )));
    }
    if block_size == 0 || block_size > height.min(width) {
        return Err(Error::config(format!(
            "block size {block_size} does not fit a {height}×{width} image"
        )));
    }
    let stride = block_size - overlap;
    let rows = starts(height, block_size, stride);
    let cols = starts(width, block_size, stride);
    let blocks = rows
        .iter()
        .flat_map(|&r| {
            cols.iter().map(move |&c| Window {
                row: r,
                col: c,
                height: block_size,
                width: block_size,
            })
        })
        .collect();
    Ok(BlockPartition {
        block_size,
        overlap,
        blocks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BundleConfig {
    /// Side of the square blocks; defaults to `ceil(0.4·min(H, W))`.
    pub block_size: Option<usize>,
    /// Defaults to a quarter of the block size.
    pub overlap: Option<usize>,
    /// Number of materials; estimated on the whole image when absent.
    pub classes: Option<usize>,
    /// Endmembers extracted per block; estimated per block when absent.
    pub block_classes: Option<usize>,
    /// Number of k-means clusters; defaults to `min(round(0.2·N), candidates)`.
    pub clusters: Option<usize>,
    pub kmeans_max_iter: usize,
    pub asc_weight: f64,
}

impl Default for BundleConfig {
    fn default() -> Self {
        BundleConfig {
            block_size: None,
            overlap: None,
            classes: None,
            block_classes: None,
            clusters: None,
            kmeans_max_iter: 100,
            asc_weight: DEFAULT_ASC_WEIGHT,
        }
    }
}

impl BundleConfig {
    pub fn resolved_block(&self, height: usize, width: usize) -> (usize, usize) {
        let block = self
            .block_size
            .unwrap_or_else(|| ((0.4 * height.min(width) as f64).ceil() as usize).max(1));
        let overlap = self.overlap.unwrap_or(block / 4);
        (block, overlap)
    }
}

/// Extracted pseudo-pure spectra and their soft labels. Every matrix stores
/// one spectrum or label per column.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberBundle {
    /// `bands×N_e`; each column is a pixel of the source cube.
    pub signatures: DMatrix<f64>,
    /// `classes×N_e` pseudo-abundances.
    pub labels: DMatrix<f64>,
    /// Cluster of each signature, in `[0, K)`.
    pub cluster_of: Vec<usize>,
    /// `bands×K`.
    pub cluster_means: DMatrix<f64>,
    /// Material class each cluster was matched to.
    pub cluster_class: Vec<usize>,
    /// `bands×C` endmembers extracted from the whole image; the labelling reference.
    pub reference_endmembers: DMatrix<f64>,
    /// Pixel index (`row·W + col`) of each signature.
    pub source_indices: Vec<usize>,
}

impl EndmemberBundle {
    pub fn len(&self) -> usize {
        self.signatures.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> usize {
        self.labels.nrows()
    }

    pub fn bands(&self) -> usize {
        self.signatures.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let c = self.classes();
        if self.labels.ncols() != n || self.cluster_of.len() != n || self.source_indices.len() != n {
            return Err(Error::dim("bundle fields disagree on the signature count"));
        }
        if self.reference_endmembers.shape() != (self.bands(), c)
            || self.cluster_means.nrows() != self.bands()
            || self.cluster_class.len() != self.cluster_means.ncols()
        {
            return Err(Error::dim("bundle matrices disagree on bands or classes"));
        }
        if n < c || self.cluster_means.ncols() < c {
            return Err(Error::Extraction(format!(
                "bundle has {n} signatures and {} clusters for {c} classes",
                self.cluster_means.ncols()
            )));
        }
        if self.cluster_of.iter().any(|&k| k >= self.cluster_means.ncols())
            || self.cluster_class.iter().any(|&k| k >= c)
        {
            return Err(Error::dim("bundle cluster index out of range"));
        }
        for col in self.labels.column_iter() {
            if col.iter().any(|&v| v < -1e-12 || !v.is_finite()) || (col.sum() - 1.0).abs() > 1e-6 {
                return Err(Error::Extraction("bundle labels violate the simplex constraints".into()));
            }
        }
        Ok(())
    }

    /// For each class, the cluster mean closest in angle to that class's
    /// reference endmember (`bands×C`).
    pub fn class_representatives(&self) -> Result<DMatrix<f64>> {
        let c = self.classes();
        let mut out = DMatrix::<f64>::zeros(self.bands(), c);
        for j in 0..c {
            let reference = self.reference_endmembers.column(j);
            let mut best = (0, f64::INFINITY);
            for k in 0..self.cluster_means.ncols() {
                let angle = sad(reference.as_slice(), self.cluster_means.column(k).as_slice())?;
                if angle < best.1 {
                    best = (k, angle);
                }
            }
            out.set_column(j, &self.cluster_means.column(best.0));
        }
        Ok(out)
    }
}

/// FCLSU pseudo-labels of `signatures` (`bands×N_e`) against `reference` (`bands×C`).
pub fn label_bundles(
    signatures: &DMatrix<f64>,
    reference: &DMatrix<f64>,
    asc_weight: f64,
) -> Result<DMatrix<f64>> {
    let cols = (0..signatures.ncols())
        .map(|i| fclsu(signatures.column(i).as_slice(), reference, asc_weight))
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_columns(&cols))
}

fn window_matrix(cube: &HsiCube, w: &Window) -> (DMatrix<f64>, Vec<usize>) {
    let mut idx = Vec::with_capacity(w.height * w.width);
    for r in w.row..w.row + w.height {
        for c in w.col..w.col + w.width {
            idx.push(r * cube.width + c);
        }
    }
    let m = DMatrix::from_fn(cube.bands, idx.len(), |b, i| cube.pixel(idx[i])[b]);
    (m, idx)
}

/// Runs the whole extraction chain on `cube`; deterministic for a given seed.
pub fn extract_bundles(cube: &HsiCube, cfg: &BundleConfig, seed: u64) -> Result<EndmemberBundle> {
    let (block, overlap) = cfg.resolved_block(cube.height, cube.width);
    let partition = partition_blocks(cube.height, cube.width, block, overlap)?;
    let x = cube.band_matrix();

    let classes = match cfg.classes {
        Some(c) => c,
        None => {
            let c = estimate_dimension(&x)?;
            debug!("estimated {c} materials on the whole image");
            c.max(1)
        }
    };
    if classes == 0 {
        return Err(Error::config("number of classes must be positive"));
    }

    let per_block: Vec<Vec<usize>> = partition
        .blocks
        .par_iter()
        .enumerate()
        .map(|(b, w)| {
            let (m, idx) = window_matrix(cube, w);
            let limit = numerical_rank(&m).min(m.ncols()).min(cube.bands);
            if limit == 0 {
                return Ok(vec![]);
            }
            let want = match cfg.block_classes {
                Some(c) => c,
                None => estimate_dimension(&m)?.max(1),
            };
            let c = want.min(limit);
            let mut rng = rng_from_seed(split_seed(seed, b as u64 + 1));
            let r = vca(&m, c, &mut rng)?;
            Ok(r.indices.into_iter().map(|i| idx[i]).collect())
        })
        .collect::<Result<_>>()?;

    let mut candidates: Vec<usize> = Vec::new();
    for i in per_block.into_iter().flatten() {
        if !candidates.contains(&i) {
            candidates.push(i);
        }
    }
    if candidates.len() < classes {
        return Err(Error::Extraction(format!(
            "only {} distinct candidates for {classes} classes",
            candidates.len()
        )));
    }

    let default_k = ((0.2 * cube.pixels() as f64).round() as usize).max(1);
    let mut k = cfg.clusters.unwrap_or(default_k).min(candidates.len());
    if let Some(req) = cfg.clusters {
        if req > candidates.len() {
            warn!("{req} clusters requested but only {} candidates; using {k}", candidates.len());
        }
    }
    if k < classes {
        k = classes;
    }
    let points = x.select_columns(&candidates);
    let mut rng = rng_from_seed(split_seed(seed, 0));
    let km = kmeans(&points, k, &mut rng, cfg.kmeans_max_iter)?;

    // One representative pixel per cluster: the member nearest its mean.
    let mut reps = vec![usize::MAX; k];
    let mut rep_dist = vec![f64::INFINITY; k];
    for (i, &a) in km.assignment.iter().enumerate() {
        let d = (points.column(i) - km.centers.column(a)).norm_squared();
        if d < rep_dist[a] {
            rep_dist[a] = d;
            reps[a] = i;
        }
    }
    let source_indices: Vec<usize> = reps.iter().map(|&i| candidates[i]).collect();
    let signatures = x.select_columns(&source_indices);
    let cluster_of: Vec<usize> = (0..k).collect();

    let mut rng = rng_from_seed(split_seed(seed, u64::MAX));
    let global = vca(&x, classes, &mut rng)?;
    let reference = global.endmembers;

    let cluster_class = (0..k)
        .map(|j| {
            let mean = km.centers.column(j);
            let mut best = (0, f64::INFINITY);
            for c in 0..classes {
                let angle = sad(reference.column(c).as_slice(), mean.as_slice())?;
                if angle < best.1 {
                    best = (c, angle);
                }
            }
            Ok(best.0)
        })
        .collect::<Result<Vec<_>>>()?;
    for c in 0..classes {
        if !cluster_class.contains(&c) {
            warn!("no bundle cluster was matched to class {c}");
        }
    }

    let labels = label_bundles(&signatures, &reference, cfg.asc_weight)?;
    let bundle = EndmemberBundle {
        signatures,
        labels,
        cluster_of,
        cluster_means: km.centers,
        cluster_class,
        reference_endmembers: reference,
        source_indices,
    };
    bundle.validate()?;
    Ok(bundle)
}
