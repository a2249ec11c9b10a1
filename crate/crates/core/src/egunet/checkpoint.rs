//! Network checkpoints: a JSON header line (`magic: "EGUC"`) and the
//! parameters in declaration order followed by every batch-norm layer's
//! running mean and variance, all as little-endian `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{build_network, Ablation, Network, NetworkConfig, Variant, Widths};
use crate::data::framed::{read_framed, write_framed};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

pub const CHECKPOINT_MAGIC: &str = "EGUC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub magic: String,
    pub version: u32,
    pub variant: Variant,
    pub ablation: Ablation,
    #[serde(rename = "B")]
    pub bands: usize,
    #[serde(rename = "C")]
    pub classes: usize,
    pub widths: Widths,
    pub dropout_keep: f64,
    pub sharing_map: Vec<(usize, usize)>,
    pub epoch: usize,
    pub seed: u64,
    /// `(name, shape)` of every parameter tensor, in payload order.
    pub params: Vec<(String, Vec<usize>)>,
    /// Feature count of every batch-norm layer (endmember stream, encoder, decoder).
    pub running_stats: Vec<usize>,
}

impl CheckpointHeader {
    fn network_config(&self) -> NetworkConfig {
        NetworkConfig {
            variant: self.variant,
            bands: self.bands,
            classes: self.classes,
            widths: self.widths,
            dropout_keep: self.dropout_keep,
            ablation: self.ablation,
        }
    }
}

fn stats_of(net: &Network) -> Vec<usize> {
    [&net.e_net, &net.ur_encoder, &net.ur_decoder]
        .iter()
        .flat_map(|s| s.running_stats().into_iter().map(|r| r.mean.len()))
        .collect()
}

pub fn save_checkpoint(path: impl AsRef<Path>, net: &Network, seed: u64) -> Result<()> {
    let header = CheckpointHeader {
        magic: CHECKPOINT_MAGIC.into(),
        version: CHECKPOINT_VERSION,
        variant: net.config.variant,
        ablation: net.config.ablation,
        bands: net.config.bands,
        classes: net.config.classes,
        widths: net.config.widths,
        dropout_keep: net.config.dropout_keep,
        sharing_map: net.sharing_map(),
        epoch: net.epochs_trained,
        seed,
        params: net
            .params
            .iter()
            .map(|(id, t)| (net.params.name(id).to_string(), t.shape().to_vec()))
            .collect(),
        running_stats: stats_of(net),
    };
    let mut payload = Vec::with_capacity(net.params.scalar_count());
    for (_, t) in net.params.iter() {
        payload.extend_from_slice(t.data());
    }
    for seq in [&net.e_net, &net.ur_encoder, &net.ur_decoder] {
        for s in seq.running_stats() {
            payload.extend_from_slice(&s.mean);
            payload.extend_from_slice(&s.var);
        }
    }
    write_framed(path.as_ref(), &header, &payload)
}

/// Restores a network saved by [`save_checkpoint`]; returns it with its header.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Network, CheckpointHeader)> {
    let path = path.as_ref();
    let bad = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    let (header, values) = read_framed(path, |h: &CheckpointHeader| {
        if h.magic != CHECKPOINT_MAGIC || h.version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: format!("not a version-{CHECKPOINT_VERSION} checkpoint"),
            });
        }
        let p: usize = h.params.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        let s: usize = h.running_stats.iter().map(|d| 2 * d).sum();
        Ok(p + s)
    })?;
    let mut net = build_network(header.network_config(), &mut rng_from_seed(0))
        .map_err(|e| bad(e.to_string()))?;
    let layout: Vec<(String, Vec<usize>)> = net
        .params
        .iter()
        .map(|(id, t)| (net.params.name(id).to_string(), t.shape().to_vec()))
        .collect();
    if layout != header.params || stats_of(&net) != header.running_stats {
        return Err(bad("parameter layout does not match the network it describes".into()));
    }
    let mut rest = values.as_slice();
    for t in net.params.iter_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&rest[..n]);
        rest = &rest[n..];
    }
    for seq in [&mut net.e_net, &mut net.ur_encoder, &mut net.ur_decoder] {
        for s in seq.running_stats_mut() {
            let d = s.mean.len();
            s.mean.copy_from_slice(&rest[..d]);
            s.var.copy_from_slice(&rest[d..2 * d]);
            rest = &rest[2 * d..];
        }
    }
    net.epochs_trained = header.epoch;
    Ok((net, header))
}
