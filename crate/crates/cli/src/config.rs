//! The declarative run configuration. A JSON file supplies any subset of it,
//! command-line flags override the file, and the fully resolved result is
//! written next to the outputs as `<subcommand>.config.json`.

use std::path::{Path, PathBuf};

use egunet::baselines::{BaselineMethod, SolverConfig};
use egunet::bundles::BundleConfig;
use egunet::data::SceneSpec;
use egunet::egunet::TrainConfig;
use egunet::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed; every subcommand derives its own stream from it.
    pub seed: u64,
    /// Worker threads; all cores when absent.
    pub threads: Option<usize>,
    pub out_dir: PathBuf,
    pub log_level: String,
    pub simulate: SimulateSection,
    pub gtchain: GtchainSection,
    pub bundle: BundleSection,
    pub train: TrainSection,
    pub unmix: UnmixSection,
    pub endmembers: EndmembersSection,
    pub baseline: BaselineSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: None,
            out_dir: PathBuf::from("out"),
            log_level: "info".into(),
            simulate: Default::default(),
            gtchain: Default::default(),
            bundle: Default::default(),
            train: Default::default(),
            unmix: Default::default(),
            endmembers: Default::default(),
            baseline: Default::default(),
            eval: Default::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub scene: SceneSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GtchainSection {
    /// High-resolution cube.
    pub cube: Option<PathBuf>,
    /// Classification map as CSV: one line per image row, class indices.
    pub labels: Option<PathBuf>,
    /// Downsampling factor `r`.
    pub factor: usize,
    /// Class count; one more than the largest label when absent.
    pub classes: Option<usize>,
    pub purity_threshold: f64,
}

impl Default for GtchainSection {
    fn default() -> Self {
        GtchainSection {
            cube: None,
            labels: None,
            factor: 4,
            classes: None,
            purity_threshold: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BundleSection {
    pub cube: Option<PathBuf>,
    pub params: BundleConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub cube: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
    /// `params.seed` is always replaced by the stream derived from the root seed.
    pub params: TrainConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnmixSection {
    pub cube: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EndmembersSection {
    pub cube: Option<PathBuf>,
    pub abundances: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub cube: Option<PathBuf>,
    pub method: BaselineMethod,
    /// Fixed endmembers; extracted with VCA when absent.
    pub endmembers: Option<PathBuf>,
    /// Material count for VCA; estimated with HySime when absent.
    pub classes: Option<usize>,
    /// Alternating endmember updates after the first solve; 0 keeps them fixed.
    pub blind_iterations: usize,
    pub blind_tol: f64,
    pub params: SolverConfig,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection {
            cube: None,
            method: BaselineMethod::Fclsu,
            endmembers: None,
            classes: None,
            blind_iterations: 0,
            blind_tol: 1e-6,
            params: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub truth: Option<PathBuf>,
    pub truth_endmembers: Option<PathBuf>,
    /// One estimate per run; more than one gives mean ± std over runs.
    pub estimates: Vec<PathBuf>,
    /// Endmember estimates, parallel to `estimates`, or empty.
    pub estimate_endmembers: Vec<PathBuf>,
}

pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn save(cfg: &RunConfig, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(cfg).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// The input path named by `field`, or a configuration error.
pub fn required<'a>(value: &'a Option<PathBuf>, field: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("missing input `{field}`")))
}
