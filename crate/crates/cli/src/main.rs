//! `egunet` command-line tool.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical
//! failure, 4 I/O or file-format error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use egunet::baselines::BaselineMethod;
use egunet::egunet::{Ablation, Variant};
use egunet::Error;

use crate::config::RunConfig;

const AFTER_HELP: &str = "\
Settings are resolved in this order, later winning: built-in defaults, the
JSON file given with --config, then command-line flags. The resolved
configuration is written to <out>/<subcommand>.config.json; passing that file
back with --config reproduces the run.

Exit codes: 0 success, 2 usage/config error, 3 numerical failure, 4 I/O error.";

#[derive(Parser, Debug)]
#[command(name = "egunet", version, about = "Endmember-guided hyperspectral unmixing", after_help = AFTER_HELP)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true)]
    log_level: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene: cube, abundances and endmembers.
    Simulate(SimulateArgs),
    /// Build ground truth from a high-resolution cube and classification map.
    Gtchain(GtchainArgs),
    /// Extract an endmember bundle from a cube.
    Bundle(BundleArgs),
    /// Train the two-stream network.
    Train(TrainArgs),
    /// Estimate abundances with a trained network.
    Unmix(UnmixArgs),
    /// Recover endmembers from a cube and its abundances.
    Endmembers(EndmembersArgs),
    /// Run a least-squares or sparse-regression baseline.
    Baseline(BaselineArgs),
    /// Score estimates against ground truth.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    bands: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    /// Gaussian noise level in dB; `none` disables noise.
    #[arg(long)]
    snr_db: Option<String>,
    #[arg(long)]
    impulse_fraction: Option<f64>,
    #[arg(long)]
    pure_pixels: Option<usize>,
}

#[derive(Args, Debug)]
struct GtchainArgs {
    #[arg(long)]
    cube: Option<PathBuf>,
    /// CSV class map, one image row per line.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Downsampling factor.
    #[arg(long)]
    factor: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    purity_threshold: Option<f64>,
}

#[derive(Args, Debug)]
struct BundleArgs {
    #[arg(long)]
    cube: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    overlap: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    cube: Option<PathBuf>,
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// pw (pixel-wise) or ss (spatial-spectral).
    #[arg(long)]
    variant: Option<Variant>,
    /// full, ur_only or e_only.
    #[arg(long)]
    ablation: Option<Ablation>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Base learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Pixels per pw step; defaults to the bundle size.
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
}

#[derive(Args, Debug)]
struct UnmixArgs {
    #[arg(long)]
    cube: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EndmembersArgs {
    #[arg(long)]
    cube: Option<PathBuf>,
    #[arg(long)]
    abundances: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[arg(long)]
    cube: Option<PathBuf>,
    /// fclsu, pclsu or sunsal.
    #[arg(long, value_parser = parse_method)]
    method: Option<BaselineMethod>,
    /// Fixed endmembers; VCA on the cube when absent.
    #[arg(long)]
    endmembers: Option<PathBuf>,
    /// Endmember count for VCA; HySime estimate when absent.
    #[arg(long)]
    classes: Option<usize>,
    /// Sparsity weight for SUnSAL.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Alternating endmember updates; 0 keeps the endmembers fixed.
    #[arg(long)]
    blind_iterations: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    truth_endmembers: Option<PathBuf>,
    /// Repeat for Monte-Carlo aggregation.
    #[arg(long = "estimate")]
    estimates: Vec<PathBuf>,
    #[arg(long = "estimate-endmembers")]
    estimate_endmembers: Vec<PathBuf>,
}

fn parse_method(s: &str) -> Result<BaselineMethod, String> {
    match s {
        "fclsu" => Ok(BaselineMethod::Fclsu),
        "pclsu" => Ok(BaselineMethod::Pclsu),
        "sunsal" => Ok(BaselineMethod::Sunsal),
        other => Err(format!("unknown method {other:?} (fclsu, pclsu or sunsal)")),
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn set_some<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

/// Applies the subcommand's flags on top of `cfg`.
fn apply_flags(cfg: &mut RunConfig, command: Command) -> Result<&'static str, Error> {
    Ok(match command {
        Command::Simulate(a) => {
            let s = &mut cfg.simulate.scene;
            set(&mut s.height, a.height);
            set(&mut s.width, a.width);
            set(&mut s.bands, a.bands);
            set(&mut s.classes, a.classes);
            set(&mut s.impulse_fraction, a.impulse_fraction);
            set(&mut s.pure_pixels, a.pure_pixels);
            if let Some(v) = a.snr_db {
                s.snr_db = match v.as_str() {
                    "none" => None,
                    x => Some(x.parse().map_err(|e| Error::Config(format!("--snr-db {x}: {e}")))?),
                };
            }
            "simulate"
        }
        Command::Gtchain(a) => {
            let g = &mut cfg.gtchain;
            set_some(&mut g.cube, a.cube);
            set_some(&mut g.labels, a.labels);
            set(&mut g.factor, a.factor);
            set_some(&mut g.classes, a.classes);
            set(&mut g.purity_threshold, a.purity_threshold);
            "gtchain"
        }
        Command::Bundle(a) => {
            let b = &mut cfg.bundle;
            set_some(&mut b.cube, a.cube);
            set_some(&mut b.params.classes, a.classes);
            set_some(&mut b.params.block_size, a.block_size);
            set_some(&mut b.params.overlap, a.overlap);
            "bundle"
        }
        Command::Train(a) => {
            let t = &mut cfg.train;
            set_some(&mut t.cube, a.cube);
            set_some(&mut t.bundle, a.bundle);
            set(&mut t.params.variant, a.variant);
            set(&mut t.params.ablation, a.ablation);
            set(&mut t.params.epochs, a.epochs);
            set(&mut t.params.base_lr, a.lr);
            set_some(&mut t.params.batch_size, a.batch_size);
            set_some(&mut t.params.steps_per_epoch, a.steps_per_epoch);
            "train"
        }
        Command::Unmix(a) => {
            set_some(&mut cfg.unmix.cube, a.cube);
            set_some(&mut cfg.unmix.checkpoint, a.checkpoint);
            "unmix"
        }
        Command::Endmembers(a) => {
            set_some(&mut cfg.endmembers.cube, a.cube);
            set_some(&mut cfg.endmembers.abundances, a.abundances);
            "endmembers"
        }
        Command::Baseline(a) => {
            let b = &mut cfg.baseline;
            set_some(&mut b.cube, a.cube);
            set(&mut b.method, a.method);
            set_some(&mut b.endmembers, a.endmembers);
            set_some(&mut b.classes, a.classes);
            set(&mut b.params.lambda, a.lambda);
            set(&mut b.params.tol, a.tol);
            set(&mut b.params.max_iter, a.max_iter);
            set(&mut b.blind_iterations, a.blind_iterations);
            "baseline"
        }
        Command::Eval(a) => {
            let e = &mut cfg.eval;
            set_some(&mut e.truth, a.truth);
            set_some(&mut e.truth_endmembers, a.truth_endmembers);
            if !a.estimates.is_empty() {
                e.estimates = a.estimates;
            }
            if !a.estimate_endmembers.is_empty() {
                e.estimate_endmembers = a.estimate_endmembers;
            }
            "eval"
        }
    })
}

fn exit_code(err: &Error) -> u8 {
    if err.is_io() {
        4
    } else if err.is_numerical() {
        3
    } else {
        2
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = match &cli.global.config {
        Some(path) => config::load(path)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, cli.global.seed);
    set(&mut cfg.out_dir, cli.global.out);
    set_some(&mut cfg.threads, cli.global.threads);
    set(&mut cfg.log_level, cli.global.log_level);
    let name = apply_flags(&mut cfg, cli.command)?;

    let level: log::LevelFilter = cfg
        .log_level
        .parse()
        .map_err(|_| Error::Config(format!("unknown log level {:?}", cfg.log_level)))?;
    env_logger::Builder::new().filter_level(level).init();
    if let Some(n) = cfg.threads {
        if n == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    commands::run(name, &cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
