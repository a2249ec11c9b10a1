//! One function per subcommand. Each reads its section of the resolved
//! configuration, writes its outputs into `out_dir`, and finishes by writing
//! the configuration snapshot.

use std::fs;
use std::path::Path;

use egunet::baselines::{blind_unmix, unmix};
use egunet::bundles::{estimate_dimension, extract_bundles, vca};
use egunet::data::{
    classmap_to_abundance, export_abundance_images, gaussian_downsample, generate_scene,
    read_abundance, read_bundle, read_cube, read_dataset_header, read_endmembers,
    reference_endmembers_from_pure, write_dataset, Dataset, Provenance,
};
use egunet::egunet::{infer_abundances, load_checkpoint, save_checkpoint, train, EpochLog};
use egunet::post::{evaluate, recover_endmembers, EvalReport, MonteCarloReport};
use egunet::rng::{rng_from_seed, split_seed};
use egunet::types::{AbundanceMap, EndmemberMatrix, HsiCube};
use egunet::{Error, Result};
use log::info;

use crate::config::{self, required, RunConfig};

/// Seed streams derived from the root seed, one per randomized subcommand.
const SIMULATE_STREAM: u64 = 1;
const BUNDLE_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;
const BASELINE_STREAM: u64 = 4;

pub const CUBE_FILE: &str = "cube.hsu";
pub const ABUNDANCE_FILE: &str = "abundances.hsu";
pub const ENDMEMBER_FILE: &str = "endmembers.hsu";
pub const BUNDLE_FILE: &str = "bundle.hsu";
pub const CHECKPOINT_FILE: &str = "checkpoint.eguc";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const EVAL_JSON_FILE: &str = "eval.json";
pub const EVAL_TABLE_FILE: &str = "eval.txt";

pub fn run(name: &str, cfg: &RunConfig) -> Result<()> {
    let out = cfg.out_dir.as_path();
    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let mut resolved = cfg.clone();
    match name {
        "simulate" => simulate(cfg, out)?,
        "gtchain" => gtchain(cfg, out)?,
        "bundle" => bundle(cfg, out)?,
        "train" => {
            resolved.train.params.seed = split_seed(cfg.seed, TRAIN_STREAM);
            train_cmd(&resolved, out)?
        }
        "unmix" => unmix_cmd(cfg, out)?,
        "endmembers" => endmembers(cfg, out)?,
        "baseline" => baseline(cfg, out)?,
        "eval" => eval(cfg, out)?,
        other => return Err(Error::Config(format!("unknown subcommand {other}"))),
    }
    config::save(&resolved, &out.join(format!("{name}.config.json")))
}

fn provenance(cfg: &RunConfig, what: &str) -> Provenance {
    Provenance {
        seed: Some(cfg.seed),
        notes: format!("egunet {what}"),
    }
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let scene = generate_scene(&cfg.simulate.scene, split_seed(cfg.seed, SIMULATE_STREAM))?;
    let prov = provenance(cfg, "simulate");
    write_dataset(out.join(CUBE_FILE), &Dataset::Cube(scene.cube), &prov)?;
    write_dataset(out.join(ABUNDANCE_FILE), &Dataset::Abundance(scene.abundances), &prov)?;
    write_dataset(out.join(ENDMEMBER_FILE), &Dataset::Endmembers(scene.endmembers), &prov)?;
    info!("wrote scene to {}", out.display());
    Ok(())
}

fn read_labels(path: &Path) -> Result<(Vec<usize>, usize, usize)> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let bad = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    let mut labels = Vec::new();
    let mut width = None;
    let mut height = 0;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|e| bad(format!("line {}: {e}", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(bad(format!("line {} has {} labels", i + 1, row.len())));
        }
        labels.extend(row);
        height += 1;
    }
    Ok((labels, height, width.unwrap_or(0)))
}

fn gtchain(cfg: &RunConfig, out: &Path) -> Result<()> {
    let g = &cfg.gtchain;
    let cube = read_cube(required(&g.cube, "gtchain.cube")?)?;
    let (labels, hh, hw) = read_labels(required(&g.labels, "gtchain.labels")?)?;
    if (hh, hw) != (cube.height, cube.width) {
        return Err(Error::Dimension(format!(
            "label map is {hh}×{hw} but the cube is {}×{}",
            cube.height, cube.width
        )));
    }
    let classes = g
        .classes
        .unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
    let gt = classmap_to_abundance(&labels, hh, hw, g.factor, classes)?;
    let low = gaussian_downsample(&cube, g.factor)?;
    let endmembers = reference_endmembers_from_pure(&low, &gt, g.purity_threshold)?;
    let prov = provenance(cfg, "gtchain");
    write_dataset(out.join(CUBE_FILE), &Dataset::Cube(low), &prov)?;
    write_dataset(out.join(ABUNDANCE_FILE), &Dataset::Abundance(gt), &prov)?;
    write_dataset(out.join(ENDMEMBER_FILE), &Dataset::Endmembers(endmembers), &prov)
}

fn bundle(cfg: &RunConfig, out: &Path) -> Result<()> {
    let cube = read_cube(required(&cfg.bundle.cube, "bundle.cube")?)?;
    let b = extract_bundles(&cube, &cfg.bundle.params, split_seed(cfg.seed, BUNDLE_STREAM))?;
    info!("extracted {} signatures for {} classes", b.len(), b.classes());
    write_dataset(out.join(BUNDLE_FILE), &Dataset::Bundle(b), &provenance(cfg, "bundle"))
}

fn write_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut s = String::from("epoch,L_E,L_UR,L_O,lr\n");
    for e in log {
        s.push_str(&format!("{},{},{},{},{}\n", e.epoch, e.loss_e, e.loss_ur, e.loss_o, e.lr));
    }
    fs::write(path, s).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn train_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let t = &cfg.train;
    let cube = read_cube(required(&t.cube, "train.cube")?)?;
    let bundle = read_bundle(required(&t.bundle, "train.bundle")?)?;
    let (net, log) = train(&cube, &bundle, &t.params)?;
    save_checkpoint(out.join(CHECKPOINT_FILE), &net, t.params.seed)?;
    write_log(&out.join(TRAIN_LOG_FILE), &log)
}

fn write_abundances(cfg: &RunConfig, out: &Path, map: AbundanceMap, what: &str) -> Result<()> {
    export_abundance_images(&map, out)?;
    write_dataset(out.join(ABUNDANCE_FILE), &Dataset::Abundance(map), &provenance(cfg, what))
}

fn unmix_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let cube = read_cube(required(&cfg.unmix.cube, "unmix.cube")?)?;
    let (net, _) = load_checkpoint(required(&cfg.unmix.checkpoint, "unmix.checkpoint")?)?;
    let map = infer_abundances(&cube, &net)?;
    write_abundances(cfg, out, map, "unmix")
}

fn check_same_grid(cube: &HsiCube, map: &AbundanceMap) -> Result<()> {
    if (cube.height, cube.width) != (map.height, map.width) {
        return Err(Error::Dimension(format!(
            "cube is {}×{} but abundances are {}×{}",
            cube.height, cube.width, map.height, map.width
        )));
    }
    Ok(())
}

fn endmembers(cfg: &RunConfig, out: &Path) -> Result<()> {
    let cube = read_cube(required(&cfg.endmembers.cube, "endmembers.cube")?)?;
    let map = read_abundance(required(&cfg.endmembers.abundances, "endmembers.abundances")?)?;
    check_same_grid(&cube, &map)?;
    let e = recover_endmembers(&cube.band_matrix(), &map.class_matrix())?;
    write_dataset(out.join(ENDMEMBER_FILE), &Dataset::Endmembers(e), &provenance(cfg, "endmembers"))
}

fn baseline(cfg: &RunConfig, out: &Path) -> Result<()> {
    let b = &cfg.baseline;
    let cube = read_cube(required(&b.cube, "baseline.cube")?)?;
    let x = cube.band_matrix();
    let e0 = match &b.endmembers {
        Some(path) => read_endmembers(path)?.matrix,
        None => {
            let c = match b.classes {
                Some(c) => c,
                None => estimate_dimension(&x)?,
            };
            let mut rng = rng_from_seed(split_seed(cfg.seed, BASELINE_STREAM));
            vca(&x, c, &mut rng)?.endmembers
        }
    };
    if e0.nrows() != cube.bands {
        return Err(Error::Dimension(format!(
            "endmembers have {} bands, cube has {}",
            e0.nrows(),
            cube.bands
        )));
    }
    let (y, e) = if b.blind_iterations == 0 {
        (unmix(b.method, &x, &e0, &b.params)?, e0)
    } else {
        let r = blind_unmix(b.method, &x, &e0, &b.params, b.blind_iterations, b.blind_tol)?;
        (r.abundances, r.endmembers)
    };
    let map = AbundanceMap::from_class_matrix(cube.height, cube.width, &y)?;
    write_abundances(cfg, out, map, "baseline")?;
    write_dataset(
        out.join(ENDMEMBER_FILE),
        &Dataset::Endmembers(EndmemberMatrix::new(e, None)?),
        &provenance(cfg, "baseline"),
    )
}

fn eval(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ev = &cfg.eval;
    let truth = read_abundance(required(&ev.truth, "eval.truth")?)?;
    if ev.estimates.is_empty() {
        return Err(Error::Config("eval needs at least one estimate".into()));
    }
    let truth_e = ev.truth_endmembers.as_deref().map(read_endmembers).transpose()?;
    if !ev.estimate_endmembers.is_empty() {
        if ev.estimate_endmembers.len() != ev.estimates.len() {
            return Err(Error::Config(format!(
                "{} endmember estimates for {} abundance estimates",
                ev.estimate_endmembers.len(),
                ev.estimates.len()
            )));
        }
        if truth_e.is_none() {
            return Err(Error::Config("endmember estimates need eval.truth_endmembers".into()));
        }
    }
    let y_true = truth.class_matrix();
    let mut seeds = Vec::new();
    let mut runs = Vec::new();
    for (i, path) in ev.estimates.iter().enumerate() {
        let est = read_abundance(path)?;
        if (est.height, est.width, est.classes) != (truth.height, truth.width, truth.classes) {
            return Err(Error::Dimension(format!(
                "{} is {}×{}×{}, ground truth is {}×{}×{}",
                path.display(),
                est.height,
                est.width,
                est.classes,
                truth.height,
                truth.width,
                truth.classes
            )));
        }
        let e_est = ev.estimate_endmembers.get(i).map(read_endmembers).transpose()?;
        let pair = match (&truth_e, &e_est) {
            (Some(t), Some(e)) => Some((&t.matrix, &e.matrix)),
            _ => None,
        };
        runs.push(evaluate(&y_true, &est.class_matrix(), pair)?);
        seeds.push(read_dataset_header(path)?.seed.unwrap_or(i as u64));
    }
    let (json, table) = if runs.len() == 1 {
        let r: &EvalReport = &runs[0];
        (serde_json::to_string_pretty(r), r.to_table())
    } else {
        let mc = MonteCarloReport::new(seeds, runs)?;
        (serde_json::to_string_pretty(&mc), mc.to_table())
    };
    let json = json.map_err(|e| Error::Config(e.to_string()))? + "\n";
    for (name, text) in [(EVAL_JSON_FILE, &json), (EVAL_TABLE_FILE, &table)] {
        let path = out.join(name);
        fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?;
    }
    print!("{table}");
    Ok(())
}
