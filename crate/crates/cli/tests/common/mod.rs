//! Runs the binary over a small end-to-end pipeline.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_egunet");

/// Runs `egunet args…` inside `cwd` so every path in the snapshots is relative.
pub fn egunet(cwd: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(cwd)
        .args(args)
        .args(["--log-level", "warn", "--threads", "1"])
        .output()
        .expect("spawn egunet")
}

pub fn ok(cwd: &Path, args: &[&str]) -> Output {
    let out = egunet(cwd, args);
    assert!(
        out.status.success(),
        "egunet {args:?} failed with {:?}:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_labels(path: &Path, h: usize, w: usize) {
    let text: String = (0..h)
        .map(|r| {
            let row: Vec<String> = (0..w).map(|c| ((r / 4 + c / 4) % 3).to_string()).collect();
            row.join(",") + "\n"
        })
        .collect();
    fs::write(path, text).unwrap();
}

/// Every subcommand once, with one output directory per subcommand.
pub const SUBCOMMANDS: [&str; 8] =
    ["simulate", "gtchain", "bundle", "train", "unmix", "endmembers", "baseline", "eval"];

pub fn pipeline(root: &Path, seed: u64) {
    let s = seed.to_string();
    let seed_args = ["--seed", s.as_str()];
    let run = |args: &[&str]| {
        let mut all: Vec<&str> = args.to_vec();
        all.extend_from_slice(&seed_args);
        ok(root, &all)
    };
    run(&[
        "simulate", "--out", "simulate", "--height", "12", "--width", "12", "--bands", "16",
        "--classes", "3",
    ]);
    write_labels(&root.join("labels.csv"), 12, 12);
    run(&[
        "gtchain", "--out", "gtchain", "--cube", "simulate/cube.hsu", "--labels", "labels.csv",
        "--factor", "4", "--classes", "3", "--purity-threshold", "0.5",
    ]);
    run(&["bundle", "--out", "bundle", "--cube", "simulate/cube.hsu", "--classes", "3"]);
    run(&[
        "train", "--out", "train", "--cube", "simulate/cube.hsu", "--bundle", "bundle/bundle.hsu",
        "--epochs", "3",
    ]);
    run(&[
        "unmix", "--out", "unmix", "--cube", "simulate/cube.hsu", "--checkpoint",
        "train/checkpoint.eguc",
    ]);
    run(&[
        "baseline", "--out", "baseline", "--cube", "simulate/cube.hsu", "--method", "fclsu",
        "--classes", "3",
    ]);
    run(&[
        "endmembers", "--out", "endmembers", "--cube", "simulate/cube.hsu", "--abundances",
        "baseline/abundances.hsu",
    ]);
    run(&[
        "eval", "--out", "eval", "--truth", "simulate/abundances.hsu", "--truth-endmembers",
        "simulate/endmembers.hsu", "--estimate", "unmix/abundances.hsu", "--estimate",
        "baseline/abundances.hsu", "--estimate-endmembers", "endmembers/endmembers.hsu",
        "--estimate-endmembers", "baseline/endmembers.hsu",
    ]);
}

/// Relative path → contents for every file under `dir`.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    files
}

/// Subcommands whose output directories differ between the two roots.
pub fn differing_subcommands(a: &Path, b: &Path) -> Vec<String> {
    SUBCOMMANDS
        .iter()
        .filter(|name| {
            let (x, y) = (snapshot(&a.join(name)), snapshot(&b.join(name)));
            x.is_empty() || x != y
        })
        .map(|s| s.to_string())
        .collect()
}
