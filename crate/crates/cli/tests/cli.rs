mod common;

use common::{differing_subcommands, egunet, ok, pipeline, snapshot};
use std::fs;
use tempfile::TempDir;

#[test]
fn every_subcommand_is_byte_reproducible() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    pipeline(a.path(), 7);
    pipeline(b.path(), 7);
    assert_eq!(differing_subcommands(a.path(), b.path()), Vec::<String>::new());
    // A different seed changes the randomized outputs.
    let c = TempDir::new().unwrap();
    pipeline(c.path(), 8);
    let differ = differing_subcommands(a.path(), c.path());
    for name in ["simulate", "bundle", "train"] {
        assert!(differ.iter().any(|d| d == name), "{name} ignores the seed");
    }
}

#[test]
fn config_snapshot_reproduces_the_run() {
    let dir = TempDir::new().unwrap();
    pipeline(dir.path(), 3);
    let root = dir.path();
    for name in ["simulate", "bundle", "train", "baseline"] {
        let snap = format!("{name}/{name}.config.json");
        let again = format!("{name}_again");
        ok(root, &[name, "--config", &snap, "--out", &again]);
        let (x, y) = (snapshot(&root.join(name)), snapshot(&root.join(&again)));
        for (path, bytes) in &x {
            if path.extension().is_some_and(|e| e == "json") {
                continue;
            }
            assert_eq!(Some(bytes), y.get(path), "{name}: {} differs", path.display());
        }
    }
}

#[test]
fn eval_reports_mean_and_std_over_runs() {
    let dir = TempDir::new().unwrap();
    pipeline(dir.path(), 5);
    let table = fs::read_to_string(dir.path().join("eval/eval.txt")).unwrap();
    let header = table.lines().next().unwrap();
    assert!(header.contains("mean") && header.contains("std"), "{header}");
    assert!(table.contains("aRMSE") && table.contains("aSAD"));
    let json: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("eval/eval.json")).unwrap()).unwrap();
    assert_eq!(json["runs"].as_array().unwrap().len(), 2);
    let out = ok(
        dir.path(),
        &["eval", "--out", "single", "--truth", "simulate/abundances.hsu", "--estimate", "simulate/abundances.hsu"],
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let armse: f64 = text
        .lines()
        .find(|l| l.starts_with("aRMSE"))
        .and_then(|l| l.split_whitespace().nth(1))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(armse, 0.0);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let root = dir.path();
    ok(root, &["simulate", "--out", "sim", "--height", "10", "--width", "10", "--bands", "8", "--classes", "2"]);
    let labels: String = (0..10).map(|_| "0,1,0,1,0,1,0,1,0,1\n").collect();
    fs::write(root.join("labels.csv"), labels).unwrap();

    let code = |args: &[&str]| egunet(root, args).status.code();
    // 10 is not divisible by 4.
    assert_eq!(code(&["gtchain", "--cube", "sim/cube.hsu", "--labels", "labels.csv", "--factor", "4"]), Some(2));
    assert_eq!(code(&["bundle", "--cube", "missing.hsu"]), Some(4));
    assert_eq!(code(&["bundle", "--cube", "labels.csv"]), Some(4));
    assert_eq!(code(&["train", "--cube", "sim/cube.hsu", "--bundle", "sim/cube.hsu"]), Some(4));
    assert_eq!(code(&["simulate", "--bogus"]), Some(2));
    assert_eq!(code(&["bundle"]), Some(2));
    fs::write(root.join("bad.json"), r#"{"seed": 1, "nope": true}"#).unwrap();
    assert_eq!(code(&["simulate", "--config", "bad.json"]), Some(2));
    assert_eq!(code(&["simulate", "--out", "sim2", "--height", "10", "--width", "10", "--bands", "8", "--classes", "2"]), Some(0));
    assert!(root.join("sim2/simulate.config.json").exists());
}
