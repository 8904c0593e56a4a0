// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn irdrop(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irdrop"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = irdrop(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    irdrop(dir, args).status.code().expect("exit code")
}

fn design_toml(name: &str, seed: u64) -> String {
    format!(
        "name = \"{name}\"\nwidth = 48.0\nheight = 48.0\ncells = 2500\nclusters = 3\n\
         cluster_sigma = [3.0, 5.0]\ncluster_density = 1.0\nhotspot_fraction = 0.02\nseed = {seed}\n"
    )
}

const TRAIN: &str = "n = 4\nepochs = 1\ntiles_per_epoch = 64\nmax_val_tiles = 16\nk = 7\n";

#[test]
fn single_stage_commands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("gen.toml"), design_toml("solo", 4)).unwrap();
    ok(d, &["gen", "--params", "gen.toml", "--out", "d.csv"]);
    ok(d, &["gen", "--params", "gen.toml", "--out", "again.csv"]);
    assert_eq!(fs::read(d.join("d.csv")).unwrap(), fs::read(d.join("again.csv")).unwrap());

    fs::write(d.join("pdn.toml"), "[variation]\njitter = 0.3\nseed = 1\n").unwrap();
    ok(d, &["decompose", "--design", "d.csv", "--l", "2", "--n", "6", "--out", "maps"]);
    assert!(d.join("maps/p_t_0006.tgrid").exists());
    assert!(!d.join("maps/p_t_0007.tgrid").exists());
    ok(d, &["decompose", "--design", "d.csv", "--n", "6", "--prnet", "--pdn", "pdn.toml", "--out", "scaled"]);
    assert_ne!(fs::read(d.join("maps/p_all.tgrid")).unwrap(), fs::read(d.join("scaled/p_all.tgrid")).unwrap());

    ok(d, &["label", "--design", "d.csv", "--instants", "10", "--out", "ir.tgrid"]);
    ok(d, &["label", "--design", "d.csv", "--instants", "10", "--out", "ir2.tgrid"]);
    assert_eq!(fs::read(d.join("ir.tgrid")).unwrap(), fs::read(d.join("ir2.tgrid")).unwrap());

    let out = ok(d, &["eval", "--pred", "ir.tgrid", "--label", "ir.tgrid", "--threshold", "0.012", "--roc-csv", "roc.csv"]);
    let rows: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 2);
    assert_eq!(rows[0]["auc"], 1.0);
    assert_eq!(rows[0]["kendall_tau"], 1.0);
    assert_eq!(rows[1]["granularity"], 5);
    assert!(fs::read_to_string(d.join("roc.csv")).unwrap().starts_with("threshold"));
}

#[test]
fn exit_codes_separate_bad_input_from_other_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    // missing file: plain failure
    assert_eq!(code(d, &["decompose", "--design", "missing.csv", "--out", "m"]), 1);
    // malformed config: validation
    fs::write(d.join("bad.toml"), "cells = \"many\"\n").unwrap();
    assert_eq!(code(d, &["gen", "--params", "bad.toml", "--out", "x.csv"]), 2);
    fs::write(d.join("unknown.toml"), "no_such_field = 1\n").unwrap();
    assert_eq!(code(d, &["gen", "--params", "unknown.toml", "--out", "x.csv"]), 2);
    assert_eq!(code(d, &["--threads", "0", "gen", "--out", "x.csv"]), 2);
    // resistance scaling without resistances
    fs::write(d.join("gen.toml"), design_toml("solo", 5)).unwrap();
    ok(d, &["gen", "--params", "gen.toml", "--out", "d.csv"]);
    assert_eq!(code(d, &["decompose", "--design", "d.csv", "--prnet", "--out", "m"]), 2);
    // an all-zero label has no hotspots, so the AUC is undefined
    ok(d, &["label", "--design", "d.csv", "--instants", "4", "--out", "ir.tgrid"]);
    assert_eq!(code(d, &["eval", "--pred", "ir.tgrid", "--label", "ir.tgrid", "--threshold", "1.0", "--roc-csv", "r.csv"]), 3);
}

fn experiment(seed_offset: u64) -> String {
    let mut s = format!("label_instants = 8\n\n[train]\n{TRAIN}seed = {seed_offset}\n\n[mitigate]\nbudget = 20\n");
    for (i, name) in ["a", "b", "c"].iter().enumerate() {
        s += "\n[[designs]]\n";
        s += &design_toml(name, 10 + i as u64);
    }
    s
}

#[test]
fn pipeline_leave_one_out_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("exp.toml"), experiment(0)).unwrap();
    ok(d, &["--threads", "1", "pipeline", "--config", "exp.toml", "--out", "r1"]);
    ok(d, &["pipeline", "--config", "exp.toml", "--out", "r2", "--emit-heatmaps"]);
    for name in ["a", "b", "c"] {
        let fold = d.join("r1/folds").join(name);
        assert!(fold.join("report.json").exists());
        assert!(fold.join("mitigation.json").exists());
        let f: serde_json::Value = serde_json::from_slice(&fs::read(fold.join("fold.json")).unwrap()).unwrap();
        let train: Vec<&str> = f["train_designs"].as_array().unwrap().iter().map(|p| p[0].as_str().unwrap()).collect();
        assert_eq!(train.len(), 2);
        assert!(!train.contains(&name));
        assert!(d.join("r2/folds").join(name).join("heatmaps/ir_pred.png").exists());
    }
    let manifest = |r: &str| -> serde_json::Value { serde_json::from_slice(&fs::read(d.join(r).join("manifest.json")).unwrap()).unwrap() };
    let (m1, m2) = (manifest("r1"), manifest("r2"));
    // heatmaps and the flag itself differ; every shared artifact matches
    for (path, hash) in m1["files"].as_object().unwrap() {
        if path != "config.json" {
            assert_eq!(&m2["files"][path], hash, "{path}");
        }
    }
    ok(d, &["pipeline", "--config", "exp.toml", "--out", "r3"]);
    assert_eq!(manifest("r1"), manifest("r3"));
    fs::write(d.join("exp.toml"), experiment(1)).unwrap();
    ok(d, &["pipeline", "--config", "exp.toml", "--out", "r4"]);
    let m4 = manifest("r4");
    assert_ne!(m1["files"]["config.json"], m4["files"]["config.json"]);
    assert_eq!(m1["files"]["designs/a/ir.tgrid"], m4["files"]["designs/a/ir.tgrid"]);
}

#[test]
fn train_predict_and_guard() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("exp.toml"), experiment(0).replace("label_instants = 8", "label_instants = 8\nleave_one_out = false\nheld_out = \"c\"")).unwrap();
    ok(d, &["pipeline", "--config", "exp.toml", "--out", "run"]);
    fs::write(d.join("train.toml"), format!("{TRAIN}designs = [\"run/designs/a\", \"run/designs/b\"]\n")).unwrap();
    ok(d, &["train", "--config", "train.toml", "--out", "m.ckpt", "--report", "log.json"]);
    ok(d, &["predict", "--model", "m.ckpt", "--maps", "run/designs/c/maps", "--out", "p.tgrid", "--argmax", "am.tgrid"]);
    ok(d, &["predict", "--model", "m.ckpt", "--maps", "run/designs/c/maps", "--out", "p2.tgrid"]);
    assert_eq!(fs::read(d.join("p.tgrid")).unwrap(), fs::read(d.join("p2.tgrid")).unwrap());
    // the CLI model and the pipeline model trained on the same data agree
    assert_eq!(fs::read(d.join("p.tgrid")).unwrap(), fs::read(d.join("run/folds/c/ir_hat.tgrid")).unwrap());
    assert_eq!(code(d, &["predict", "--model", "m.ckpt", "--maps", "run/designs/a/maps", "--out", "x.tgrid"]), 2);
    assert_eq!(code(d, &["mitigate", "--model", "m.ckpt", "--design", "run/designs/b/design.csv", "--out", "x.json"]), 2);
    ok(d, &["mitigate", "--model", "m.ckpt", "--design", "run/designs/c/design.csv", "--label-instants", "8", "--threshold", "0.0", "--budget", "5", "--out", "mit.json"]);
    let rep: serde_json::Value = serde_json::from_slice(&fs::read(d.join("mit.json")).unwrap()).unwrap();
    assert_eq!(rep["enhanced_tiles"], 5);
    assert!(rep["all_ir_improvement_mv"].as_f64().unwrap() > 0.0);
}

#[test]
fn ablate_writes_one_row_per_setting() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("exp.toml"), experiment(0)).unwrap();
    ok(d, &["ablate", "--config", "exp.toml", "--n", "0,2", "--held-out", "a", "--out", "n.csv"]);
    let csv = fs::read_to_string(d.join("n.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "n,variant,auc_1x1,auc_5x5");
    assert!(lines[1].starts_with("0,full,") && lines[2].starts_with("2,full,"));
    assert_eq!(lines.len(), 3);
    assert!(d.join("n.json").exists());
    ok(d, &["ablate", "--config", "exp.toml", "--power-types", "--held-out", "b", "--out", "types.csv"]);
    let csv = fs::read_to_string(d.join("types.csv")).unwrap();
    assert!(csv.contains("\n4,full,") && csv.contains("\n4,reduced,"));
    assert_eq!(code(d, &["ablate", "--config", "exp.toml", "--held-out", "zz", "--out", "x.csv"]), 2);
}
