use std::path::Path;
use std::process::{Command, Output};

use fusid::pipeline::PipelineConfig;

fn fusid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusid")).args(args).output().expect("binary runs")
}

fn write_tiny_config(dir: &Path) -> String {
    let mut cfg = PipelineConfig::reference();
    cfg.out_dir = dir.join("out");
    cfg.synth.n_tracks = 120;
    cfg.synth.n_playlists = 240;
    cfg.synth.n_genres = 4;
    cfg.synth.max_len = 10;
    cfg.playvec.dim = 8;
    cfg.playvec.epochs = 1;
    cfg.fusion.hidden_dim = 16;
    cfg.fusion.d = 4;
    cfg.fusion.epochs = 2;
    cfg.pq.k = 8;
    cfg.genrec.dim = 8;
    cfg.genrec.heads = 2;
    cfg.genrec.layers = 1;
    cfg.genrec.epochs = 1;
    cfg.genrec.max_len = 64;
    let path = dir.join("tiny.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn prints_configs() {
    let out = fusid(&["config", "--reference"]);
    assert_eq!(out.status.code(), Some(0));
    let cfg = PipelineConfig::from_json(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
    assert_eq!(cfg, PipelineConfig::reference());
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(fusid(&["run", "--bogus"]).status.code(), Some(1));
    assert_eq!(fusid(&["run", "--stages", "synth", "--set", "fusion.alpah=1"]).status.code(), Some(1));
    assert_eq!(fusid(&["run", "--stages", "nope"]).status.code(), Some(1));
}

#[test]
fn missing_artifacts_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    let res = fusid(&["run", "--stages", "pq", "--out", &out]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("pq"));
}

#[test]
fn module_commands_and_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let run = |args: &[&str]| {
        let mut full = args.to_vec();
        full.extend(["--config", config.as_str()]);
        fusid(&full)
    };
    assert_eq!(run(&["corpus", "synth", "--seed", "3"]).status.code(), Some(0));
    assert_eq!(run(&["corpus", "filter", "--min-len", "6", "--seed", "3"]).status.code(), Some(0));
    assert_eq!(run(&["corpus", "split", "--ratios", "0.8,0.1,0.1", "--seed", "3"]).status.code(), Some(0));
    assert_eq!(run(&["playvec", "train", "--dim", "8", "--epochs", "1", "--seed", "3"]).status.code(), Some(0));
    assert_eq!(run(&["pairs", "mine", "--min-count", "3", "--pos-k", "5", "--neg-quantile", "0.9", "--seed", "3"]).status.code(), Some(0));
    assert_eq!(run(&["fusion", "train", "--alpha", "0.2", "--gamma", "1.0", "--eps", "1e-4", "--batch", "64", "--distance", "dim-normalized", "--seed", "3"]).status.code(), Some(0));
    assert_eq!(run(&["pq", "fit", "--k", "8", "--max-iters", "100", "--tol", "1e-6", "--seed", "3"]).status.code(), Some(0));
    assert_eq!(run(&["pq", "tokenize", "--seed", "3"]).status.code(), Some(0));
    assert_eq!(run(&["sidqual", "--seed", "3"]).status.code(), Some(0));
    assert_eq!(run(&["genrec", "train", "--layers", "1", "--heads", "2", "--dim", "8", "--max-len", "64", "--seed", "3"]).status.code(), Some(0));
    let eval = run(&["genrec", "eval", "--ks", "1,5,10,20", "--seed", "3"]);
    assert_eq!(eval.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert!(report.pointer("/model/recall/20").is_some());
    assert!(report.pointer("/baselines/popularity/mrr").is_some());

    let blown = run(&["fusion", "train", "--lr", "1e200", "--set", "fusion.optimizer=\"sgd\"", "--seed", "3"]);
    assert_eq!(blown.status.code(), Some(3), "{}", String::from_utf8_lossy(&blown.stderr));
}
