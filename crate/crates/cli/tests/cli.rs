use std::path::Path;
use std::process::{Command, Output};

use dusego::model::ModelKind;
use dusego::train::Verdict;
use dusego_cli::commands::{aggregate, gen_nbody, load_splits, Manifest};
use dusego_cli::config::{ExperimentConfig, Task};
use proptest::prelude::*;

fn dusego(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dusego"))
        .args(args)
        .env("DUSEGO_OUT_ROOT", root)
        .output()
        .unwrap()
}

fn write(root: &Path, name: &str, text: &str) -> String {
    let p = root.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = "schema_version = 1\ntask = \"nbody\"\n[nbody]\ntrain = 12\nval = 4\ntest = 4\n\
                     [model]\ndepth = 2\nhidden_dim = 4\nfeature_dim = 4\n[train]\nmax_epochs = 1\nbatch_size = 4\n";

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut tasks = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        tasks.push(ExperimentConfig::load(&entry.unwrap().path()).unwrap().task);
    }
    for t in [Task::Nbody, Task::Autoencoder, Task::DiagnoseEnergy, Task::DiagnoseEquivariance, Task::DiagnoseGradient] {
        assert!(tasks.contains(&t), "{t:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_survives_toml_roundtrip(
        depth in 1usize..100,
        alpha in 0.0f64..4.0,
        dt in proptest::option::of(0.001f64..1.0),
        seeds in proptest::collection::vec(0u64..1000, 1..5),
        lr in 1e-6f64..1.0,
        stacked: bool,
        baseline: bool,
    ) {
        let mut cfg = ExperimentConfig::new(Task::Nbody);
        cfg.model.depth = depth;
        cfg.model.alpha = alpha;
        cfg.model.dt = dt;
        cfg.model.kind = if stacked { ModelKind::StackedEgnn } else { ModelKind::Dusego };
        cfg.seeds = seeds;
        cfg.train.learning_rate = lr;
        if baseline {
            cfg.baseline = Some(cfg.model.clone());
        }
        prop_assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert_eq!(dusego(root, &["train"]).status.code(), Some(1));
    assert_eq!(dusego(root, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(dusego(root, &["train", "--config", "missing.toml"]).status.code(), Some(1));
    let bad = write(root, "bad.toml", "schema_version = 1\ntask = \"nbody\"\n[model]\ndepht = 3\n");
    let out = dusego(root, &["gen-nbody", "--config", &bad]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("depht"));
    let invalid = write(root, "invalid.toml", "schema_version = 1\ntask = \"nbody\"\n[nbody.simulation]\nsoftening = -1.0\n");
    assert_eq!(dusego(root, &["gen-nbody", "--config", &invalid]).status.code(), Some(1));
    assert_eq!(dusego(root, &["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = write(root, "small.toml", SMALL);
    assert_eq!(dusego(root, &["train", "--config", &cfg]).status.code(), Some(2));
    assert_eq!(dusego(root, &["gen-nbody", "--config", &cfg]).status.code(), Some(0));
    // Same data directory, different generator constants.
    let other = write(root, "other.toml", &SMALL.replace("train = 12", "train = 13"));
    let out = dusego(root, &["train", "--config", &other]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different constants"));
    // Eval before any training has no checkpoint to read.
    assert_eq!(dusego(root, &["eval", "--config", &cfg]).status.code(), Some(2));
    std::fs::write(root.join("data/train.bin"), b"DSGD garbage").unwrap();
    assert_eq!(dusego(root, &["train", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn train_then_eval_reproduces_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = write(root, "small.toml", &SMALL.replace("task = \"nbody\"\n", "task = \"nbody\"\nseeds = [3, 4]\n"));
    assert!(dusego(root, &["gen-nbody", "--config", &cfg]).status.success());
    assert!(dusego(root, &["train", "--config", &cfg, "--timings"]).status.success());
    for f in ["summary.json", "table.md", "timings.json", "model/seed-3/record.json", "model/seed-4/model.ckpt"] {
        assert!(root.join("runs").join(f).exists(), "{f}");
    }
    let out = dusego(root, &["eval", "--config", &cfg]);
    assert!(out.status.success());
    let evals: serde_json::Value = serde_json::from_slice(&std::fs::read(root.join("runs/eval.json")).unwrap()).unwrap();
    let evals = evals.as_array().unwrap();
    assert_eq!(evals.len(), 2);
    assert!(evals.iter().all(|e| e["matches_record"] == true));
}

#[test]
fn summary_is_recomputable_from_records() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg_path = write(root, "small.toml", &SMALL.replace("task = \"nbody\"\n", "task = \"nbody\"\nseeds = [0, 1, 2]\n"));
    assert!(dusego(root, &["gen-nbody", "--config", &cfg_path]).status.success());
    assert!(dusego(root, &["train", "--config", &cfg_path]).status.success());
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(root.join("runs/summary.json")).unwrap()).unwrap();
    let records: Vec<dusego::train::RunRecord> = (0..3)
        .map(|s| {
            let v: serde_json::Value =
                serde_json::from_slice(&std::fs::read(root.join(format!("runs/model/seed-{s}/record.json"))).unwrap()).unwrap();
            serde_json::from_value(v["record"].clone()).unwrap()
        })
        .collect();
    assert!(records.iter().all(|r| r.verdict == Verdict::Ok));
    let again = serde_json::to_value(aggregate("model", ModelKind::Dusego, &records)).unwrap();
    assert_eq!(summary["models"][0], again);
}

#[test]
fn manifest_records_generator_constants() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::from_toml(SMALL).unwrap();
    cfg.data_dir = dir.path().join("d");
    gen_nbody(&cfg, Some(100), None).unwrap();
    let m: Manifest = serde_json::from_slice(&std::fs::read(dir.path().join("d/manifest.json")).unwrap()).unwrap();
    assert_eq!(m.master_seed, 100);
    let firsts: Vec<u64> = m.splits.iter().map(|s| s.first_seed).collect();
    assert_eq!(firsts, [100, 112, 116]);
    let splits = load_splits(&cfg).unwrap();
    assert_eq!((splits.train.len(), splits.val.len(), splits.test.len()), (12, 4, 4));
}

fn tree(root: &Path) -> std::collections::BTreeMap<std::path::PathBuf, Vec<u8>> {
    let mut files = std::collections::BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

#[test]
fn binary_reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for root in [a.path(), b.path()] {
        let cfg = write(root, "small.toml", SMALL);
        for cmd in ["gen-nbody", "train", "eval"] {
            assert!(dusego(root, &[cmd, "--config", &cfg]).status.success(), "{cmd}");
        }
    }
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert!(ta.len() > 5);
    assert_eq!(ta, tb);
}
