use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ternlstm"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert_eq!(o.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY_CFG: &str = "window = 5\nsteps = 4\nhidden = 6\nconv = 3x3\nepochs = 3\nbatch_size = 8\nseed = 2\n";

/// Generates a small sine set and trains a ternary model on it.
fn trained(tmp: &Path) -> (PathBuf, PathBuf) {
    let data = tmp.join("data");
    ok(&["gen", "--system", "sine", "--classes", "3", "--per-class", "10", "--window", "5", "--steps", "4", "--seed", "4", "--out", s(&data)]);
    let cfg = tmp.join("tiny.cfg");
    std::fs::write(&cfg, TINY_CFG).unwrap();
    let out = tmp.join("train");
    ok(&["train", "--data", s(&data), "--config", s(&cfg), "--precision", "ternary", "--out", s(&out)]);
    (data, out.join("model"))
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["gen", "--system", "pendulum"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY_CFG).unwrap();
    let missing = tmp.path().join("nowhere");
    let o = run(&["train", "--data", s(&missing), "--config", s(&cfg), "--out", s(&tmp.path().join("t"))]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(&cfg, "window = 5\nwidnow = 3\n").unwrap();
    let o = run(&["estimate", "--config", s(&cfg), "--out", s(&tmp.path().join("e"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn pipeline_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let (data, model) = trained(tmp.path());
    assert!(tmp.path().join("train/history.csv").is_file());
    assert!(tmp.path().join("train/run.txt").is_file());

    let packed = tmp.path().join("packed");
    let text = ok(&["quantize", "--model", s(&model), "--out", s(&packed)]);
    assert!(text.contains("packed ternary"));
    assert!(packed.join("lstm.w_i.int2").is_file());

    // the packed and shadow models make the same predictions
    let a = ok(&["eval", "--model", s(&model), "--data", s(&data), "--out", s(&tmp.path().join("e1"))]);
    let b = ok(&["eval", "--model", s(&packed), "--data", s(&data), "--out", s(&tmp.path().join("e2"))]);
    assert!(a.starts_with("accuracy: "));
    assert_eq!(a, b);
    let conf = ok(&["eval", "--model", s(&packed), "--data", s(&data), "--report", "confusion", "--engine", "fixed", "--out", s(&tmp.path().join("e3"))]);
    assert_eq!(conf.lines().count(), 4);

    let sim = tmp.path().join("sim");
    let machine = configs().join("machine.cfg");
    let text = ok(&["simulate", "--model", s(&packed), "--data", s(&data), "--machine", s(&machine), "--trace", "--limit", "3", "--out", s(&sim)]);
    assert!(text.contains("budget: 10 ms per window, met"));
    for f in ["report.txt", "cycles.csv", "predictions.csv", "sigmoid_lut.csv", "tanh_lut.csv", "trace.csv", "run.txt"] {
        assert!(sim.join(f).is_file(), "{f}");
    }
    // the simulator agrees with the fixed-point evaluator record by record
    let fixed = std::fs::read_to_string(tmp.path().join("e3/predictions.csv")).unwrap();
    let simulated = std::fs::read_to_string(sim.join("predictions.csv")).unwrap();
    assert!(fixed.starts_with(&simulated));
}

#[test]
fn reruns_are_deterministic() {
    let one = TempDir::new().unwrap();
    let two = TempDir::new().unwrap();
    trained(one.path());
    trained(two.path());
    for rel in ["data/ch0.tsv", "data/labels.txt", "train/history.csv", "train/model/lstm.w_f.bin", "train/model/normalization.csv"] {
        let a = std::fs::read(one.path().join(rel)).unwrap();
        let b = std::fs::read(two.path().join(rel)).unwrap();
        assert_eq!(a, b, "{rel}");
    }
}

#[test]
fn estimate_reports_db_a_operation_count() {
    let tmp = TempDir::new().unwrap();
    let text = ok(&["estimate", "--config", s(&configs().join("db_a.cfg")), "--out", s(tmp.path())]);
    assert!(text.contains("nominal MACs per window: 222500"), "{text}");
    assert!(text.contains("response time at 6.3 GOPs: 35.3 us"));
    assert!(text.contains("MAC Operations(M)"));
    assert!(tmp.path().join("estimate.txt").is_file());
}

#[test]
fn every_shipped_config_estimates() {
    let tmp = TempDir::new().unwrap();
    for entry in std::fs::read_dir(configs()).unwrap() {
        let p = entry.unwrap().path();
        let name = p.file_stem().unwrap().to_str().unwrap().to_string();
        if name == "machine" {
            continue;
        }
        ok(&["estimate", "--config", s(&p), "--out", s(&tmp.path().join(name))]);
    }
}

#[test]
fn ucr_split_files_train_and_evaluate() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("Toy");
    std::fs::create_dir(&dir).unwrap();
    for (file, n) in [("Toy_TRAIN.tsv", 16), ("Toy_TEST.tsv", 8)] {
        let mut text = String::new();
        for i in 0..n {
            let label = if i % 2 == 0 { -1 } else { 1 };
            let f = if label < 0 { 0.3 } else { 1.1 };
            let row: Vec<String> = (0..24).map(|t| format!("{:.5}", (f * t as f64 + i as f64).sin())).collect();
            text += &format!("{label}\t{}\n", row.join("\t"));
        }
        std::fs::write(dir.join(file), text).unwrap();
    }
    let cfg = tmp.path().join("toy.cfg");
    std::fs::write(&cfg, "window = 6\nsteps = 4\nhidden = 5\nconv = 2x3\nepochs = 2\n").unwrap();
    let out = tmp.path().join("train");
    let text = ok(&["train", "--data", s(&dir), "--config", s(&cfg), "--out", s(&out)]);
    assert!(text.contains("16 train / 8 test"), "{text}");
    let auc = ok(&["eval", "--model", s(&out.join("model")), "--data", s(&dir), "--report", "auc", "--out", s(&tmp.path().join("eval"))]);
    assert!(auc.starts_with("auc: "));
}

#[test]
fn embed_writes_matrix_and_embedding() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("lorenz");
    ok(&["gen", "--system", "lorenz", "--classes", "3", "--per-class", "4", "--window", "64", "--steps", "1", "--noise", "0", "--out", s(&data)]);
    let out = tmp.path().join("embed");
    let text = ok(&["embed", "--data", s(&data), "--iters", "2000", "--out", s(&out)]);
    assert!(text.contains("realizations: 12"));
    let dist = std::fs::read_to_string(out.join("distance.csv")).unwrap();
    assert_eq!(dist.lines().count(), 13);
    assert_eq!(std::fs::read_to_string(out.join("embedding.csv")).unwrap().lines().count(), 13);
    assert_eq!(run(&["embed", "--data", s(&data), "--metric", "manhattan", "--out", s(&out)]).status.code(), Some(2));
}
