use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use attrex::attribution::load_archive;
use attrex::meta::load_meta_report;
use attrex::metrics::{evaluation_classes, read_records};
use attrex::model::{load_model, save_model, ModelGraph};
use attrex::scene::load_dataset;
use tempfile::TempDir;

fn attrex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attrex")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = attrex(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `dir` with its bytes, keyed by relative path.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

const SMALL: [&str; 4] = ["--height", "16", "--width", "16"];

fn gen(dir: &Path, n: &str, seed: &str) {
    let mut args = vec!["gen-data", "--n", n, "--seed", seed, "--out", s(dir)];
    args.extend(SMALL);
    ok(&args);
}

/// Small dataset and a model trained well enough for label changes under noise.
fn fixture(t: &TempDir) -> (PathBuf, PathBuf) {
    let data = t.path().join("data");
    gen(&data, "96", "3");
    let model_dir = t.path().join("model");
    ok(&["train", "--data", s(&data), "--epochs", "4", "--seed", "3", "--out", s(&model_dir)]);
    (data, model_dir.join("model.bin"))
}

#[test]
fn gen_data_is_reproducible() {
    let t = TempDir::new().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    gen(&a, "12", "7");
    gen(&b, "12", "7");
    assert_eq!(snapshot(&a), snapshot(&b));
    let c = t.path().join("c");
    gen(&c, "12", "8");
    assert_ne!(snapshot(&a), snapshot(&c));
}

#[test]
fn gen_data_single_class_fraction() {
    let t = TempDir::new().unwrap();
    let d = t.path().join("d");
    let mut args = vec!["gen-data", "--n", "10", "--seed", "1", "--single-class-fraction", "1.0", "--out", s(&d)];
    args.extend(SMALL);
    let stdout = ok(&args);
    assert!(stdout.contains("single-class scenes: 10"), "{stdout}");
    assert!(load_dataset(&d).unwrap().scenes.iter().all(|s| s.is_single_class()));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&attrex(&["gen-data", "--n", "5", "--seed", "1"])), 2);
    let t = TempDir::new().unwrap();
    assert_eq!(code(&attrex(&["gen-data", "--n", "5", "--out", s(t.path())])), 2);
    assert_eq!(code(&attrex(&["frobnicate"])), 2);
    assert_eq!(code(&attrex(&["gen-data", "--n", "many"])), 2);
}

#[test]
fn config_file_overrides_flags() {
    let t = TempDir::new().unwrap();
    let cfg = t.path().join("cfg.json");
    fs::write(&cfg, r#"{"n": 3, "seed": 5, "height": 16, "width": 16}"#).unwrap();
    let d = t.path().join("d");
    ok(&["gen-data", "--n", "9", "--seed", "1", "--config", s(&cfg), "--out", s(&d)]);
    let data = load_dataset(&d).unwrap();
    assert_eq!((data.len(), data.base_seed, data.config.height), (3, 5, 16));

    fs::write(&cfg, r#"{"nn": 3}"#).unwrap();
    let out = attrex(&["gen-data", "--seed", "1", "--config", s(&cfg), "--out", s(&d)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nn"));
    assert_eq!(code(&attrex(&["gen-data", "--seed", "1", "--config", "/nonexistent.json", "--out", s(&d)])), 3);
}

#[test]
fn train_is_reproducible_and_logged() {
    let t = TempDir::new().unwrap();
    let data = t.path().join("data");
    gen(&data, "16", "2");
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    let stdout = ok(&["train", "--data", s(&data), "--epochs", "1", "--seed", "9", "--out", s(&a)]);
    ok(&["train", "--data", s(&data), "--epochs", "1", "--seed", "9", "--out", s(&b)]);
    assert!(stdout.contains("macro-F1"));
    assert_eq!(fs::read(a.join("model.bin")).unwrap(), fs::read(b.join("model.bin")).unwrap());
    let log: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("train_log.json")).unwrap()).unwrap();
    let f1 = log["train_macro_f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));
    assert_eq!(log["epoch_losses"].as_array().unwrap().len(), 1);

    let out = attrex(&["train", "--data", "/no/such/dir", "--seed", "1", "--out", s(&a)]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/dir"));
}

#[test]
fn explain_writes_requested_methods() {
    let t = TempDir::new().unwrap();
    let (data, model) = fixture(&t);
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    let args = |out: &Path| -> Vec<String> {
        ["explain", "--data", s(&data), "--model", s(&model), "--methods", "gradcam,lrp", "--n", "6", "--seed", "4", "--out", s(out)]
            .map(String::from)
            .to_vec()
    };
    let run = |out: &Path| ok(&args(out).iter().map(String::as_str).collect::<Vec<_>>());
    run(&a);
    run(&b);
    assert_eq!(snapshot(&a), snapshot(&b));
    let archive = load_archive(&a).unwrap();
    assert_eq!(archive.methods(), vec!["gradcam", "lrp"]);
    let m = load_model(&model).unwrap();
    let dataset = load_dataset(&data).unwrap();
    for scene in dataset.scenes.iter().take(6) {
        for c in evaluation_classes(&m, &scene.image).unwrap() {
            for method in ["gradcam", "lrp"] {
                assert!(archive.get(scene.id, c, method).is_some());
            }
        }
    }
    let expected: usize = dataset
        .scenes
        .iter()
        .take(6)
        .map(|s| evaluation_classes(&m, &s.image).unwrap().len() * 2)
        .sum();
    assert_eq!(archive.entries.len(), expected);

    let out = attrex(&["explain", "--data", s(&data), "--model", s(&model), "--methods", "gradcam,shap", "--seed", "1", "--out", s(&a)]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("occlusion, lime, gradcam, lrp, deeplift, random"), "{err}");
}

#[test]
fn evaluate_rows_and_preconditions() {
    let t = TempDir::new().unwrap();
    let (data, model) = fixture(&t);
    let csv = t.path().join("out/metrics.csv");
    let arch = t.path().join("arch");
    ok(&["explain", "--data", s(&data), "--model", s(&model), "--methods", "gradcam,random", "--n", "5", "--seed", "2", "--out", s(&arch)]);
    ok(&[
        "evaluate", "--data", s(&data), "--model", s(&model), "--attributions", s(&arch), "--methods", "gradcam,random",
        "--metrics", "tki,sp,co,rra", "--n", "5", "--seed", "2", "--out", s(&csv),
    ]);
    let records = read_records(&csv).unwrap();
    let m = load_model(&model).unwrap();
    let classes: usize = load_dataset(&data)
        .unwrap()
        .scenes
        .iter()
        .take(5)
        .map(|s| evaluation_classes(&m, &s.image).unwrap().len())
        .sum();
    assert_eq!(records.len(), classes * 2 * 4);
    assert!(records.iter().all(|r| !r.status.is_empty()));

    let out = attrex(&[
        "evaluate", "--data", s(&data), "--model", s(&model), "--metrics", "tki", "--methods", "random", "--drop-masks",
        "--n", "3", "--seed", "2", "--out", s(&csv),
    ]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("mask"));
    let out = attrex(&[
        "evaluate", "--data", s(&data), "--model", s(&model), "--metrics", "tki", "--methods", "random", "--drop-masks",
        "--require-masks", "--n", "3", "--seed", "2", "--out", s(&csv),
    ]);
    assert_eq!(code(&out), 4);
    let out = attrex(&["evaluate", "--data", s(&data), "--model", "/no/model.bin", "--seed", "2", "--out", s(&csv)]);
    assert_eq!(code(&out), 3);
}

#[test]
fn evaluate_keeps_undefined_correlation_rows() {
    let t = TempDir::new().unwrap();
    let data = t.path().join("data");
    gen(&data, "4", "1");
    // All-zero parameters: constant logits, so FE's correlation is undefined.
    let m = ModelGraph::tiny_cnn([3, 16, 16], 5, 0).unwrap();
    let layers = m
        .layers()
        .iter()
        .cloned()
        .map(|mut l| {
            l.params_mut().into_iter().for_each(|p| p.data_mut().fill(0.0));
            l
        })
        .collect();
    let zero = ModelGraph::new([3, 16, 16], layers, 0).unwrap();
    let model = t.path().join("zero.bin");
    save_model(&zero, &model).unwrap();
    let csv = t.path().join("m.csv");
    ok(&["evaluate", "--data", s(&data), "--model", s(&model), "--methods", "random,gradcam", "--metrics", "fe", "--n", "4", "--seed", "1", "--out", s(&csv)]);
    let records = read_records(&csv).unwrap();
    // Every sigmoid sits at 0.5, so all five classes count as predicted.
    assert_eq!(records.len(), 4 * 5 * 2);
    assert!(records.iter().all(|r| r.status == "undefined_correlation" && r.raw_score.is_none()));
}

#[test]
fn meta_and_report() {
    let t = TempDir::new().unwrap();
    let (data, model) = fixture(&t);
    let meta_dir = t.path().join("meta");
    ok(&[
        "meta", "--data", s(&data), "--model", s(&model), "--methods", "gradcam,lrp,random", "--metrics", "sp,co,rra",
        "--n", "8", "--k", "1", "--iterations", "1", "--seed", "5", "--out", s(&meta_dir),
    ]);
    let report = load_meta_report(&meta_dir.join("meta.json")).unwrap();
    assert_eq!(report.metrics, vec!["sp", "co", "rra"]);
    assert_eq!(report.iterations.len(), 1);
    let svg = fs::read_to_string(meta_dir.join("meta.svg")).unwrap();
    let bars = svg.matches("class=\"bar\"").count() + svg.matches("class=\"gap\"").count();
    assert_eq!(bars, 3);
    assert_eq!(svg.matches("class=\"legend\"").count(), 5);

    let csv = t.path().join("metrics.csv");
    ok(&[
        "evaluate", "--data", s(&data), "--model", s(&model), "--methods", "gradcam,lrp,random", "--metrics", "sp,co",
        "--n", "4", "--seed", "5", "--out", s(&csv),
    ]);
    let (r1, r2) = (t.path().join("r1"), t.path().join("r2"));
    for r in [&r1, &r2] {
        ok(&["report", "--metrics-csv", s(&csv), "--meta", s(&meta_dir.join("meta.json")), "--out", s(r)]);
    }
    assert_eq!(snapshot(&r1), snapshot(&r2));
    let norm = fs::read_to_string(r1.join("scores_normalized.csv")).unwrap();
    for col in 1..3 {
        let vals: Vec<f64> = norm.lines().skip(1).map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect();
        assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(vals.contains(&0.0) && vals.contains(&1.0), "{vals:?}");
    }

    let gaps = t.path().join("gaps");
    let out = attrex(&["report", "--metrics-csv", "/no/metrics.csv", "--out", s(&gaps)]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    let md = fs::read_to_string(gaps.join("report.md")).unwrap();
    assert!(md.matches("GAP").count() >= 2, "{md}");
}
