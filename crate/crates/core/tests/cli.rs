//! End-to-end runs of every subcommand on small synthetic data.

use std::path::Path;

use extd::cli::run;
use extd::cost::count_madds;
use extd::io::{parse_config, render_config};
use extd::model::{ModelConfig, Variant};

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("extd").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.cfg");
    std::fs::write(&path, render_config(&ModelConfig::tiny())).unwrap();
    path
}

#[test]
fn summarize_totals_match_the_accounting() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("fpn64.cfg");
    std::fs::write(&cfg_path, "variant = fpn\nwidth = 64\n").unwrap();
    let (code, out, _) = cli(&["summarize", "--config", p(&cfg_path), "--machine"]);
    assert_eq!(code, 0);
    let report = count_madds(&ModelConfig::preset(Variant::Fpn, 64), 640, 640).unwrap();
    let (mut params, mut madds) = (0u64, 0u64);
    for line in out.lines() {
        let f: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(f.len(), 5, "{line}");
        params += f[1].parse::<u64>().unwrap();
        madds += f[4].parse::<u64>().unwrap();
    }
    assert_eq!((params, madds), (report.total_params, report.total_madds));

    let (code, table, _) = cli(&["summarize", "--config", p(&cfg_path), "--input-size", "384"]);
    assert_eq!(code, 0);
    assert!(table.starts_with(&ModelConfig::preset(Variant::Fpn, 64).name()));

    let (_, lean, _) = cli(&["summarize", "--config", p(&cfg_path), "--machine", "--no-elementwise"]);
    let lean_total: u64 = lean.lines().map(|l| l.split_whitespace().last().unwrap().parse::<u64>().unwrap()).sum();
    assert!(lean_total < madds);
}

#[test]
fn synth_train_detect_eval_bench_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = tiny_config(d);
    let data = d.join("data");
    let (code, out, _) = cli(&["synth", "--out", p(&data), "--count", "6", "--resolution", "32", "--seed", "4"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.starts_with("6 images, "));
    let ann = data.join("annotations.txt");

    let weights = d.join("w.bin");
    let trace = d.join("trace.txt");
    let (code, out, err) = cli(&[
        "train", "--config", p(&cfg), "--data", p(&ann), "--out", p(&weights), "--iters", "4", "--resolution", "32",
        "--batch", "2", "--trace", p(&trace),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.is_empty());
    let lines: Vec<String> = std::fs::read_to_string(&trace).unwrap().lines().map(String::from).collect();
    assert_eq!(lines.len(), 4);
    assert!(lines.iter().all(|l| extd::train::TraceLine::parse(l).is_some()));

    // training to stdout gives the same trace
    let (code, out, _) = cli(&[
        "train", "--config", p(&cfg), "--data", p(&ann), "--out", p(&d.join("w2.bin")), "--iters", "4", "--resolution",
        "32", "--batch", "2",
    ]);
    assert_eq!(code, 0);
    assert_eq!(out.lines().collect::<Vec<_>>(), lines);
    assert_eq!(std::fs::read(&weights).unwrap(), std::fs::read(d.join("w2.bin")).unwrap());

    let dets = d.join("dets.txt");
    let (code, out, err) = cli(&["detect", "--config", p(&cfg), "--weights", p(&weights), "--data", p(&ann), "--out", p(&dets), "--conf", "0.3"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.starts_with("6 images, "), "{out}");
    let parsed = extd::io::parse_detections(&std::fs::read_to_string(&dets).unwrap()).unwrap();
    assert_eq!(parsed.len(), 6);

    let pr = d.join("pr.txt");
    let (code, out, err) = cli(&["eval", "--pred", p(&dets), "--gt", p(&ann), "--pr", p(&pr)]);
    assert_eq!(code, 0, "{err}");
    assert!(out.starts_with("AP "), "{out}");
    assert_eq!(std::fs::read_to_string(&pr).unwrap().lines().count(), extd::detect::PR_THRESHOLDS);

    let (code, out, err) = cli(&["bench", "--config", p(&cfg), "--weights", p(&weights), "--sizes", "32,64", "--trials", "2"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().count(), 2);
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(cli(&["synth", "--out", p(&data), "--count", "5", "--resolution", "64"]).0, 0);
    let ann = data.join("annotations.txt");
    let index = extd::io::load_annotations(&ann).unwrap();
    let perfect: Vec<(String, Vec<extd::detect::Detection>)> = index
        .entries
        .iter()
        .map(|e| (e.path.clone(), e.boxes.iter().map(|&bbox| extd::detect::Detection { bbox, score: 0.9, level: 0 }).collect()))
        .collect();
    let pred = dir.path().join("pred.txt");
    std::fs::write(&pred, extd::io::format_detections(&perfect)).unwrap();
    let (code, out, _) = cli(&["eval", "--pred", p(&pred), "--gt", p(&ann)]);
    assert_eq!(code, 0);
    assert!(out.starts_with("AP 1.0000\n"), "{out}");
    assert!(out.contains("fp 0 fn 0"), "{out}");
}

#[test]
fn detect_pads_small_images() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = tiny_config(d);
    let weights = d.join("w.bin");
    extd::io::save_weights(&weights, &extd::model::build_model::<f32>(&ModelConfig::tiny(), 0).unwrap()).unwrap();
    let img = d.join("small.ppm");
    let small = extd::tensor::Tensor::from_fn([1, 3, 13, 21], |[_, c, y, x]| ((c + y * x) % 5) as f32 / 4.0);
    extd::io::save_ppm(&img, &small).unwrap();
    let out_path = d.join("dets.txt");
    let (code, out, err) = cli(&["detect", "--config", p(&cfg), "--weights", p(&weights), "--image", p(&img), "--out", p(&out_path), "--conf", "0"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.starts_with("1 images, "));
    for (_, dets) in extd::io::parse_detections(&std::fs::read_to_string(&out_path).unwrap()).unwrap() {
        for det in dets {
            assert!(det.bbox.right() <= 21.0 + 1e-4 && det.bbox.bottom() <= 13.0 + 1e-4);
        }
    }
}

#[test]
fn gradcheck_passes_on_the_tiny_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (code, out, _) = cli(&["gradcheck", "--config", p(&cfg), "--input-size", "32"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.trim_end().lines().last().unwrap().starts_with("PASS"));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bad = d.join("bad.cfg");
    std::fs::write(&bad, "width = 16\ncolour = red\n").unwrap();
    let (code, _, err) = cli(&["summarize", "--config", p(&bad)]);
    assert_eq!(code, 2);
    assert!(err.contains("line 2"), "{err}");

    let cfg = tiny_config(d);
    let weights = d.join("w.bin");
    std::fs::write(&weights, b"EXTD\x01\x00\x00\x00").unwrap();
    let (code, _, err) = cli(&["bench", "--config", p(&cfg), "--weights", p(&weights), "--sizes", "32"]);
    assert_eq!(code, 2, "{err}");

    // weights from a different architecture are rejected
    let other = d.join("other.bin");
    extd::io::save_weights(&other, &extd::model::build_model::<f32>(&ModelConfig::tiny().with_levels(3), 0).unwrap()).unwrap();
    let (code, _, err) = cli(&["bench", "--config", p(&cfg), "--weights", p(&other), "--sizes", "32"]);
    assert_eq!(code, 2, "{err}");

    let pred = d.join("pred.txt");
    let gt = d.join("gt.txt");
    std::fs::write(&pred, "ghost.ppm\n0\n").unwrap();
    std::fs::write(&gt, "real.ppm\n0\n").unwrap();
    let (code, _, err) = cli(&["eval", "--pred", p(&pred), "--gt", p(&gt)]);
    assert_eq!(code, 2);
    assert!(err.contains("ghost.ppm"), "{err}");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(cli(&["summarize"]).0, 1);
    assert_eq!(cli(&["train", "--config", "a"]).0, 1);
    assert_eq!(cli(&["frobnicate"]).0, 1);
    let (code, _, err) = cli(&["summarize", "--config", "x", "--bogus"]);
    assert_eq!(code, 1);
    assert!(err.contains("Usage"), "{err}");
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_extd");
    let status = std::process::Command::new(bin).arg("--help").output().unwrap();
    assert_eq!(status.status.code(), Some(0));
    let status = std::process::Command::new(bin).args(["eval", "--pred", "/nonexistent", "--gt", "/nonexistent"]).output().unwrap();
    assert_eq!(status.status.code(), Some(2));
}

#[test]
fn config_text_round_trips() {
    for cfg in [ModelConfig::tiny(), ModelConfig::preset(Variant::Ssd, 48)] {
        assert_eq!(parse_config(&render_config(&cfg)).unwrap(), cfg);
    }
}
