//! Acceptance criteria 1-10, one PASS/FAIL line each. Runs without the
//! libtest harness; pass criterion numbers as arguments to run a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use extd::anchors::{generate_anchors, match_boxes, match_scale_compensated, BoxXYWH, Label, MatchParams};
use extd::cost::{count_madds, count_params, planned_params};
use extd::detect::{average_precision, detect_all, DetectConfig};
use extd::io::{decode_weights, encode_weights, format_detections, load_weights, save_weights, synth_samples};
use extd::loss::{anchor_cls_losses, cross_entropy, hard_negative_mine, multitask_loss, smooth_l1, AnchorPredictions, LossConfig};
use extd::model::s3fd::{describe_s3fd_mobilefacenet, s3fd_cost};
use extd::model::{build_model, forward, iterate_features, ModelConfig, ModelParams, Variant};
use extd::tensor::{Element, Tensor};
use extd::train::{grad_check, train_loop, GradCheckConfig, Sample, Schedule, TraceLine, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol * target
}

fn within_time(t: Instant, limit: Duration) -> Result<(), String> {
    ensure(t.elapsed() <= limit, || format!("took {:.1}s, limit {}s", t.elapsed().as_secs_f64(), limit.as_secs()))
}

fn budget() -> Outcome {
    let t = Instant::now();
    let targets = [
        (Variant::Fpn, 32, 0.063e6),
        (Variant::Fpn, 48, 0.10e6),
        (Variant::Fpn, 64, 0.16e6),
        (Variant::Ssd, 32, 0.056e6),
        (Variant::Ssd, 48, 0.086e6),
        (Variant::Ssd, 64, 0.14e6),
    ];
    let mut detail = Vec::new();
    for (v, w, target) in targets {
        let cfg = ModelConfig::preset(v, w);
        let planned = planned_params(&cfg).map_err(|e| e.to_string())?;
        let built = count_params(&build_model::<f32>(&cfg, 0).map_err(|e| e.to_string())?);
        ensure(planned == built, || format!("{}: planned {planned} vs built {built}", cfg.name()))?;
        ensure(within(built as f64, target, 0.10), || format!("{}: {built} params, target {target}", cfg.name()))?;
        detail.push(format!("{v}-{w} {:+.1}%", 100.0 * (built as f64 / target - 1.0)));
    }
    within_time(t, Duration::from_secs(1))?;
    Ok(detail.join(", "))
}

fn madds() -> Outcome {
    let t = Instant::now();
    let targets = [
        (Variant::Fpn, 32, 4.52e9),
        (Variant::Fpn, 48, 6.67e9),
        (Variant::Fpn, 64, 11.2e9),
        (Variant::Ssd, 32, 4.35e9),
        (Variant::Ssd, 48, 6.63e9),
        (Variant::Ssd, 64, 10.6e9),
    ];
    let mut detail = Vec::new();
    for (v, w, target) in targets {
        let cfg = ModelConfig::preset(v, w);
        let m = count_madds(&cfg, 640, 640).map_err(|e| e.to_string())?.total_madds as f64;
        ensure(within(m, target, 0.15), || format!("{}: {m:.3e} madds, target {target:.3e}", cfg.name()))?;
        detail.push(format!("{v}-{w} {:+.1}%", 100.0 * (m / target - 1.0)));
    }
    let r = s3fd_cost(&describe_s3fd_mobilefacenet(), 640, 640).map_err(|e| e.to_string())?;
    ensure(within(r.total_params as f64, 1.2e6, 0.10), || format!("baseline params {}", r.total_params))?;
    ensure(within(r.total_madds as f64, 12.7e9, 0.15), || format!("baseline madds {}", r.total_madds))?;
    detail.push(format!(
        "baseline {:+.1}% params {:+.1}% madds",
        100.0 * (r.total_params as f64 / 1.2e6 - 1.0),
        100.0 * (r.total_madds as f64 / 12.7e9 - 1.0)
    ));
    within_time(t, Duration::from_secs(1))?;
    Ok(detail.join(", "))
}

fn shape_law() -> Outcome {
    let cfg = ModelConfig::preset(Variant::Fpn, 32);
    let params = build_model::<f32>(&cfg, 0).map_err(|e| e.to_string())?;
    let image = Tensor::<f32>::full([1, 3, 640, 640], 0.5);
    let pyramid = iterate_features(&params, &cfg, &image).map_err(|e| e.to_string())?;
    let dims = pyramid.spatial_dims();
    let want: Vec<(usize, usize)> = [160, 80, 40, 20, 10, 5].iter().map(|&s| (s, s)).collect();
    ensure(dims == want, || format!("feature maps {dims:?}"))?;
    let grid = generate_anchors(640, 640, cfg.levels).map_err(|e| e.to_string())?;
    ensure(grid.len() == 34_125, || format!("{} anchors", grid.len()))?;
    Ok("maps 160..5, 34125 anchors".into())
}

fn gradient_fidelity() -> Outcome {
    let t = Instant::now();
    let cfg = ModelConfig::tiny();
    let report = grad_check(&cfg, &GradCheckConfig::default()).map_err(|e| e.to_string())?;
    let names: Vec<String> = build_model::<f64>(&cfg, 0).map_err(|e| e.to_string())?.trainable_names().map(String::from).collect();
    let checked: Vec<String> = report.entries.iter().filter(|e| e.checked > 0).map(|e| e.name.clone()).collect();
    ensure(names == checked, || format!("checked {} of {} tensors", checked.len(), names.len()))?;
    ensure(report.max_rel_err < 1e-3, || format!("max relative error {:.3e}\n{}", report.max_rel_err, report.render()))?;
    within_time(t, Duration::from_secs(300))?;
    Ok(format!("{} tensors, max relative error {:.2e}", names.len(), report.max_rel_err))
}

/// Trainable elements split into the shared entry+backbone part and the
/// level-indexed heads / upsample blocks. Errors on any other tensor.
fn split_counts(cfg: &ModelConfig) -> Result<(u64, u64), String> {
    let params = build_model::<f32>(cfg, 0).map_err(|e| e.to_string())?;
    let (mut shared, mut per_level) = (0u64, 0u64);
    for name in params.trainable_names() {
        let size = params.get(name).map_err(|e| e.to_string())?.len() as u64;
        let root = name.split('.').next().unwrap_or(name);
        let level = root.trim_start_matches("head").trim_start_matches("up");
        if root == "entry" || root == "backbone" {
            shared += size;
        } else if level.parse::<usize>().map_or(false, |k| (1..=cfg.levels).contains(&k)) {
            per_level += size;
        } else {
            return Err(format!("`{name}` is neither shared nor level-indexed"));
        }
    }
    ensure(shared + per_level == count_params(&params), || "split does not cover the count".into())?;
    Ok((shared, per_level))
}

fn sharing() -> Outcome {
    let mut detail = String::new();
    for (v, w) in [(Variant::Fpn, 32), (Variant::Ssd, 48), (Variant::Fpn, 64)] {
        let base = ModelConfig::preset(v, w);
        let (s3, l3) = split_counts(&base.clone().with_levels(3))?;
        let (s6, l6) = split_counts(&base.clone().with_levels(6))?;
        ensure(s3 == s6, || format!("{}: shared part {s3} at N=3, {s6} at N=6", base.name()))?;
        if detail.is_empty() {
            detail = format!("{}: shared {s6} at N=3 and N=6, per-level heads/upsamplers {l3} vs {l6}", base.name());
        }
    }

    let cfg = ModelConfig::preset(Variant::Fpn, 32);
    let params = build_model::<f64>(&cfg, 0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let image = Tensor::<f64>::from_fn([1, 3, 128, 128], |_| rng.gen_range(0.0..1.0));
    let name = params
        .trainable_names()
        .find(|n| n.starts_with("backbone."))
        .ok_or("no backbone parameter")?
        .to_string();
    let mut bumped = params.clone();
    bumped.get_mut(&name).map_err(|e| e.to_string())?.data_mut()[0] += 0.25;

    let before = iterate_features(&params, &cfg, &image).map_err(|e| e.to_string())?;
    let after = iterate_features(&bumped, &cfg, &image).map_err(|e| e.to_string())?;
    for (i, (a, b)) in before.maps.iter().zip(&after.maps).enumerate() {
        ensure(a.data() != b.data(), || format!("feature level {} unchanged by `{name}`", i + 1))?;
    }
    let before = forward(&params, &cfg, &image).map_err(|e| e.to_string())?;
    let after = forward(&bumped, &cfg, &image).map_err(|e| e.to_string())?;
    for (i, (a, b)) in before.iter().zip(&after).enumerate() {
        ensure(a.cls.data() != b.cls.data() && a.reg.data() != b.reg.data(), || format!("head {} unchanged by `{name}`", i + 1))?;
    }
    Ok(format!("{detail}; `{name}` reaches all 6 levels"))
}

fn lattice_box(rng: &mut ChaCha8Rng) -> BoxXYWH {
    let mut v = || rng.gen_range(0..6) as f64 * 4.0;
    let (x, y) = (v(), v());
    let w = rng.gen_range(1..5) as f64 * 4.0;
    let h = rng.gen_range(1..5) as f64 * 4.0;
    BoxXYWH::new(x, y, w, h).unwrap()
}

fn matching_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = MatchParams::default();
    let mut topped_up = 0;
    for scene in 0..1000 {
        let g = rng.gen_range(1..=3);
        let n = rng.gen_range(g..=8);
        let gts: Vec<BoxXYWH> = (0..g).map(|_| lattice_box(&mut rng)).collect();
        let anchors: Vec<BoxXYWH> = (0..n).map(|_| lattice_box(&mut rng)).collect();
        let got = match_boxes(&gts, &anchors, &p);
        let want = common::oracle_match(&gts, &anchors, &p);
        ensure(got.matched_gt == want, || format!("scene {scene}: {:?} vs oracle {want:?}", got.matched_gt))?;
        for gi in 0..g {
            ensure(got.matched_gt.contains(&Some(gi)), || format!("scene {scene}: face {gi} has no positive"))?;
        }
        let stage1 = anchors.iter().filter(|a| gts.iter().any(|b| extd::anchors::iou(a, b) >= p.t1)).count();
        topped_up += usize::from(got.count(Label::Positive) > stage1);
    }
    within_time(t, Duration::from_secs(60))?;
    Ok(format!("1000 scenes identical, {topped_up} needed extra positives"))
}

fn loss_identities() -> Outcome {
    let cfg = LossConfig::default();
    let sample = synth_samples(1, 128, 9).remove(0);
    let grid = generate_anchors(128, 128, 6).map_err(|e| e.to_string())?;
    let m = match_scale_compensated(&sample.boxes, &grid, &cfg.matching);
    let n = grid.len();

    let zero = AnchorPredictions { logits: vec![[0.0; 2]; n], deltas: vec![[0.0; 4]; n] };
    let mined = hard_negative_mine(&anchor_cls_losses(&zero, &m), &m, cfg.neg_ratio, cfg.empty_negatives);
    let b = multitask_loss(&[zero], &[mined], &cfg).map_err(|e| e.to_string())?;
    let ln2x4 = 4.0 * std::f64::consts::LN_2;
    ensure((b.cls_term - ln2x4).abs() <= 2.0 * f64::EPSILON * ln2x4, || format!("zero-logit cls term {:.17} vs {ln2x4:.17}", b.cls_term))?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pos = m.count(Label::Positive);
    let avail = m.count(Label::Negative);
    for _ in 0..5 {
        let pred = AnchorPredictions {
            logits: (0..n).map(|_| [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]).collect(),
            deltas: (0..n).map(|_| [0.0; 4].map(|_: f64| rng.gen_range(-2.0..2.0))).collect(),
        };
        let mined = hard_negative_mine(&anchor_cls_losses(&pred, &m), &m, cfg.neg_ratio, cfg.empty_negatives);
        let kept_neg = mined.count(Label::Negative);
        ensure(kept_neg == (3 * pos).min(avail), || format!("{kept_neg} negatives kept for {pos} positives of {avail}"))?;

        let b = multitask_loss(std::slice::from_ref(&pred), std::slice::from_ref(&mined), &cfg).map_err(|e| e.to_string())?;
        let (mut cls, mut reg, mut n_cls) = (0.0, 0.0, 0usize);
        for (j, &l) in mined.labels.iter().enumerate() {
            match l {
                Label::Ignore => {}
                Label::Negative => {
                    cls += cross_entropy(pred.logits[j], 0);
                    n_cls += 1;
                }
                Label::Positive => {
                    cls += cross_entropy(pred.logits[j], 1);
                    n_cls += 1;
                    reg += (0..4).map(|k| smooth_l1(pred.deltas[j][k] - mined.reg_targets[j][k])).sum::<f64>();
                }
            }
        }
        let want = cfg.lambda * cls / n_cls as f64 + reg / pos as f64;
        ensure((b.total - want).abs() <= 1e-6, || format!("total {} vs recomputed {want}", b.total))?;
        ensure((b.total - b.cls_term - b.reg_term).abs() <= 1e-12, || "total is not cls + reg".into())?;
    }
    Ok(format!("{pos} positives, {avail} negatives available"))
}

fn held_out_ap(params: &ModelParams<f32>, cfg: &ModelConfig, test: &[Sample]) -> Result<extd::detect::EvalReport, String> {
    let images: Vec<Tensor<f32>> = test.iter().map(|s| s.image.clone()).collect();
    let dets = detect_all(params, cfg, &images, &DetectConfig::default()).map_err(|e| e.to_string())?;
    let gts: Vec<Vec<BoxXYWH>> = test.iter().map(|s| s.boxes.clone()).collect();
    Ok(average_precision(&dets, &gts, 0.5))
}

/// Desk-training recipe: width-16 FPN with per-pass BN statistics, batch 8.
fn desk_model() -> ModelConfig {
    let mut cfg = ModelConfig::preset(Variant::Fpn, 16);
    cfg.bn_per_pass = true;
    cfg
}

fn desk_training() -> Outcome {
    let t = Instant::now();
    let cfg = desk_model();

    // One image, eight augmented views per batch: identical batch members
    // leave batch norm with a near-zero variance on the 2x2 and 1x1 maps.
    let one = synth_samples(1, 128, 21);
    let tc = TrainConfig::new(Schedule::constant(200, 0.01, 8), 128, 0);
    let (_, trace) = train_loop(&cfg, &tc, &one, None, |_| {}).map_err(|e| e.to_string())?;
    let first = trace[0].total;
    let tail = trace[trace.len() - 10..].iter().map(|l| l.total).sum::<f64>() / 10.0;
    let halved_at = trace.iter().position(|l| l.total <= 0.5 * first).map(|i| i + 1);
    ensure(tail <= 0.5 * first, || format!("single-sample loss {first:.3} -> {tail:.3} over the last 10 iterations"))?;

    let train = synth_samples(500, 128, 1);
    let test = synth_samples(100, 128, 2);
    let tc = TrainConfig::new(Schedule::scaled(2000, 0.01, 8), 128, 0);
    let (params, trace) = train_loop(&cfg, &tc, &train, None, |_| {}).map_err(|e| e.to_string())?;
    let r = held_out_ap(&params, &cfg, &test)?;
    let detail = format!(
        "overfit {:.2} -> {:.2} (first halved at iter {}), loss {:.3} -> {:.3}, held-out AP {:.4} (tp {} fp {} fn {}), {:.0}s",
        first,
        tail,
        halved_at.unwrap_or(0),
        trace[0].total,
        trace.last().unwrap().total,
        r.ap,
        r.tp,
        r.fp,
        r.fn_,
        t.elapsed().as_secs_f64()
    );
    ensure(r.ap >= 0.5, || detail.clone())?;
    within_time(t, Duration::from_secs(30 * 60)).map_err(|e| format!("{detail}; {e}"))?;
    Ok(detail)
}

fn run_once() -> Result<(Vec<TraceLine>, String), String> {
    let cfg = desk_model();
    let train = synth_samples(24, 128, 31);
    let test = synth_samples(4, 128, 32);
    let tc = TrainConfig::new(Schedule::scaled(12, 0.01, 4), 128, 7);
    let (params, trace) = train_loop(&cfg, &tc, &train, None, |_| {}).map_err(|e| e.to_string())?;
    let images: Vec<Tensor<f32>> = test.iter().map(|s| s.image.clone()).collect();
    let dc = DetectConfig { conf_thresh: 0.0, ..DetectConfig::default() };
    let dets = detect_all(&params, &cfg, &images, &dc).map_err(|e| e.to_string())?;
    let named: Vec<(String, _)> = dets.into_iter().enumerate().map(|(i, d)| (format!("img{i}"), d)).collect();
    Ok((trace, format_detections(&named)))
}

fn bits(trace: &[TraceLine]) -> Vec<[u64; 4]> {
    trace.iter().map(|l| [l.total.to_bits(), l.cls.to_bits(), l.reg.to_bits(), l.lr.to_bits()]).collect()
}

fn determinism() -> Outcome {
    let (ta, da) = run_once()?;
    let (tb, db) = run_once()?;
    ensure(bits(&ta) == bits(&tb), || "loss traces differ between runs".into())?;
    ensure(da == db, || "detection files differ between runs".into())?;
    let mut detail = format!("{} trace lines, {} detection bytes identical", ta.len(), da.len());
    if cfg!(feature = "parallel") {
        extd::par::set_enabled(false);
        let seq = run_once();
        extd::par::set_enabled(true);
        let (ts, ds) = seq?;
        ensure(bits(&ta) == bits(&ts) && da == ds, || "sequential run differs from parallel run".into())?;
        detail.push_str("; sequential fallback identical");
    }
    Ok(detail)
}

fn same_bits<T: Element>(a: &ModelParams<T>, b: &ModelParams<T>) -> bool {
    a.len() == b.len()
        && a.iter().zip(b.iter()).all(|((n, x), (m, y))| {
            n == m && x.shape() == y.shape() && x.data().iter().zip(y.data()).all(|(u, v)| u.as_f64().to_bits() == v.as_f64().to_bits())
        })
}

fn serialization() -> Outcome {
    let dir = std::env::temp_dir().join(format!("extd-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let cfg = ModelConfig::preset(Variant::Fpn, 32);
    let p32 = build_model::<f32>(&cfg, 4).map_err(|e| e.to_string())?;
    let p64 = build_model::<f64>(&cfg, 4).map_err(|e| e.to_string())?;
    let path = dir.join("w32.bin");
    save_weights(&path, &p32).map_err(|e| e.to_string())?;
    let back32: ModelParams<f32> = load_weights(&path).map_err(|e| e.to_string())?;
    ensure(same_bits(&p32, &back32), || "f32 weights changed on round trip".into())?;
    let back64 = decode_weights::<f64>(&encode_weights(&p64).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure(same_bits(&p64, &back64), || "f64 weights changed on round trip".into())?;
    let _ = std::fs::remove_dir_all(&dir);

    ensure(common::golden_outputs() == common::golden_outputs(), || "formats differ between renders".into())?;
    let bad = common::check_golden();
    ensure(bad.is_empty(), || format!("golden mismatch: {bad:?}"))?;
    Ok(format!("{} tensors bit-exact in both kinds, {} golden files", p32.len(), common::golden_outputs().len()))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "parameter budgets", budget),
        (2, "madds at 640x640", madds),
        (3, "pyramid shape law", shape_law),
        (4, "gradient fidelity", gradient_fidelity),
        (5, "backbone sharing", sharing),
        (6, "matching oracle", matching_oracle),
        (7, "loss identities", loss_identities),
        (8, "desk-scale training", desk_training),
        (9, "determinism", determinism),
        (10, "serialization", serialization),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, f) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {id:>2} {name}: PASS ({secs:.1}s) {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {id:>2} {name}: FAIL ({secs:.1}s) {d}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
