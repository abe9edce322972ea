//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use extd::anchors::{iou, BoxXYWH, MatchParams};

/// Straightforward restatement of the matching rules, written without
/// sharing any code with the library.
pub fn oracle_match(gts: &[BoxXYWH], anchors: &[BoxXYWH], p: &MatchParams) -> Vec<Option<usize>> {
    let n = anchors.len();
    let mut assigned: Vec<Option<usize>> = vec![None; n];
    if gts.is_empty() {
        return assigned;
    }
    let ov = |g: usize, a: usize| iou(&gts[g], &anchors[a]);
    // stage 1: best face per anchor, first face wins ties
    for (a, slot) in assigned.iter_mut().enumerate() {
        let mut best_g = 0;
        for g in 0..gts.len() {
            if ov(g, a) > ov(best_g, a) {
                best_g = g;
            }
        }
        if ov(best_g, a) >= p.t1 {
            *slot = Some(best_g);
        }
    }
    // forcing: each face in order takes its best anchor not forced before
    let mut taken = vec![false; n];
    for g in 0..gts.len() {
        let free: Vec<usize> = (0..n).filter(|&a| !taken[a]).collect();
        let best = free.iter().copied().fold(None, |acc: Option<usize>, a| match acc {
            Some(b) if ov(g, b) >= ov(g, a) => Some(b),
            _ => Some(a),
        });
        if let Some(a) = best {
            taken[a] = true;
            assigned[a] = Some(g);
        }
    }
    let count = |assigned: &[Option<usize>], g: usize| assigned.iter().filter(|s| **s == Some(g)).count();
    let total = assigned.iter().filter(|s| s.is_some()).count();
    let target = p.min_per_gt.unwrap_or((total / gts.len()).max(1));
    // top-up: repeatedly take the best remaining free anchor above the floor
    for g in 0..gts.len() {
        while count(&assigned, g) < target {
            let pick = (0..n)
                .filter(|&a| assigned[a].is_none() && ov(g, a) > p.t2)
                .fold(None, |acc: Option<usize>, a| match acc {
                    Some(b) if ov(g, b) >= ov(g, a) => Some(b),
                    _ => Some(a),
                });
            match pick {
                Some(a) => assigned[a] = Some(g),
                None => break,
            }
        }
    }
    assigned
}


/// Every external text/binary format rendered from fixed inputs, keyed by
/// the golden file name.
pub fn golden_outputs() -> Vec<(&'static str, Vec<u8>)> {
    use extd::detect::{average_precision, Detection};
    use extd::io::{encode_weights, format_detections, format_pr, render_config, serialize_annotations, AnnotationEntry, DatasetIndex};
    use extd::model::{ModelConfig, ModelParams, Variant};
    use extd::tensor::Tensor;
    use extd::train::TraceLine;

    let b = |x: f64, y: f64, w: f64, h: f64| BoxXYWH::new(x, y, w, h).unwrap();
    let det = |bbox: BoxXYWH, score: f64| Detection { bbox, score, level: 1 };

    let gts = vec![vec![b(10.0, 10.0, 20.0, 24.0), b(60.0, 8.0, 12.5, 12.5)], vec![b(3.0, 40.0, 9.0, 11.0)]];
    let dets = vec![
        vec![det(b(11.0, 9.5, 19.0, 25.0), 0.93), det(b(61.0, 9.0, 12.0, 12.0), 0.41), det(b(90.0, 90.0, 10.0, 10.0), 0.62)],
        vec![det(b(0.0, 0.0, 8.0, 8.0), 0.08)],
    ];
    let ids = ["images/000000.ppm".to_string(), "images/000001.ppm".to_string()];
    let det_text = format_detections(&ids.iter().cloned().zip(dets.iter().cloned()).collect::<Vec<_>>());
    let report = average_precision(&dets, &gts, 0.5);
    let pr_text = format_pr(&report.pr_points);

    let index = DatasetIndex {
        entries: ids.iter().cloned().zip(gts).map(|(path, boxes)| AnnotationEntry { path, boxes }).collect(),
        dropped: 0,
    };
    let trace: String = (1..=3)
        .map(|i| {
            let t = TraceLine { iter: i, total: 10.0 / i as f64, cls: 8.0 / i as f64, reg: 2.0 / i as f64, lr: 0.01 };
            t.format() + "\n"
        })
        .collect();

    let mut params: ModelParams<f32> = ModelParams::new();
    params.insert("head.w", Tensor::from_vec([2, 1, 1, 2], vec![1.0, -2.0, 0.5, 3.25]).unwrap());
    params.insert("head.b", Tensor::from_vec([2, 1, 1, 1], vec![0.0, -0.125]).unwrap());

    vec![
        ("detections.txt", det_text.into_bytes()),
        ("pr.txt", pr_text.into_bytes()),
        ("annotations.txt", serialize_annotations(&index).into_bytes()),
        ("trace.txt", trace.into_bytes()),
        ("fpn48.cfg", render_config(&ModelConfig::preset(Variant::Fpn, 48)).into_bytes()),
        ("weights.bin", encode_weights(&params).unwrap()),
    ]
}

/// Compares [`golden_outputs`] with `tests/golden/`; `EXTD_BLESS=1`
/// rewrites the files instead. Returns the names that differ.
pub fn check_golden() -> Vec<String> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let bless = std::env::var_os("EXTD_BLESS").is_some();
    let mut bad = Vec::new();
    for (name, bytes) in golden_outputs() {
        let path = dir.join(name);
        if bless {
            std::fs::write(&path, &bytes).unwrap();
        } else if std::fs::read(&path).ok().as_deref() != Some(&bytes[..]) {
            bad.push(name.to_string());
        }
    }
    bad
}
