use crate::anchors::{iou, BoxXYWH};

use super::Detection;

/// Number of score thresholds in the PR sweep: 1, 0.999, ..., 0.001.
pub const PR_THRESHOLDS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub ap: f64,
    pub pr_points: Vec<PrPoint>,
    /// Counts among detections scoring at least 0.5.
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub num_gt: usize,
}

/// One-to-one greedy matching in descending score order (ties: lower image,
/// then lower detection index). Each detection takes the unmatched gt of
/// highest IoU at or above `iou_thresh`.
///
/// AP is the area under the all-point interpolated PR curve. With no ground
/// truth at all, AP is 1 if there are no detections either, else 0.
pub fn average_precision(dets: &[Vec<Detection>], gts: &[Vec<BoxXYWH>], iou_thresh: f64) -> EvalReport {
    assert_eq!(dets.len(), gts.len(), "one detection list per image");
    let num_gt: usize = gts.iter().map(Vec::len).sum();
    let mut order: Vec<(usize, usize)> =
        dets.iter().enumerate().flat_map(|(im, d)| (0..d.len()).map(move |j| (im, j))).collect();
    order.sort_by(|&(ia, ja), &(ib, jb)| dets[ib][jb].score.total_cmp(&dets[ia][ja].score).then((ia, ja).cmp(&(ib, jb))));

    let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut ranked = Vec::with_capacity(order.len());
    for &(im, j) in &order {
        let d = &dets[im][j];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts[im].iter().enumerate() {
            if taken[im][g] {
                continue;
            }
            let o = iou(&d.bbox, gt);
            if o >= iou_thresh && best.map_or(true, |(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        if let Some((g, _)) = best {
            taken[im][g] = true;
        }
        ranked.push((d.score, best.is_some()));
    }

    let ap = if num_gt == 0 {
        if ranked.is_empty() { 1.0 } else { 0.0 }
    } else {
        interpolated_ap(&ranked, num_gt)
    };

    let mut pr_points = Vec::with_capacity(PR_THRESHOLDS);
    let mut pos = 0;
    let (mut tp, mut fp) = (0, 0);
    for k in 0..PR_THRESHOLDS {
        let t = 1.0 - k as f64 / PR_THRESHOLDS as f64;
        while pos < ranked.len() && ranked[pos].0 >= t {
            if ranked[pos].1 { tp += 1 } else { fp += 1 }
            pos += 1;
        }
        pr_points.push(rates(t, tp, fp, num_gt));
    }

    let at_half: Vec<_> = ranked.iter().filter(|r| r.0 >= 0.5).collect();
    let tp_half = at_half.iter().filter(|r| r.1).count();
    EvalReport {
        ap,
        pr_points,
        tp: tp_half,
        fp: at_half.len() - tp_half,
        fn_: num_gt - tp_half,
        num_gt,
    }
}

fn rates(threshold: f64, tp: usize, fp: usize, num_gt: usize) -> PrPoint {
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if num_gt == 0 { 0.0 } else { tp as f64 / num_gt as f64 };
    PrPoint { threshold, precision, recall }
}

fn interpolated_ap(ranked: &[(f64, bool)], num_gt: usize) -> f64 {
    let mut recall = vec![0.0];
    let mut precision = vec![0.0];
    let mut tp = 0usize;
    for (i, &(_, hit)) in ranked.iter().enumerate() {
        tp += hit as usize;
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    (1..recall.len()).map(|i| (recall[i] - recall[i - 1]) * precision[i]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64) -> BoxXYWH {
        BoxXYWH::new(x, 0.0, 10.0, 10.0).unwrap()
    }

    fn det(b: BoxXYWH, score: f64) -> Detection {
        Detection { bbox: b, score, level: 1 }
    }

    #[test]
    fn perfect_detections() {
        let gts = vec![vec![bx(0.0), bx(20.0)], vec![bx(5.0)]];
        let dets: Vec<Vec<Detection>> = gts.iter().map(|g| g.iter().map(|&b| det(b, 1.0)).collect()).collect();
        let r = average_precision(&dets, &gts, 0.5);
        assert_eq!(r.ap, 1.0);
        assert_eq!((r.tp, r.fp, r.fn_), (3, 0, 0));
    }

    #[test]
    fn no_detections() {
        let r = average_precision(&[vec![]], &[vec![bx(0.0)]], 0.5);
        assert_eq!(r.ap, 0.0);
        assert_eq!(r.fn_, 1);
        assert!(r.pr_points.iter().all(|p| p.precision == 1.0 && p.recall == 0.0));
    }

    #[test]
    fn hand_evaluated_curve() {
        let gts = vec![vec![bx(0.0), bx(40.0)]];
        let dets = vec![vec![det(bx(0.0), 0.9), det(bx(100.0), 0.8), det(bx(40.0), 0.7)]];
        let r = average_precision(&dets, &gts, 0.5);
        assert!((r.ap - 5.0 / 6.0).abs() < 1e-12);
        let at = |t: f64| r.pr_points.iter().find(|p| (p.threshold - t).abs() < 1e-9).unwrap();
        assert_eq!((at(0.85).precision, at(0.85).recall), (1.0, 0.5));
        assert_eq!(at(0.75).precision, 0.5);
        assert_eq!(at(0.7).recall, 1.0);
    }

    #[test]
    fn duplicate_detection_is_false_positive() {
        let gts = vec![vec![bx(0.0)]];
        let dets = vec![vec![det(bx(0.0), 0.9), det(bx(1.0), 0.8)]];
        let r = average_precision(&dets, &gts, 0.5);
        assert_eq!((r.tp, r.fp), (1, 1));
        assert_eq!(r.ap, 1.0);
    }

    #[test]
    fn highest_iou_gt_wins() {
        let gts = vec![vec![bx(0.0), bx(2.0)]];
        let dets = vec![vec![det(bx(2.0), 0.9), det(bx(0.0), 0.8)]];
        let r = average_precision(&dets, &gts, 0.5);
        assert_eq!(r.tp, 2);
    }

    #[test]
    fn sweep_has_1000_thresholds() {
        let r = average_precision(&[vec![]], &[vec![]], 0.5);
        assert_eq!(r.pr_points.len(), 1000);
        assert_eq!(r.pr_points[0].threshold, 1.0);
        assert!((r.pr_points[999].threshold - 0.001).abs() < 1e-12);
        assert_eq!(r.ap, 1.0);
    }
}
