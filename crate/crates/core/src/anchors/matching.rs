use super::{encode, iou, AnchorGrid, BoxXYWH};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Positive,
    Negative,
    Ignore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchAssignment {
    pub labels: Vec<Label>,
    /// Ground-truth index of each positive anchor.
    pub matched_gt: Vec<Option<usize>>,
    /// Regression targets; zero for non-positives.
    pub reg_targets: Vec<[f64; 4]>,
}

impl MatchAssignment {
    pub fn all_negative(n: usize) -> Self {
        MatchAssignment {
            labels: vec![Label::Negative; n],
            matched_gt: vec![None; n],
            reg_targets: vec![[0.0; 4]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().enumerate().filter(|(_, &l)| l == Label::Positive).map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchParams {
    /// Stage-1 overlap threshold.
    pub t1: f64,
    /// Stage-2 overlap floor (strict).
    pub t2: f64,
    /// Stage-2 per-face target; `None` uses the stage-1 average.
    pub min_per_gt: Option<usize>,
}

impl Default for MatchParams {
    fn default() -> Self {
        MatchParams { t1: 0.35, t2: 0.1, min_per_gt: None }
    }
}

/// Two-stage scale-compensated matching over a grid.
pub fn match_scale_compensated(gts: &[BoxXYWH], grid: &AnchorGrid, p: &MatchParams) -> MatchAssignment {
    match_boxes(gts, &grid.anchors, p)
}

/// Matching over an arbitrary anchor list.
///
/// Stage 1 marks anchors whose best overlap reaches `t1` (argmax face, lower
/// index on ties) and then forces, face by face, the best anchor not already
/// forced. Stage 2 tops every face up to the average stage-1 count with its
/// best unassigned anchors above `t2`.
pub fn match_boxes(gts: &[BoxXYWH], anchors: &[BoxXYWH], p: &MatchParams) -> MatchAssignment {
    let n = anchors.len();
    let mut out = MatchAssignment::all_negative(n);
    if gts.is_empty() || n == 0 {
        return out;
    }
    // overlaps[g][a]
    let overlaps: Vec<Vec<f64>> = par::map_indexed(gts.len(), |g| anchors.iter().map(|a| iou(&gts[g], a)).collect());

    for a in 0..n {
        let mut best = (0usize, overlaps[0][a]);
        for (g, row) in overlaps.iter().enumerate().skip(1) {
            if row[a] > best.1 {
                best = (g, row[a]);
            }
        }
        if best.1 >= p.t1 {
            out.labels[a] = Label::Positive;
            out.matched_gt[a] = Some(best.0);
        }
    }

    let mut forced = vec![false; n];
    for (g, row) in overlaps.iter().enumerate() {
        let mut best: Option<usize> = None;
        for a in 0..n {
            if !forced[a] && best.map_or(true, |b| row[a] > row[b]) {
                best = Some(a);
            }
        }
        if let Some(a) = best {
            forced[a] = true;
            out.labels[a] = Label::Positive;
            out.matched_gt[a] = Some(g);
        }
    }

    let mut per_gt = vec![0usize; gts.len()];
    for g in out.matched_gt.iter().flatten() {
        per_gt[*g] += 1;
    }
    let target = p.min_per_gt.unwrap_or_else(|| (per_gt.iter().sum::<usize>() / gts.len()).max(1));

    for (g, row) in overlaps.iter().enumerate() {
        if per_gt[g] >= target {
            continue;
        }
        let mut cand: Vec<usize> =
            (0..n).filter(|&a| out.labels[a] != Label::Positive && row[a] > p.t2).collect();
        cand.sort_by(|&x, &y| row[y].total_cmp(&row[x]).then(x.cmp(&y)));
        for a in cand.into_iter().take(target - per_gt[g]) {
            out.labels[a] = Label::Positive;
            out.matched_gt[a] = Some(g);
            per_gt[g] += 1;
        }
    }

    for a in 0..n {
        if let Some(g) = out.matched_gt[a] {
            out.reg_targets[a] = encode(&gts[g], &anchors[a]).expect("valid boxes");
        }
    }
    out
}
