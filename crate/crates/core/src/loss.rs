//! Multitask detection loss: softmax cross-entropy over kept anchors plus
//! smooth-L1 box regression over positives, with hard-negative mining.

use crate::anchors::{match_scale_compensated, AnchorGrid, BoxXYWH, Label, MatchAssignment, MatchParams};
use crate::error::{Error, Result};
use crate::model::HeadOutput;
use crate::par;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight of the classification term.
    pub lambda: f64,
    /// Kept negatives per positive.
    pub neg_ratio: usize,
    /// Negatives kept for an image without positives.
    pub empty_negatives: usize,
    /// Normalize the classification term by every anchor instead of the
    /// kept (positive + mined negative) ones.
    pub n_cls_all_anchors: bool,
    pub matching: MatchParams,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 4.0,
            neg_ratio: 3,
            empty_negatives: 16,
            n_cls_all_anchors: false,
            matching: MatchParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls_term: f64,
    pub reg_term: f64,
    pub n_cls: usize,
    pub n_reg: usize,
    pub lambda: f64,
}

/// Head outputs of one image flattened to anchor order.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorPredictions {
    pub logits: Vec<[f64; 2]>,
    pub deltas: Vec<[f64; 4]>,
}

/// Gradients in the same layout as [`AnchorPredictions`].
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrads {
    pub logits: Vec<[f64; 2]>,
    pub deltas: Vec<[f64; 4]>,
}

fn check_heads<T: Element>(heads: &[HeadOutput<T>], grid: &AnchorGrid) -> Result<()> {
    if heads.len() != grid.levels.len() {
        return Err(Error::shape(format!("{} head levels for {} anchor levels", heads.len(), grid.levels.len())));
    }
    for (i, (h, l)) in heads.iter().zip(&grid.levels).enumerate() {
        let [_, cc, ch, cw] = h.cls.shape();
        let [rn, rc, rh, rw] = h.reg.shape();
        if cc != 2 || rc != 4 || (ch, cw) != (l.rows, l.cols) || (rh, rw) != (l.rows, l.cols) || rn != h.cls.batch() {
            return Err(Error::shape(format!(
                "level {}: cls {:?} / reg {:?} do not cover a {}x{} anchor grid",
                i + 1,
                h.cls.shape(),
                h.reg.shape(),
                l.rows,
                l.cols
            )));
        }
    }
    Ok(())
}

/// Flattens image `n` of the head outputs into global anchor order.
pub fn gather<T: Element>(heads: &[HeadOutput<T>], grid: &AnchorGrid, n: usize) -> Result<AnchorPredictions> {
    check_heads(heads, grid)?;
    let mut logits = Vec::with_capacity(grid.len());
    let mut deltas = Vec::with_capacity(grid.len());
    for h in heads {
        let c: Vec<&[T]> = (0..2).map(|k| h.cls.plane(n, k)).collect();
        let r: Vec<&[T]> = (0..4).map(|k| h.reg.plane(n, k)).collect();
        for i in 0..c[0].len() {
            logits.push([c[0][i].as_f64(), c[1][i].as_f64()]);
            deltas.push([r[0][i].as_f64(), r[1][i].as_f64(), r[2][i].as_f64(), r[3][i].as_f64()]);
        }
    }
    Ok(AnchorPredictions { logits, deltas })
}

/// Inverse of [`gather`] for a whole batch of gradients.
pub fn scatter<T: Element>(grads: &[AnchorGrads], heads: &[HeadOutput<T>], grid: &AnchorGrid) -> Result<Vec<HeadOutput<T>>> {
    check_heads(heads, grid)?;
    let mut out = Vec::with_capacity(heads.len());
    for (h, l) in heads.iter().zip(&grid.levels) {
        let mut cls = Tensor::<T>::zeros(h.cls.shape());
        let mut reg = Tensor::<T>::zeros(h.reg.shape());
        for (n, g) in grads.iter().enumerate() {
            for r in 0..l.rows {
                for c in 0..l.cols {
                    let a = l.offset + r * l.cols + c;
                    for k in 0..2 {
                        cls.set([n, k, r, c], T::lit(g.logits[a][k]));
                    }
                    for k in 0..4 {
                        reg.set([n, k, r, c], T::lit(g.deltas[a][k]));
                    }
                }
            }
        }
        out.push(HeadOutput { cls, reg });
    }
    Ok(out)
}

/// Compensated (Neumaier) running sum.
#[derive(Default)]
struct Sum {
    hi: f64,
    lo: f64,
}

impl Sum {
    fn add(&mut self, x: f64) {
        let t = self.hi + x;
        self.lo += if self.hi.abs() >= x.abs() { (self.hi - t) + x } else { (x - t) + self.hi };
        self.hi = t;
    }

    fn value(&self) -> f64 {
        self.hi + self.lo
    }
}

fn log_softmax(l: [f64; 2]) -> [f64; 2] {
    let m = l[0].max(l[1]);
    let lse = m + ((l[0] - m).exp() + (l[1] - m).exp()).ln();
    [l[0] - lse, l[1] - lse]
}

/// Two-class cross-entropy; `target` 1 is face.
pub fn cross_entropy(logits: [f64; 2], target: usize) -> f64 {
    -log_softmax(logits)[target]
}

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

fn class_of(label: Label) -> usize {
    usize::from(label == Label::Positive)
}

/// Cross-entropy of every anchor against its current label (negatives and
/// ignored anchors against background).
pub fn anchor_cls_losses(pred: &AnchorPredictions, a: &MatchAssignment) -> Vec<f64> {
    pred.logits.iter().zip(&a.labels).map(|(&l, &lab)| cross_entropy(l, class_of(lab))).collect()
}

/// Keeps every positive and the highest-loss negatives (`ratio` per
/// positive, or `empty_keep` when there are none); the rest become ignored.
/// Ties keep the lower anchor index.
pub fn hard_negative_mine(cls_losses: &[f64], a: &MatchAssignment, ratio: usize, empty_keep: usize) -> MatchAssignment {
    let n_pos = a.count(Label::Positive);
    let keep = if n_pos == 0 { empty_keep } else { ratio * n_pos };
    let mut neg: Vec<usize> = (0..a.len()).filter(|&i| a.labels[i] == Label::Negative).collect();
    neg.sort_by(|&x, &y| cls_losses[y].total_cmp(&cls_losses[x]).then(x.cmp(&y)));
    let mut out = a.clone();
    for &i in neg.iter().skip(keep) {
        out.labels[i] = Label::Ignore;
    }
    out
}

/// Matches and mines every image of a batch against the current outputs.
pub fn build_targets<T: Element>(
    heads: &[HeadOutput<T>],
    grid: &AnchorGrid,
    gts: &[Vec<BoxXYWH>],
    cfg: &LossConfig,
) -> Result<Vec<MatchAssignment>> {
    check_heads(heads, grid)?;
    let batch = heads[0].cls.batch();
    if gts.len() != batch {
        return Err(Error::shape(format!("{} annotation lists for a batch of {batch}", gts.len())));
    }
    let preds = (0..batch).map(|n| gather(heads, grid, n)).collect::<Result<Vec<_>>>()?;
    Ok(par::map_indexed(batch, |n| {
        let m = match_scale_compensated(&gts[n], grid, &cfg.matching);
        let losses = anchor_cls_losses(&preds[n], &m);
        hard_negative_mine(&losses, &m, cfg.neg_ratio, cfg.empty_negatives)
    }))
}

/// Loss over a batch with already-mined targets; sums and counts run over
/// the whole batch.
pub fn multitask_loss(preds: &[AnchorPredictions], targets: &[MatchAssignment], cfg: &LossConfig) -> Result<LossBreakdown> {
    Ok(loss_and_grads(preds, targets, cfg, false)?.0)
}

pub fn multitask_loss_with_grads(
    preds: &[AnchorPredictions],
    targets: &[MatchAssignment],
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Vec<AnchorGrads>)> {
    loss_and_grads(preds, targets, cfg, true)
}

fn loss_and_grads(
    preds: &[AnchorPredictions],
    targets: &[MatchAssignment],
    cfg: &LossConfig,
    want_grads: bool,
) -> Result<(LossBreakdown, Vec<AnchorGrads>)> {
    if preds.len() != targets.len() {
        return Err(Error::shape(format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    let mut n_cls = 0;
    let mut n_reg = 0;
    for (p, t) in preds.iter().zip(targets) {
        if p.logits.len() != t.len() || p.deltas.len() != t.len() {
            return Err(Error::shape(format!("{} predicted anchors, {} assigned", p.logits.len(), t.len())));
        }
        n_cls += if cfg.n_cls_all_anchors { t.len() } else { t.len() - t.count(Label::Ignore) };
        n_reg += t.count(Label::Positive);
    }
    let cls_scale = if n_cls > 0 { cfg.lambda / n_cls as f64 } else { 0.0 };
    let reg_scale = if n_reg > 0 { 1.0 / n_reg as f64 } else { 0.0 };
    let mut cls_sum = Sum::default();
    let mut reg_sum = Sum::default();
    let mut grads = Vec::new();
    for (p, t) in preds.iter().zip(targets) {
        let mut g = AnchorGrads {
            logits: if want_grads { vec![[0.0; 2]; t.len()] } else { Vec::new() },
            deltas: if want_grads { vec![[0.0; 4]; t.len()] } else { Vec::new() },
        };
        for (j, &label) in t.labels.iter().enumerate() {
            if label == Label::Ignore {
                continue;
            }
            let cls = class_of(label);
            let ls = log_softmax(p.logits[j]);
            cls_sum.add(-ls[cls]);
            if want_grads {
                for k in 0..2 {
                    let onehot = if k == cls { 1.0 } else { 0.0 };
                    g.logits[j][k] = cls_scale * (ls[k].exp() - onehot);
                }
            }
            if label == Label::Positive {
                for k in 0..4 {
                    let r = p.deltas[j][k] - t.reg_targets[j][k];
                    reg_sum.add(smooth_l1(r));
                    if want_grads {
                        g.deltas[j][k] = reg_scale * smooth_l1_grad(r);
                    }
                }
            }
        }
        grads.push(g);
    }
    let cls_term = cls_scale * cls_sum.value();
    let reg_term = reg_scale * reg_sum.value();
    let b = LossBreakdown { total: cls_term + reg_term, cls_term, reg_term, n_cls, n_reg, lambda: cfg.lambda };
    Ok((b, grads))
}

/// Loss of a batch of head outputs with fixed targets, plus the gradient
/// with respect to every head tensor.
pub fn head_loss<T: Element>(
    heads: &[HeadOutput<T>],
    grid: &AnchorGrid,
    targets: &[MatchAssignment],
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Vec<HeadOutput<T>>)> {
    check_heads(heads, grid)?;
    let batch = heads[0].cls.batch();
    let preds = (0..batch).map(|n| gather(heads, grid, n)).collect::<Result<Vec<_>>>()?;
    let (b, g) = multitask_loss_with_grads(&preds, targets, cfg)?;
    Ok((b, scatter(&g, heads, grid)?))
}
