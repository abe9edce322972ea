//! Inference: forward, decode, filter, NMS. Plus evaluation and timing.

mod bench;
mod eval;

pub use bench::{bench, BenchRow};
pub use eval::{average_precision, EvalReport, PrPoint, PR_THRESHOLDS};

use crate::anchors::{decode, generate_anchors, iou, AnchorGrid, BoxXYWH};
use crate::error::{Error, Result};
use crate::loss::gather;
use crate::model::{forward, HeadOutput, ModelConfig, ModelParams};
use crate::par;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BoxXYWH,
    pub score: f64,
    /// Pyramid level of origin, 1 = finest. 0 when unknown (read from file).
    pub level: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectConfig {
    pub conf_thresh: f64,
    pub nms_iou: f64,
    pub topk: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig { conf_thresh: 0.05, nms_iou: 0.3, topk: 750 }
    }
}

/// Softmax probability of the face class.
pub fn face_probability(logits: [f64; 2]) -> f64 {
    1.0 / (1.0 + (logits[0] - logits[1]).exp())
}

/// Raw candidates of image `n` before NMS, in anchor order. Boxes are
/// clipped to `[0, width) x [0, height)`; boxes clipped away are dropped.
pub fn candidates<T: Element>(
    heads: &[HeadOutput<T>],
    grid: &AnchorGrid,
    n: usize,
    conf_thresh: f64,
    width: f64,
    height: f64,
) -> Result<Vec<Detection>> {
    let pred = gather(heads, grid, n)?;
    let mut out = Vec::new();
    for (i, (logits, d)) in pred.logits.iter().zip(&pred.deltas).enumerate() {
        let score = face_probability(*logits);
        if !(score > conf_thresh) {
            continue;
        }
        let Some(bbox) = decode(*d, &grid.anchors[i]).clip(width, height) else { continue };
        let (level, _, _) = grid.locate(i).expect("index within grid");
        out.push(Detection { bbox, score, level: level + 1 });
    }
    Ok(out)
}

/// Greedy suppression in descending score order; equal scores keep the
/// lower input index first.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        if kept.iter().all(|k| iou(&k.bbox, &dets[i].bbox) <= iou_thresh) {
            kept.push(dets[i]);
        }
    }
    kept
}

/// Detects faces in one `[1, 3, H, W]` image of any size. The image is
/// zero-padded bottom/right to the input multiple; boxes are reported in
/// the original frame.
pub fn detect<T: Element>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    image: &Tensor<T>,
    dc: &DetectConfig,
) -> Result<Vec<Detection>> {
    let [n, c, h, w] = image.shape();
    if n != 1 || c != 3 {
        return Err(Error::shape(format!("detect expects one RGB image, got {:?}", image.shape())));
    }
    let m = cfg.input_multiple();
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    let padded = if (ph, pw) == (h, w) { image.clone() } else { image.pad_to(ph, pw)? };
    let heads = forward(params, cfg, &padded)?;
    let grid = generate_anchors(ph, pw, cfg.levels)?;
    let raw = candidates(&heads, &grid, 0, dc.conf_thresh, w as f64, h as f64)?;
    let mut kept = nms(&raw, dc.nms_iou);
    kept.truncate(dc.topk);
    Ok(kept)
}

/// [`detect`] over many images, results in input order.
pub fn detect_all<T: Element>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    images: &[Tensor<T>],
    dc: &DetectConfig,
) -> Result<Vec<Vec<Detection>>> {
    par::map_indexed(images.len(), |i| detect(params, cfg, &images[i], dc)).into_iter().collect()
}
