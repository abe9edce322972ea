//! Optimization: SGD, learning-rate schedule, augmentation, the training
//! loop and an end-to-end gradient check.

pub mod augment;
pub mod gradcheck;
pub mod schedule;
pub mod sgd;

pub use augment::{augment, AugmentConfig, Sample};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use schedule::Schedule;
pub use sgd::{sgd_step, OptimizerState};

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::anchors::{generate_anchors, AnchorGrid, BoxXYWH, MatchAssignment};
use crate::error::{Error, Result};
use crate::graph::Tape;
use crate::loss::{build_targets, head_loss, LossBreakdown, LossConfig};
use crate::model::{build_model, network, HeadOutput, ModelConfig, ModelParams};
use crate::par;
use crate::tensor::{BnMode, Element, Tensor};

/// Result of one differentiated forward pass.
pub struct Evaluated<T: Element> {
    pub loss: LossBreakdown,
    pub grads: IndexMap<String, Tensor<T>>,
    pub targets: Vec<MatchAssignment>,
}

/// Forward, match and mine (unless `targets` is given), loss, backward.
/// Batch norm runs in `mode`; train mode updates running statistics.
pub fn evaluate<T: Element>(
    params: &mut ModelParams<T>,
    cfg: &ModelConfig,
    images: Tensor<T>,
    gts: &[Vec<BoxXYWH>],
    grid: &AnchorGrid,
    loss_cfg: &LossConfig,
    mode: BnMode,
    targets: Option<&[MatchAssignment]>,
) -> Result<Evaluated<T>> {
    let mut tape = Tape::new(params, mode);
    let x = tape.input(images);
    let out = network(&mut tape, cfg, &x)?;
    let heads: Vec<HeadOutput<T>> = out
        .heads
        .iter()
        .map(|&(c, r)| HeadOutput { cls: tape.value(c).clone(), reg: tape.value(r).clone() })
        .collect();
    let targets = match targets {
        Some(t) => t.to_vec(),
        None => build_targets(&heads, grid, gts, loss_cfg)?,
    };
    let (loss, head_grads) = head_loss(&heads, grid, &targets, loss_cfg)?;
    let mut seeds = Vec::with_capacity(2 * heads.len());
    for (&(c, r), g) in out.heads.iter().zip(head_grads) {
        seeds.push((c, g.cls));
        seeds.push((r, g.reg));
    }
    let grads = tape.backward(seeds)?;
    Ok(Evaluated { loss, grads, targets })
}

/// Loss only, with fixed targets, plus the branch signature of the forward
/// pass (see [`Tape::branch_signature`]).
pub fn loss_value<T: Element>(
    params: &mut ModelParams<T>,
    cfg: &ModelConfig,
    images: Tensor<T>,
    grid: &AnchorGrid,
    loss_cfg: &LossConfig,
    mode: BnMode,
    targets: &[MatchAssignment],
) -> Result<(LossBreakdown, u64)> {
    let mut tape = Tape::new(params, mode);
    let x = tape.input(images);
    let out = network(&mut tape, cfg, &x)?;
    let heads: Vec<HeadOutput<T>> = out
        .heads
        .iter()
        .map(|&(c, r)| HeadOutput { cls: tape.value(c).clone(), reg: tape.value(r).clone() })
        .collect();
    Ok((head_loss(&heads, grid, targets, loss_cfg)?.0, tape.branch_signature()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub schedule: Schedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub loss: LossConfig,
    /// `None` only resizes each image to the training resolution.
    pub augment: Option<AugmentConfig>,
    pub resolution: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(schedule: Schedule, resolution: usize, seed: u64) -> Self {
        TrainConfig {
            schedule,
            momentum: 0.9,
            weight_decay: 5e-4,
            loss: LossConfig::default(),
            augment: Some(AugmentConfig::new(resolution)),
            resolution,
            seed,
        }
    }
}

/// One line of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceLine {
    pub iter: usize,
    pub total: f64,
    pub cls: f64,
    pub reg: f64,
    pub lr: f64,
}

impl TraceLine {
    /// `iter total cls reg lr` with six significant digits.
    pub fn format(&self) -> String {
        format!("{} {:.5e} {:.5e} {:.5e} {:.5e}", self.iter, self.total, self.cls, self.reg, self.lr)
    }

    pub fn parse(line: &str) -> Option<TraceLine> {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 {
            return None;
        }
        Some(TraceLine {
            iter: f[0].parse().ok()?,
            total: f[1].parse().ok()?,
            cls: f[2].parse().ok()?,
            reg: f[3].parse().ok()?,
            lr: f[4].parse().ok()?,
        })
    }
}

/// Trains from `init` (or a fresh model seeded with `model.seed`).
/// Deterministic for a fixed `TrainConfig::seed`.
pub fn train_loop(
    model: &ModelConfig,
    tc: &TrainConfig,
    data: &[Sample],
    init: Option<ModelParams<f32>>,
    mut on_iter: impl FnMut(&TraceLine),
) -> Result<(ModelParams<f32>, Vec<TraceLine>)> {
    model.validate()?;
    tc.schedule.validate()?;
    if data.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    model.check_input(tc.resolution, tc.resolution)?;
    let grid = generate_anchors(tc.resolution, tc.resolution, model.levels)?;
    let mut params = match init {
        Some(p) => p,
        None => build_model::<f32>(model, model.seed)?,
    };
    let mut opt = OptimizerState::new(&params, tc.schedule.base_lr, tc.momentum, tc.weight_decay);
    let aug = tc.augment.clone().unwrap_or_else(|| AugmentConfig::identity(tc.resolution));
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut trace = Vec::with_capacity(tc.schedule.total_iters);

    for iter in 1..=tc.schedule.total_iters {
        let mut picks = Vec::with_capacity(tc.schedule.batch_size);
        for _ in 0..tc.schedule.batch_size {
            if order.is_empty() {
                order = (0..data.len()).collect();
                order.shuffle(&mut rng);
                order.reverse();
            }
            let idx = order.pop().expect("refilled");
            picks.push((idx, rng.gen::<u64>()));
        }
        let batch: Vec<Sample> = par::map_indexed(picks.len(), |i| {
            let (idx, s) = picks[i];
            augment(&data[idx], &aug, &mut ChaCha8Rng::seed_from_u64(s))
        });
        let images = Tensor::stack(&batch.iter().map(|s| s.image.clone()).collect::<Vec<_>>())?;
        let gts: Vec<Vec<BoxXYWH>> = batch.into_iter().map(|s| s.boxes).collect();

        let ev = evaluate(&mut params, model, images, &gts, &grid, &tc.loss, BnMode::Train, None)?;
        let l = ev.loss;
        if !l.total.is_finite() || ev.grads.values().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                iter,
                detail: format!("total {} cls {} reg {} (n_cls {}, n_reg {})", l.total, l.cls_term, l.reg_term, l.n_cls, l.n_reg),
            });
        }
        opt.lr = tc.schedule.lr_at(iter);
        sgd_step(&mut params, &ev.grads, &mut opt)?;
        let line = TraceLine { iter, total: l.total, cls: l.cls_term, reg: l.reg_term, lr: opt.lr };
        on_iter(&line);
        trace.push(line);
    }
    Ok((params, trace))
}
