//! Finite-difference check of the whole differentiable pipeline: image to
//! heads to loss, in double precision, with targets frozen.
//!
//! Central differences are only valid on a smooth piece of the loss. When a
//! perturbation flips a ReLU sign or a maxout winner, the one-sided
//! difference on the unchanged side is used instead; if both sides change,
//! the step shrinks tenfold (up to three times) before the entry is skipped.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::anchors::{generate_anchors, BoxXYWH};
use crate::error::Result;
use crate::loss::LossConfig;
use crate::model::params::is_running_stat;
use crate::model::{build_model, ModelConfig, MAXOUT_BG_CHANNELS};
use crate::tensor::{BnMode, Tensor};

use super::{evaluate, loss_value};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub input_size: usize,
    pub batch: usize,
    pub step: f64,
    pub samples_per_tensor: usize,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub seed: u64,
    /// No faces and saturated background logits, so the loss is ~0.
    pub zero_loss: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { input_size: 64, batch: 2, step: 1e-5, samples_per_tensor: 20, floor: 1e-6, seed: 0, zero_loss: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    /// Entries whose perturbation crossed a ReLU or maxout branch and were
    /// differenced one-sided or with a smaller step.
    pub near_kink: usize,
    pub max_rel_err: f64,
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub loss: f64,
    pub entries: Vec<TensorCheck>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn render(&self) -> String {
        let width = self.entries.iter().map(|e| e.name.len()).max().unwrap_or(4);
        let mut s = format!("loss {:.6e}\n", self.loss);
        for e in &self.entries {
            s.push_str(&format!(
                "{:<width$}  n={:<3} kink={:<2} max_rel_err {:.3e}  max|grad| {:.3e}\n",
                e.name, e.checked, e.near_kink, e.max_rel_err, e.max_abs_grad
            ));
        }
        s.push_str(&format!("max relative error {:.3e}\n", self.max_rel_err));
        s
    }
}

fn random_faces(rng: &mut impl Rng, size: usize) -> Vec<BoxXYWH> {
    let s = size as f64;
    (0..2)
        .map(|_| {
            let w = rng.gen_range(6.0..s / 2.0);
            let h = w * rng.gen_range(0.8..1.25);
            let x = rng.gen_range(0.0..s - w);
            let y = rng.gen_range(0.0..(s - h).max(1.0));
            BoxXYWH::new(x, y, w, h.min(s - y)).expect("positive extents")
        })
        .collect()
}

/// Compares analytic gradients of every parameter tensor with central
/// differences on a random subset of its entries.
pub fn grad_check(cfg: &ModelConfig, gc: &GradCheckConfig) -> Result<GradCheckReport> {
    cfg.validate()?;
    let size = gc.input_size;
    cfg.check_input(size, size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(gc.seed);
    let mut params = build_model::<f64>(cfg, gc.seed)?;
    let grid = generate_anchors(size, size, cfg.levels)?;
    let images = Tensor::<f64>::from_fn([gc.batch, 3, size, size], |_| rng.gen::<f64>());
    let gts: Vec<Vec<BoxXYWH>> =
        (0..gc.batch).map(|_| if gc.zero_loss { Vec::new() } else { random_faces(&mut rng, size) }).collect();
    let loss_cfg = LossConfig::default();

    if gc.zero_loss {
        for level in 1..=cfg.levels {
            let w = params.get_mut(&format!("head{level}.cls.weight"))?;
            w.data_mut().iter_mut().for_each(|v| *v = 0.0);
            let b = params.get_mut(&format!("head{level}.cls.bias"))?;
            let bg = if level == 1 { MAXOUT_BG_CHANNELS } else { 1 };
            for (k, v) in b.data_mut().iter_mut().enumerate() {
                *v = if k < bg { 50.0 } else { -50.0 };
            }
        }
    }

    let ev = evaluate(&mut params, cfg, images.clone(), &gts, &grid, &loss_cfg, BnMode::Train, None)?;
    let targets = ev.targets;
    let (base, base_sig) = loss_value(&mut params, cfg, images.clone(), &grid, &loss_cfg, BnMode::Train, &targets)?;
    let base_loss = base.total;
    let names: Vec<String> = params.names().filter(|n| !is_running_stat(n)).map(String::from).collect();
    let mut entries = Vec::with_capacity(names.len());
    for name in names {
        let analytic = ev.grads.get(&name).cloned().unwrap_or_else(|| Tensor::zeros(params.get(&name).unwrap().shape()));
        let len = analytic.len();
        let idx: Vec<usize> = if len <= gc.samples_per_tensor {
            (0..len).collect()
        } else {
            let mut v = sample_indices(&mut rng, len, gc.samples_per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        let mut max_rel: f64 = 0.0;
        let mut checked = 0;
        let mut adjusted = 0;
        let mut max_abs: f64 = 0.0;
        for &i in &idx {
            let orig = params.get(&name)?.data()[i];
            let mut eval_at = |v: f64| -> Result<(f64, u64)> {
                params.get_mut(&name)?.data_mut()[i] = v;
                let (l, sig) = loss_value(&mut params, cfg, images.clone(), &grid, &loss_cfg, BnMode::Train, &targets)?;
                Ok((l.total, sig))
            };
            let mut h = gc.step;
            let mut numeric = None;
            for _ in 0..4 {
                let (up, sig_up) = eval_at(orig + h)?;
                let (down, sig_down) = eval_at(orig - h)?;
                numeric = match (sig_up == base_sig, sig_down == base_sig) {
                    (true, true) => Some((up - down) / (2.0 * h)),
                    (true, false) => Some((up - base_loss) / h),
                    (false, true) => Some((base_loss - down) / h),
                    (false, false) => None,
                };
                if numeric.is_some() {
                    break;
                }
                h /= 10.0;
            }
            eval_at(orig)?;
            if h != gc.step || numeric.is_none() {
                adjusted += 1;
            }
            let Some(numeric) = numeric else { continue };
            checked += 1;
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(gc.floor);
            max_rel = max_rel.max(rel);
            max_abs = max_abs.max(a.abs());
        }
        entries.push(TensorCheck { name, checked, near_kink: adjusted, max_rel_err: max_rel, max_abs_grad: max_abs });
    }
    let max_rel_err = entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport { loss: ev.loss.total, entries, max_rel_err })
}
