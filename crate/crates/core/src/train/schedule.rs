use crate::error::{Error, Result};

/// Step learning-rate schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub total_iters: usize,
    /// (iteration, lr) pairs; the rate switches at the start of that iteration.
    pub drops: Vec<(usize, f64)>,
    pub batch_size: usize,
}

impl Schedule {
    /// The full-scale recipe: 240k iterations at batch 16.
    pub fn full() -> Self {
        Schedule { base_lr: 1e-3, total_iters: 240_000, drops: vec![(120_000, 1e-4), (180_000, 1e-5)], batch_size: 16 }
    }

    /// Same shape scaled to `total_iters`: tenfold drops at 50% and 75%.
    pub fn scaled(total_iters: usize, base_lr: f64, batch_size: usize) -> Self {
        Schedule {
            base_lr,
            total_iters,
            drops: vec![(total_iters / 2, base_lr / 10.0), (total_iters * 3 / 4, base_lr / 100.0)],
            batch_size,
        }
    }

    pub fn constant(total_iters: usize, lr: f64, batch_size: usize) -> Self {
        Schedule { base_lr: lr, total_iters, drops: Vec::new(), batch_size }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.base_lr > 0.0) {
            return Err(Error::Invalid("schedule needs a positive batch size and learning rate".into()));
        }
        let mut prev = (0usize, self.base_lr);
        for (i, &(it, lr)) in self.drops.iter().enumerate() {
            if (i > 0 && it <= prev.0) || lr >= prev.1 {
                return Err(Error::Invalid(format!("drop {i} ({it}, {lr}) is not after and below the previous rate")));
            }
            prev = (it, lr);
        }
        Ok(())
    }

    /// Rate for a 1-based iteration.
    pub fn lr_at(&self, iter: usize) -> f64 {
        self.drops.iter().rev().find(|&&(at, _)| iter > at).map_or(self.base_lr, |&(_, lr)| lr)
    }
}
