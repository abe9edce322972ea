use std::time::Instant;

use crate::error::Result;
use crate::model::{forward, ModelConfig, ModelParams};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub size: usize,
    pub trials: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
}

impl BenchRow {
    pub fn format(&self) -> String {
        format!("{}x{} trials {} mean {:.3} ms std {:.3} ms", self.size, self.size, self.trials, self.mean_ms, self.std_ms)
    }
}

/// Wall-clock forward-only latency on square inputs, one warm-up run per
/// size. Measures this machine only.
pub fn bench<T: Element>(params: &ModelParams<T>, cfg: &ModelConfig, sizes: &[usize], trials: usize) -> Result<Vec<BenchRow>> {
    let trials = trials.max(1);
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        cfg.check_input(size, size)?;
        let image = Tensor::full([1, 3, size, size], T::lit(0.5));
        forward(params, cfg, &image)?;
        let mut times = Vec::with_capacity(trials);
        for _ in 0..trials {
            let t = Instant::now();
            std::hint::black_box(forward(params, cfg, &image)?);
            times.push(t.elapsed().as_secs_f64() * 1e3);
        }
        let mean = times.iter().sum::<f64>() / trials as f64;
        let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / trials as f64;
        rows.push(BenchRow { size, trials, mean_ms: mean, std_ms: var.sqrt() });
    }
    Ok(rows)
}
