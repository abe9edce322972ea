//! Batch normalization over (N, H, W) per channel.

use super::{lanes, Element, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T: Element> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
    pub mode: BnMode,
}

impl<T: Element> BatchNormState<T> {
    pub fn new(channels: usize, mode: BnMode) -> Self {
        BatchNormState {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::lit(DEFAULT_MOMENTUM),
            eps: T::lit(DEFAULT_EPS),
            mode,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        if self.beta.len() != c || self.running_mean.len() != c || self.running_var.len() != c {
            return Err(Error::shape("batch norm vectors differ in length".to_string()));
        }
        Ok(())
    }
}

/// Values saved by the forward pass for [`batch_norm_vjp`].
#[derive(Debug, Clone)]
pub struct BnCache<T: Element> {
    pub mode: BnMode,
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BnGrads<T: Element> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Normalizes `input`. In train mode the batch statistics are used and the
/// running statistics in `state` are updated with `state.momentum`
/// (unbiased variance, as is conventional).
pub fn batch_norm<T: Element>(input: &Tensor<T>, state: &mut BatchNormState<T>) -> Result<(Tensor<T>, BnCache<T>)> {
    state.validate()?;
    let [n_n, c_n, h, w] = input.shape();
    if c_n != state.channels() {
        return Err(Error::shape(format!(
            "batch norm over {c_n} channels with {}-channel state",
            state.channels()
        )));
    }
    let m = n_n * h * w;
    if m == 0 {
        return Err(Error::shape("batch norm over an empty batch".to_string()));
    }
    let mf = T::from_usize(m).unwrap();
    let mut mean = vec![T::zero(); c_n];
    let mut var = vec![T::zero(); c_n];
    match state.mode {
        BnMode::Train => {
            for c in 0..c_n {
                let s = (0..n_n).fold(T::zero(), |acc, n| acc + lanes::sum(input.plane(n, c)));
                let mu = s / mf;
                let v = (0..n_n).fold(T::zero(), |acc, n| acc + lanes::sq_dev(input.plane(n, c), mu));
                mean[c] = mu;
                var[c] = v / mf;
                let unbiased = if m > 1 { v / T::from_usize(m - 1).unwrap() } else { var[c] };
                let mom = state.momentum;
                state.running_mean[c] = (T::one() - mom) * state.running_mean[c] + mom * mu;
                state.running_var[c] = (T::one() - mom) * state.running_var[c] + mom * unbiased;
            }
        }
        BnMode::Infer => {
            mean.copy_from_slice(&state.running_mean);
            var.copy_from_slice(&state.running_var);
        }
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + state.eps).sqrt()).collect();
    let mut xhat = Tensor::zeros(input.shape());
    let mut out = Tensor::zeros(input.shape());
    let hw = h * w;
    for n in 0..n_n {
        for c in 0..c_n {
            let base = (n * c_n + c) * hw;
            let src = input.plane(n, c);
            let (g, b, mu, is) = (state.gamma[c], state.beta[c], mean[c], inv_std[c]);
            let xh = &mut xhat.data_mut()[base..base + hw];
            for (d, &x) in xh.iter_mut().zip(src) {
                *d = (x - mu) * is;
            }
            let xh = &xhat.data()[base..base + hw];
            for (o, &v) in out.data_mut()[base..base + hw].iter_mut().zip(xh) {
                *o = g * v + b;
            }
        }
    }
    out.debug_check_finite("batch_norm");
    Ok((out, BnCache { mode: state.mode, xhat, inv_std }))
}

pub fn batch_norm_vjp<T: Element>(cache: &BnCache<T>, gamma: &[T], upstream: &Tensor<T>) -> Result<BnGrads<T>> {
    let [n_n, c_n, h, w] = cache.xhat.shape();
    if upstream.shape() != cache.xhat.shape() || gamma.len() != c_n {
        return Err(Error::shape(format!(
            "batch norm vjp: upstream {:?}, forward {:?}",
            upstream.shape(),
            cache.xhat.shape()
        )));
    }
    let hw = h * w;
    let mf = T::from_usize(n_n * hw).unwrap();
    let mut dgamma = vec![T::zero(); c_n];
    let mut dbeta = vec![T::zero(); c_n];
    for c in 0..c_n {
        for n in 0..n_n {
            dgamma[c] = dgamma[c] + lanes::dot(upstream.plane(n, c), cache.xhat.plane(n, c));
            dbeta[c] = dbeta[c] + lanes::sum(upstream.plane(n, c));
        }
    }
    let mut dx = Tensor::zeros(upstream.shape());
    for n in 0..n_n {
        for c in 0..c_n {
            let scale = gamma[c] * cache.inv_std[c];
            let base = (n * c_n + c) * hw;
            let dy = upstream.plane(n, c);
            let xh = cache.xhat.plane(n, c);
            let dst = &mut dx.data_mut()[base..base + hw];
            match cache.mode {
                BnMode::Train => {
                    let mean_dy = dbeta[c] / mf;
                    let mean_dyx = dgamma[c] / mf;
                    for ((d, &g), &x) in dst.iter_mut().zip(dy).zip(xh) {
                        *d = scale * (g - mean_dy - x * mean_dyx);
                    }
                }
                BnMode::Infer => {
                    for (d, &g) in dst.iter_mut().zip(dy) {
                        *d = scale * g;
                    }
                }
            }
        }
    }
    Ok(BnGrads { input: dx, gamma: Tensor::vector(dgamma), beta: Tensor::vector(dbeta) })
}
