use std::fmt;
use std::str::FromStr;

use super::{lanes, Element, Tensor};
use crate::error::{Error, Result};

/// Negative slope of leaky ReLU, and the initial PReLU slope.
pub const NEGATIVE_SLOPE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    LeakyRelu,
    Prelu,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu => "lrelu",
            Activation::Prelu => "prelu",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "lrelu" | "leaky_relu" => Ok(Activation::LeakyRelu),
            "prelu" => Ok(Activation::Prelu),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

impl Activation {
    pub fn learnable(self) -> bool {
        matches!(self, Activation::Prelu)
    }
}

fn slopes<T: Element>(kind: Activation, channels: usize, params: Option<&Tensor<T>>) -> Result<Vec<T>> {
    match kind {
        Activation::Relu => Ok(vec![T::zero(); channels]),
        Activation::LeakyRelu => Ok(vec![T::lit(NEGATIVE_SLOPE); channels]),
        Activation::Prelu => {
            let p = params.ok_or_else(|| Error::shape("prelu needs slope parameters".to_string()))?;
            if p.len() != channels {
                return Err(Error::shape(format!("prelu has {} slopes for {channels} channels", p.len())));
            }
            Ok(p.data().to_vec())
        }
    }
}

/// `x` for `x >= 0`, `slope * x` otherwise (slope 0 for ReLU).
pub fn activation<T: Element>(input: &Tensor<T>, kind: Activation, slope_params: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let [n_n, c_n, h, w] = input.shape();
    let a = slopes(kind, c_n, slope_params)?;
    let hw = h * w;
    let mut out = input.clone();
    for n in 0..n_n {
        for (c, &s) in a.iter().enumerate() {
            let base = (n * c_n + c) * hw;
            for v in &mut out.data_mut()[base..base + hw] {
                *v = if *v < T::zero() { *v * s } else { *v };
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ActGrads<T: Element> {
    pub input: Tensor<T>,
    /// Gradient w.r.t. the per-channel PReLU slopes.
    pub slopes: Option<Tensor<T>>,
}

pub fn activation_vjp<T: Element>(
    input: &Tensor<T>,
    kind: Activation,
    slope_params: Option<&Tensor<T>>,
    upstream: &Tensor<T>,
) -> Result<ActGrads<T>> {
    if upstream.shape() != input.shape() {
        return Err(Error::shape(format!("activation vjp {:?} vs {:?}", upstream.shape(), input.shape())));
    }
    let [n_n, c_n, h, w] = input.shape();
    let a = slopes(kind, c_n, slope_params)?;
    let hw = h * w;
    let mut dx = upstream.clone();
    let mut ds = vec![T::zero(); c_n];
    for n in 0..n_n {
        for c in 0..c_n {
            let base = (n * c_n + c) * hw;
            let x = input.plane(n, c);
            let d = &mut dx.data_mut()[base..base + hw];
            if kind.learnable() {
                ds[c] = ds[c] + lanes::fold2(d, x, |g, xv| if xv < T::zero() { g * xv } else { T::zero() });
            }
            for (g, &xv) in d.iter_mut().zip(x) {
                *g = if xv < T::zero() { *g * a[c] } else { *g };
            }
        }
    }
    Ok(ActGrads { input: dx, slopes: kind.learnable().then(|| Tensor::vector(ds)) })
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut out = a.clone();
    out.add_assign(b)?;
    Ok(out)
}

/// Result of [`maxout_pairless`]: the two output channels plus, per pixel,
/// which background channel won (needed by the vjp).
#[derive(Debug, Clone)]
pub struct Maxout<T: Element> {
    pub output: Tensor<T>,
    pub argmax: Vec<u32>,
}

/// Collapses the first `bg_channels` channels to their maximum and passes the
/// last channel through. Ties go to the lowest channel index.
pub fn maxout_pairless<T: Element>(input: &Tensor<T>, bg_channels: usize) -> Result<Maxout<T>> {
    let [n_n, c_n, h, w] = input.shape();
    if bg_channels == 0 || c_n != bg_channels + 1 {
        return Err(Error::shape(format!("maxout needs {} channels, got {c_n}", bg_channels + 1)));
    }
    let hw = h * w;
    let mut out = Tensor::zeros([n_n, 2, h, w]);
    let mut argmax = vec![0u32; n_n * hw];
    for n in 0..n_n {
        for i in 0..hw {
            let mut best = input.plane(n, 0)[i];
            let mut arg = 0;
            for c in 1..bg_channels {
                let v = input.plane(n, c)[i];
                if v > best {
                    best = v;
                    arg = c;
                }
            }
            argmax[n * hw + i] = arg as u32;
            out.data_mut()[n * 2 * hw + i] = best;
            out.data_mut()[(n * 2 + 1) * hw + i] = input.plane(n, bg_channels)[i];
        }
    }
    Ok(Maxout { output: out, argmax })
}

pub fn maxout_vjp<T: Element>(input_shape: [usize; 4], argmax: &[u32], upstream: &Tensor<T>) -> Result<Tensor<T>> {
    let [n_n, c_n, h, w] = input_shape;
    let hw = h * w;
    if upstream.shape() != [n_n, 2, h, w] || argmax.len() != n_n * hw {
        return Err(Error::shape(format!("maxout vjp upstream {:?}", upstream.shape())));
    }
    let mut g = Tensor::zeros(input_shape);
    for n in 0..n_n {
        for i in 0..hw {
            let c = argmax[n * hw + i] as usize;
            g.data_mut()[(n * c_n + c) * hw + i] = upstream.plane(n, 0)[i];
            g.data_mut()[(n * c_n + c_n - 1) * hw + i] = upstream.plane(n, 1)[i];
        }
    }
    Ok(g)
}
