//! Direct 2-D convolution (dense, grouped and depthwise share one kernel).

use std::borrow::Cow;

use super::lanes::dot;
use super::{ConvSpec, Element, Tensor};
use crate::error::{Error, Result};
use crate::par;

/// Output columns `ow` whose input column `ow*stride + k - pad` lies in `0..w`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
    let start = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    if in_len + pad <= k {
        return (0, 0);
    }
    let end = ((in_len - 1 + pad - k) / stride + 1).min(out_len);
    (start.min(end), end)
}

#[inline]
fn axpy<T: Element>(out: &mut [T], input: &[T], wv: T) {
    for (o, &i) in out.iter_mut().zip(input) {
        *o = *o + wv * i;
    }
}

/// Planes with every row split by column phase modulo the stride:
/// phase `r` of a row holds columns `r, r + s, r + 2s, ...`. Strided reads
/// of the original row become contiguous reads of one phase.
struct Phased<'a, T: Element> {
    data: Cow<'a, [T]>,
    s: usize,
    h: usize,
    wc: usize,
}

impl<'a, T: Element> Phased<'a, T> {
    fn new(x: &'a Tensor<T>, s: usize) -> Self {
        let [n, c, h, w] = x.shape();
        if s == 1 {
            return Phased { data: Cow::Borrowed(x.data()), s, h, wc: w };
        }
        let wc = w.div_ceil(s);
        let mut data = vec![T::zero(); n * c * s * h * wc];
        for (p, src) in x.data().chunks_exact(h * w).enumerate() {
            let dst = &mut data[p * s * h * wc..(p + 1) * s * h * wc];
            for y in 0..h {
                for (col, &v) in src[y * w..(y + 1) * w].iter().enumerate() {
                    dst[((col % s) * h + y) * wc + col / s] = v;
                }
            }
        }
        Phased { data: Cow::Owned(data), s, h, wc }
    }

    fn plane(&self, p: usize) -> &[T] {
        let len = self.s * self.h * self.wc;
        &self.data[p * len..(p + 1) * len]
    }
}

/// Phase and position within the phase of original column `col`.
#[inline]
fn phase_of(col: usize, s: usize) -> (usize, usize) {
    if s == 1 {
        (0, col)
    } else {
        (col % s, col / s)
    }
}

fn check<T: Element>(input: &Tensor<T>, weights: &Tensor<T>, bias: Option<&Tensor<T>>, spec: &ConvSpec) -> Result<(usize, usize)> {
    spec.validate()?;
    if input.channels() != spec.in_channels {
        return Err(Error::shape(format!(
            "conv input has {} channels, spec expects {}",
            input.channels(),
            spec.in_channels
        )));
    }
    if weights.shape() != spec.weight_shape() {
        return Err(Error::shape(format!(
            "conv weights {:?}, expected {:?}",
            weights.shape(),
            spec.weight_shape()
        )));
    }
    match (spec.has_bias, bias) {
        (true, Some(b)) if b.len() == spec.out_channels => {}
        (false, None) => {}
        _ => return Err(Error::shape("conv bias does not match spec".to_string())),
    }
    spec.output_hw(input.height(), input.width())
        .ok_or_else(|| Error::shape(format!("kernel {:?} larger than padded input", spec.kernel)))
}

/// Forward convolution. `bias` must be present exactly when `spec.has_bias`.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let (oh_n, ow_n) = check(input, weights, bias, spec)?;
    let [n_n, _, h, w] = input.shape();
    let oc_n = spec.out_channels;
    let icg = spec.in_channels / spec.groups;
    let ocg = oc_n / spec.groups;
    let (kh_n, kw_n) = spec.kernel;
    let (s, p) = (spec.stride, spec.padding);
    let pointwise = kh_n == 1 && kw_n == 1 && s == 1 && p == 0;
    let wdata = weights.data();

    let phased = Phased::new(input, s);
    let wc = phased.wc;
    let mut out = Tensor::zeros([n_n, oc_n, oh_n, ow_n]);
    par::for_each_chunk(out.data_mut(), oh_n * ow_n, |idx, plane| {
        let (n, oc) = (idx / oc_n, idx % oc_n);
        let g = oc / ocg;
        if let Some(b) = bias {
            plane.fill(b.data()[oc]);
        }
        for icl in 0..icg {
            let in_plane = phased.plane(n * spec.in_channels + g * icg + icl);
            let wbase = (oc * icg + icl) * kh_n * kw_n;
            if pointwise {
                axpy(plane, in_plane, wdata[wbase]);
                continue;
            }
            for kh in 0..kh_n {
                let (oh0, oh1) = valid_range(oh_n, h, s, kh, p);
                for kw in 0..kw_n {
                    let wv = wdata[wbase + kh * kw_n + kw];
                    let (ow0, ow1) = valid_range(ow_n, w, s, kw, p);
                    if ow0 >= ow1 {
                        continue;
                    }
                    let (r, j0) = phase_of(ow0 * s + kw - p, s);
                    for oh in oh0..oh1 {
                        let off = (r * h + oh * s + kh - p) * wc + j0;
                        axpy(&mut plane[oh * ow_n + ow0..oh * ow_n + ow1], &in_plane[off..], wv);
                    }
                }
            }
        }
    });
    out.debug_check_finite("conv2d");
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T: Element> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

/// Vector-Jacobian product of [`conv2d`] with respect to input, weights and bias.
pub fn conv2d_vjp<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let dummy_bias;
    let bias = if spec.has_bias {
        dummy_bias = Tensor::zeros([spec.out_channels, 1, 1, 1]);
        Some(&dummy_bias)
    } else {
        None
    };
    let (oh_n, ow_n) = check(input, weights, bias, spec)?;
    let [n_n, ic_n, h, w] = input.shape();
    let oc_n = spec.out_channels;
    if upstream.shape() != [n_n, oc_n, oh_n, ow_n] {
        return Err(Error::shape(format!(
            "upstream grad {:?}, forward output is {:?}",
            upstream.shape(),
            [n_n, oc_n, oh_n, ow_n]
        )));
    }
    let icg = spec.in_channels / spec.groups;
    let ocg = oc_n / spec.groups;
    let (kh_n, kw_n) = spec.kernel;
    let (s, p) = (spec.stride, spec.padding);
    let wdata = weights.data();
    let ksize = kh_n * kw_n;

    let pointwise = kh_n == 1 && kw_n == 1 && s == 1 && p == 0;
    let wc = w.div_ceil(s);
    let mut grad_input = Tensor::zeros(input.shape());
    par::for_each_chunk(grad_input.data_mut(), h * w, |idx, gin| {
        let (n, ic) = (idx / ic_n, idx % ic_n);
        let g = ic / icg;
        let icl = ic % icg;
        let mut local = Vec::new();
        let gph: &mut [T] = if s == 1 {
            gin
        } else {
            local.resize(s * h * wc, T::zero());
            &mut local
        };
        for oc in g * ocg..(g + 1) * ocg {
            let gout = upstream.plane(n, oc);
            let wbase = (oc * icg + icl) * ksize;
            if pointwise {
                axpy(gph, gout, wdata[wbase]);
                continue;
            }
            for kh in 0..kh_n {
                let (oh0, oh1) = valid_range(oh_n, h, s, kh, p);
                for kw in 0..kw_n {
                    let wv = wdata[wbase + kh * kw_n + kw];
                    let (ow0, ow1) = valid_range(ow_n, w, s, kw, p);
                    if ow0 >= ow1 {
                        continue;
                    }
                    let (r, j0) = phase_of(ow0 * s + kw - p, s);
                    for oh in oh0..oh1 {
                        let off = (r * h + oh * s + kh - p) * wc + j0;
                        axpy(&mut gph[off..off + ow1 - ow0], &gout[oh * ow_n + ow0..oh * ow_n + ow1], wv);
                    }
                }
            }
        }
        if s > 1 {
            for y in 0..h {
                for (col, v) in gin[y * w..(y + 1) * w].iter_mut().enumerate() {
                    let (r, j) = phase_of(col, s);
                    *v = local[(r * h + y) * wc + j];
                }
            }
        }
    });

    let phased = Phased::new(input, s);
    let mut grad_w = Tensor::zeros(weights.shape());
    par::for_each_chunk(grad_w.data_mut(), icg * ksize, |oc, gw| {
        let g = oc / ocg;
        for icl in 0..icg {
            let ic = g * icg + icl;
            if pointwise {
                gw[icl] = (0..n_n).map(|n| dot(upstream.plane(n, oc), phased.plane(n * ic_n + ic))).fold(T::zero(), |a, b| a + b);
                continue;
            }
            for kh in 0..kh_n {
                let (oh0, oh1) = valid_range(oh_n, h, s, kh, p);
                for kw in 0..kw_n {
                    let (ow0, ow1) = valid_range(ow_n, w, s, kw, p);
                    let mut acc = T::zero();
                    if ow0 < ow1 {
                        let (r, j0) = phase_of(ow0 * s + kw - p, s);
                        for n in 0..n_n {
                            let gout = upstream.plane(n, oc);
                            let in_plane = phased.plane(n * ic_n + ic);
                            for oh in oh0..oh1 {
                                let off = (r * h + oh * s + kh - p) * wc + j0;
                                acc = acc + dot(&gout[oh * ow_n + ow0..oh * ow_n + ow1], &in_plane[off..]);
                            }
                        }
                    }
                    gw[(icl * kh_n + kh) * kw_n + kw] = acc;
                }
            }
        }
    });

    let grad_b = spec.has_bias.then(|| {
        let sums = (0..oc_n)
            .map(|oc| (0..n_n).map(|n| upstream.plane(n, oc).iter().copied().sum::<T>()).sum())
            .collect();
        Tensor::vector(sums)
    });

    Ok(ConvGrads { input: grad_input, weights: grad_w, bias: grad_b })
}
