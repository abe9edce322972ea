//! Bilinear x2 upsampling with half-pixel centers (align-corners off).

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Source taps `(i0, i1, frac)` for each output index along one axis.
fn taps(in_len: usize) -> Vec<(usize, usize, f64)> {
    (0..in_len * 2)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn bilinear_upsample_x2<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    let [n_n, c_n, h, w] = input.shape();
    let ty = taps(h);
    let tx = taps(w);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor::zeros([n_n, c_n, oh, ow]);
    let mut base = 0;
    for n in 0..n_n {
        for c in 0..c_n {
            let src = input.plane(n, c);
            let dst = &mut out.data_mut()[base..base + oh * ow];
            for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
                let fy = T::lit(fy);
                for (x, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let fx = T::lit(fx);
                    let top = src[y0 * w + x0] * (T::one() - fx) + src[y0 * w + x1] * fx;
                    let bot = src[y1 * w + x0] * (T::one() - fx) + src[y1 * w + x1] * fx;
                    dst[y * ow + x] = top * (T::one() - fy) + bot * fy;
                }
            }
            base += oh * ow;
        }
    }
    out
}

pub fn bilinear_upsample_x2_vjp<T: Element>(input_shape: [usize; 4], upstream: &Tensor<T>) -> Result<Tensor<T>> {
    let [n_n, c_n, h, w] = input_shape;
    let (oh, ow) = (2 * h, 2 * w);
    if upstream.shape() != [n_n, c_n, oh, ow] {
        return Err(Error::shape(format!(
            "upsample vjp: upstream {:?} for input {:?}",
            upstream.shape(),
            input_shape
        )));
    }
    let ty = taps(h);
    let tx = taps(w);
    let mut grad = Tensor::zeros(input_shape);
    let mut base = 0;
    for n in 0..n_n {
        for c in 0..c_n {
            let g = upstream.plane(n, c);
            let dst = &mut grad.data_mut()[base..base + h * w];
            for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
                let fy = T::lit(fy);
                for (x, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let fx = T::lit(fx);
                    let v = g[y * ow + x];
                    let top = v * (T::one() - fy);
                    let bot = v * fy;
                    dst[y0 * w + x0] = dst[y0 * w + x0] + top * (T::one() - fx);
                    dst[y0 * w + x1] = dst[y0 * w + x1] + top * fx;
                    dst[y1 * w + x0] = dst[y1 * w + x0] + bot * (T::one() - fx);
                    dst[y1 * w + x1] = dst[y1 * w + x1] + bot * fx;
                }
            }
            base += h * w;
        }
    }
    Ok(grad)
}
