//! Reductions with eight independent partial sums. The fixed combination
//! order keeps results reproducible while letting the loops vectorize.

use super::Element;

const L: usize = 8;

#[inline]
fn combine<T: Element>(acc: [T; L], tail: T) -> T {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Sum of `f(a[i], b[i])` over the common length.
#[inline]
pub(crate) fn fold2<T: Element>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); L];
    let (ca, cb) = (a.chunks_exact(L), b.chunks_exact(L));
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail = tail + f(x, y);
    }
    for (x, y) in ca.zip(cb) {
        for k in 0..L {
            acc[k] = acc[k] + f(x[k], y[k]);
        }
    }
    combine(acc, tail)
}

#[inline]
pub(crate) fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    fold2(a, b, |x, y| x * y)
}

#[inline]
pub(crate) fn sum<T: Element>(a: &[T]) -> T {
    fold2(a, a, |x, _| x)
}

/// Sum of squared deviations from `mu`.
#[inline]
pub(crate) fn sq_dev<T: Element>(a: &[T], mu: T) -> T {
    fold2(a, a, |x, _| (x - mu) * (x - mu))
}
