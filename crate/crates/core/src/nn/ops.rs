//! Elementwise and channel-bookkeeping operators, and the L2 training loss.

use super::tensor::{check_same_shape, Scalar, Tensor5};
use crate::error::{ensure, Result};

pub fn relu<T: Scalar>(x: &Tensor5<T>) -> Tensor5<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of [`relu`] given its input; the subgradient at 0 is 0.
pub fn relu_backward<T: Scalar>(x: &Tensor5<T>, grad_out: &Tensor5<T>) -> Result<Tensor5<T>> {
    check_same_shape(x, grad_out, "relu backward")?;
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor5::from_vec(x.shape(), data)
}

pub fn add<T: Scalar>(x: &Tensor5<T>, y: &Tensor5<T>) -> Result<Tensor5<T>> {
    check_same_shape(x, y, "add")?;
    let data = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| a + b)
        .collect();
    Tensor5::from_vec(x.shape(), data)
}

/// Stacks `y`'s channels after `x`'s.
pub fn concat_channels<T: Scalar>(x: &Tensor5<T>, y: &Tensor5<T>) -> Result<Tensor5<T>> {
    let (sx, sy) = (x.shape(), y.shape());
    ensure!(
        sx[0] == sy[0] && sx[2..] == sy[2..],
        Shape,
        "concat needs matching batch and spatial dims, got {sx:?} and {sy:?}"
    );
    let mut data = Vec::with_capacity(x.numel() + y.numel());
    for n in 0..sx[0] {
        data.extend_from_slice(x.sample(n));
        data.extend_from_slice(y.sample(n));
    }
    Tensor5::from_vec([sx[0], sx[1] + sy[1], sx[2], sx[3], sx[4]], data)
}

/// Splits off the first `n` channels: the inverse of [`concat_channels`].
pub fn split_channels<T: Scalar>(x: &Tensor5<T>, n: usize) -> Result<(Tensor5<T>, Tensor5<T>)> {
    let s = x.shape();
    ensure!(n <= s[1], Shape, "cannot split {} channels at {n}", s[1]);
    let per = x.spatial_len();
    let mut a = Vec::with_capacity(s[0] * n * per);
    let mut b = Vec::with_capacity(s[0] * (s[1] - n) * per);
    for i in 0..s[0] {
        let sample = x.sample(i);
        a.extend_from_slice(&sample[..n * per]);
        b.extend_from_slice(&sample[n * per..]);
    }
    Ok((
        Tensor5::from_vec([s[0], n, s[2], s[3], s[4]], a)?,
        Tensor5::from_vec([s[0], s[1] - n, s[2], s[3], s[4]], b)?,
    ))
}

/// Mean over the batch of half the squared Frobenius norm of `pred - label`:
/// `1/(2N) Σ_i ||pred_i - label_i||²`. Returns the loss and `d loss / d pred
/// = (pred - label) / N`.
pub fn l2_loss<T: Scalar>(pred: &Tensor5<T>, label: &Tensor5<T>) -> Result<(f64, Tensor5<T>)> {
    check_same_shape(pred, label, "l2 loss")?;
    let n = pred.batch();
    ensure!(n >= 1, Shape, "l2 loss needs a nonempty batch");
    let inv_n = 1.0 / n as f64;
    let mut sq = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(label.data())
        .map(|(&p, &l)| {
            let d = (p - l).f64();
            sq += d * d;
            T::of(d * inv_n)
        })
        .collect();
    Ok((0.5 * sq * inv_n, Tensor5::from_vec(pred.shape(), grad)?))
}
