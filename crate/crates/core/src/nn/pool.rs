//! 2³ pooling with stride 2.

use super::tensor::{Scalar, Tensor5};
use crate::error::{ensure, Result};

fn halved(shape: [usize; 5]) -> Result<[usize; 5]> {
    ensure!(
        shape[2..].iter().all(|&d| d % 2 == 0),
        Shape,
        "pooling needs even spatial dims, got {:?}",
        &shape[2..]
    );
    Ok([shape[0], shape[1], shape[2] / 2, shape[3] / 2, shape[4] / 2])
}

/// Flat input offsets of the eight voxels in each 2³ block, scan order
/// (d, h, w) with w fastest.
#[inline]
fn block(base: usize, h: usize, w: usize) -> [usize; 8] {
    let (dh, dd) = (w, h * w);
    [
        base,
        base + 1,
        base + dh,
        base + dh + 1,
        base + dd,
        base + dd + 1,
        base + dd + dh,
        base + dd + dh + 1,
    ]
}

fn for_each_block(shape: [usize; 5], mut f: impl FnMut(usize, [usize; 8])) {
    let [n, c, d, h, w] = shape;
    let mut o = 0;
    for nc in 0..n * c {
        let plane = nc * d * h * w;
        for i in 0..d / 2 {
            for j in 0..h / 2 {
                for l in 0..w / 2 {
                    f(o, block(plane + ((2 * i) * h + 2 * j) * w + 2 * l, h, w));
                    o += 1;
                }
            }
        }
    }
}

pub fn avg_pool3d<T: Scalar>(x: &Tensor5<T>) -> Result<Tensor5<T>> {
    let os = halved(x.shape())?;
    let mut out = Tensor5::zeros(os);
    let xd = x.data();
    let eighth = T::of(0.125);
    let od = out.data_mut();
    for_each_block(x.shape(), |o, idx| {
        let s = idx.iter().map(|&i| xd[i]).sum::<T>();
        od[o] = s * eighth;
    });
    Ok(out)
}

pub fn avg_pool3d_backward<T: Scalar>(
    input_shape: [usize; 5],
    grad_out: &Tensor5<T>,
) -> Result<Tensor5<T>> {
    let os = halved(input_shape)?;
    ensure!(
        grad_out.shape() == os,
        Shape,
        "avg-pool gradient shape mismatch"
    );
    let mut gx = Tensor5::zeros(input_shape);
    let gd = grad_out.data();
    let eighth = T::of(0.125);
    let gxd = gx.data_mut();
    for_each_block(input_shape, |o, idx| {
        for i in idx {
            gxd[i] = gd[o] * eighth;
        }
    });
    Ok(gx)
}

/// Max pooling. Also returns, per output voxel, the flat input index of the
/// first maximum in scan order, which receives the whole gradient.
pub fn max_pool3d<T: Scalar>(x: &Tensor5<T>) -> Result<(Tensor5<T>, Vec<usize>)> {
    let os = halved(x.shape())?;
    let mut out = Tensor5::zeros(os);
    let mut argmax = vec![0usize; out.numel()];
    let xd = x.data();
    let od = out.data_mut();
    for_each_block(x.shape(), |o, idx| {
        let mut best = idx[0];
        for &i in &idx[1..] {
            if xd[i] > xd[best] {
                best = i;
            }
        }
        od[o] = xd[best];
        argmax[o] = best;
    });
    Ok((out, argmax))
}

pub fn max_pool3d_backward<T: Scalar>(
    input_shape: [usize; 5],
    argmax: &[usize],
    grad_out: &Tensor5<T>,
) -> Result<Tensor5<T>> {
    ensure!(
        argmax.len() == grad_out.numel(),
        Shape,
        "max-pool gradient shape mismatch"
    );
    let mut gx = Tensor5::zeros(input_shape);
    let gxd = gx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        gxd[i] += g;
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_of_0_to_7() {
        let x = Tensor5::from_vec([1, 1, 2, 2, 2], (0..8).map(|i| i as f64).collect()).unwrap();
        assert_eq!(avg_pool3d(&x).unwrap().data(), &[3.5]);
        let (m, arg) = max_pool3d(&x).unwrap();
        assert_eq!(m.data(), &[7.0]);
        assert_eq!(arg, vec![7]);
    }

    #[test]
    fn constant_input() {
        let x = Tensor5::full([2, 3, 4, 6, 8], -1.25f64);
        let a = avg_pool3d(&x).unwrap();
        assert_eq!(a.shape(), [2, 3, 2, 3, 4]);
        assert!(a.data().iter().all(|&v| v == -1.25));
        let (m, arg) = max_pool3d(&x).unwrap();
        assert!(m.data().iter().all(|&v| v == -1.25));
        // ties go to the first voxel of each block
        assert_eq!(arg[0], 0);
    }

    #[test]
    fn odd_dims_rejected() {
        let x = Tensor5::<f64>::zeros([1, 1, 3, 4, 4]);
        assert!(avg_pool3d(&x).is_err());
        assert!(max_pool3d(&x).is_err());
    }

    #[test]
    fn max_gradient_routes_to_argmax() {
        let x = Tensor5::from_vec(
            [1, 1, 2, 2, 2],
            vec![1.0, 5.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        )
        .unwrap();
        let (_, arg) = max_pool3d(&x).unwrap();
        let g = Tensor5::full([1, 1, 1, 1, 1], 2.0);
        let gx = max_pool3d_backward(x.shape(), &arg, &g).unwrap();
        assert_eq!(gx.data(), &[0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
