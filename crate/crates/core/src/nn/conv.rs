//! 3D convolution (cross-correlation, no kernel flip) and the stride-2
//! transposed convolution used for upsampling.
//!
//! Weights are laid out `(out_ch, in_ch, k, k, k)` for both operators.

use rayon::prelude::*;

use super::param::{join_name, HasParams, Param};
use super::tensor::{dot, gemm, Scalar, Strides, Tensor5};
use crate::error::{ensure, Error, Result};
use crate::seed::Rng;

/// Kernel geometry shared by forward and backward passes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    /// Kernel 3, stride 1, padding 1: spatial dims are preserved.
    pub fn same3(in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel: 3,
            stride: 1,
            padding: 1,
        }
    }

    pub fn pointwise(in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel: 1,
            stride: 1,
            padding: 0,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel.pow(3)
    }

    fn out_dim(&self, n: usize) -> Result<usize> {
        let span = n + 2 * self.padding;
        ensure!(
            span >= self.kernel && self.stride >= 1,
            Shape,
            "input extent {n} too small for kernel {} with padding {}",
            self.kernel,
            self.padding
        );
        Ok((span - self.kernel) / self.stride + 1)
    }

    fn output_shape(&self, x: [usize; 5]) -> Result<[usize; 5]> {
        ensure!(
            x[1] == self.in_ch,
            Shape,
            "conv expects {} input channels, got {}",
            self.in_ch,
            x[1]
        );
        Ok([
            x[0],
            self.out_ch,
            self.out_dim(x[2])?,
            self.out_dim(x[3])?,
            self.out_dim(x[4])?,
        ])
    }

    /// Output positions `o` along one axis whose tap `t` lands inside an input
    /// of extent `n`: `0 <= o * stride + t - padding < n`.
    #[inline]
    fn valid_range(&self, t: usize, n: usize, out: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.padding);
        let lo = if p > t { (p - t).div_ceil(s) } else { 0 };
        let hi = if n + p > t {
            ((n + p - t - 1) / s + 1).min(out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

/// Upper bound on im2col buffer elements; larger outputs are processed in
/// depth slabs.
const COL_BUDGET: usize = 1 << 22;

/// Output depth planes per im2col slab.
fn slab_depth(g: &ConvGeometry, plane: usize, out_depth: usize) -> usize {
    let rows = g.in_ch * g.kernel.pow(3);
    (COL_BUDGET / (rows * plane).max(1)).clamp(1, out_depth.max(1))
}

/// Fills `col` (rows `(ci, kd, kh, kw)`, columns = output positions of depth
/// planes `od0..od1`) from one input sample.
fn im2col<T: Scalar>(
    xs: &[T],
    in_dims: [usize; 3],
    out_dims: [usize; 3],
    g: &ConvGeometry,
    od0: usize,
    od1: usize,
    col: &mut [T],
) {
    let [d, h, w] = in_dims;
    let [_, oh_n, ow_n] = out_dims;
    let k = g.kernel;
    let (s, p) = (g.stride, g.padding);
    let cols = (od1 - od0) * oh_n * ow_n;
    let mut r = 0;
    for ci in 0..g.in_ch {
        let xc = &xs[ci * d * h * w..][..d * h * w];
        for kd in 0..k {
            for kh in 0..k {
                for kw in 0..k {
                    let row = &mut col[r * cols..][..cols];
                    let (lo, hi) = g.valid_range(kw, w, ow_n);
                    for od in od0..od1 {
                        let id = (od * s + kd) as isize - p as isize;
                        for oh in 0..oh_n {
                            let dst = &mut row[((od - od0) * oh_n + oh) * ow_n..][..ow_n];
                            let ih = (oh * s + kh) as isize - p as isize;
                            if id < 0 || id >= d as isize || ih < 0 || ih >= h as isize {
                                dst.fill(T::zero());
                                continue;
                            }
                            let src = &xc[(id as usize * h + ih as usize) * w..][..w];
                            dst[..lo].fill(T::zero());
                            dst[hi..].fill(T::zero());
                            if s == 1 {
                                let start = lo + kw - p;
                                dst[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                            } else {
                                for ow in lo..hi {
                                    dst[ow] = src[ow * s + kw - p];
                                }
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
    }
}

/// Scatter-adds `col` back onto one input-gradient sample; the adjoint of
/// [`im2col`].
fn col2im<T: Scalar>(
    col: &[T],
    in_dims: [usize; 3],
    out_dims: [usize; 3],
    g: &ConvGeometry,
    od0: usize,
    od1: usize,
    gx: &mut [T],
) {
    let [d, h, w] = in_dims;
    let [_, oh_n, ow_n] = out_dims;
    let k = g.kernel;
    let (s, p) = (g.stride, g.padding);
    let cols = (od1 - od0) * oh_n * ow_n;
    let mut r = 0;
    for ci in 0..g.in_ch {
        let gc = &mut gx[ci * d * h * w..][..d * h * w];
        for kd in 0..k {
            for kh in 0..k {
                for kw in 0..k {
                    let row = &col[r * cols..][..cols];
                    let (lo, hi) = g.valid_range(kw, w, ow_n);
                    for od in od0..od1 {
                        let id = (od * s + kd) as isize - p as isize;
                        if id < 0 || id >= d as isize {
                            continue;
                        }
                        for oh in 0..oh_n {
                            let ih = (oh * s + kh) as isize - p as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let src = &row[((od - od0) * oh_n + oh) * ow_n..][..ow_n];
                            let dst = &mut gc[(id as usize * h + ih as usize) * w..][..w];
                            if s == 1 {
                                let start = lo + kw - p;
                                for (a, &b) in
                                    dst[start..start + hi - lo].iter_mut().zip(&src[lo..hi])
                                {
                                    *a += b;
                                }
                            } else {
                                for ow in lo..hi {
                                    dst[ow * s + kw - p] += src[ow];
                                }
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
    }
}

fn check_weights<T>(weight: &[T], bias: Option<&[T]>, g: &ConvGeometry) -> Result<()> {
    ensure!(
        weight.len() == g.weight_len() && bias.is_none_or(|b| b.len() == g.out_ch),
        Shape,
        "conv weight/bias sizes do not match geometry {g:?}"
    );
    Ok(())
}

/// Cross-correlation via im2col and a GEMM per depth slab.
pub fn conv3d<T: Scalar>(
    x: &Tensor5<T>,
    weight: &[T],
    bias: &[T],
    g: ConvGeometry,
) -> Result<Tensor5<T>> {
    let os = g.output_shape(x.shape())?;
    check_weights(weight, Some(bias), &g)?;
    let in_dims = x.spatial();
    let out_dims = [os[2], os[3], os[4]];
    let plane = os[3] * os[4];
    let ovol = os[2] * plane;
    let rows = g.in_ch * g.kernel.pow(3);
    let slab = slab_depth(&g, plane, os[2]);
    let mut out = Tensor5::zeros(os);
    if ovol == 0 {
        return Ok(out);
    }
    let in_sample = x.channels() * x.spatial_len();
    let out_sample = g.out_ch * ovol;
    out.data_mut()
        .par_chunks_mut(out_sample)
        .zip(x.data().par_chunks(in_sample.max(1)))
        .for_each(|(o, xs)| {
            for (co, oc) in o.chunks_mut(ovol).enumerate() {
                oc.fill(bias[co]);
            }
            let mut col = vec![T::zero(); rows * slab * plane];
            let mut od0 = 0;
            while od0 < os[2] {
                let od1 = (od0 + slab).min(os[2]);
                let cols = (od1 - od0) * plane;
                im2col(xs, in_dims, out_dims, &g, od0, od1, &mut col);
                gemm(
                    g.out_ch,
                    rows,
                    cols,
                    weight,
                    Strides(rows, 1),
                    &col,
                    Strides(cols, 1),
                    T::one(),
                    &mut o[od0 * plane..],
                    Strides(ovol, 1),
                );
                od0 = od1;
            }
        });
    Ok(out)
}

/// Gradients of [`conv3d`]: `(d input, d weight, d bias)`.
pub fn conv3d_backward<T: Scalar>(
    x: &Tensor5<T>,
    weight: &[T],
    g: ConvGeometry,
    grad_out: &Tensor5<T>,
) -> Result<(Tensor5<T>, Vec<T>, Vec<T>)> {
    let os = g.output_shape(x.shape())?;
    check_weights(weight, None, &g)?;
    ensure!(
        grad_out.shape() == os,
        Shape,
        "conv gradient shape {:?} does not match output {os:?}",
        grad_out.shape()
    );
    let in_dims = x.spatial();
    let out_dims = [os[2], os[3], os[4]];
    let plane = os[3] * os[4];
    let ovol = os[2] * plane;
    let rows = g.in_ch * g.kernel.pow(3);
    let slab = slab_depth(&g, plane, os[2]);
    let in_sample = x.channels() * x.spatial_len();
    let out_sample = g.out_ch * ovol;

    let mut gx = Tensor5::zeros(x.shape());
    if ovol == 0 || in_sample == 0 {
        return Ok((
            gx,
            vec![T::zero(); g.weight_len()],
            vec![T::zero(); g.out_ch],
        ));
    }
    // per-sample weight gradients, reduced in sample order afterwards
    let partial: Vec<Vec<T>> = gx
        .data_mut()
        .par_chunks_mut(in_sample)
        .zip(x.data().par_chunks(in_sample))
        .zip(grad_out.data().par_chunks(out_sample))
        .map(|((gxs, xs), gs)| {
            let mut gw = vec![T::zero(); g.weight_len()];
            let mut col = vec![T::zero(); rows * slab * plane];
            let mut od0 = 0;
            while od0 < os[2] {
                let od1 = (od0 + slab).min(os[2]);
                let cols = (od1 - od0) * plane;
                let gslab = &gs[od0 * plane..];
                im2col(xs, in_dims, out_dims, &g, od0, od1, &mut col);
                // dW += G · colᵀ
                gemm(
                    g.out_ch,
                    cols,
                    rows,
                    gslab,
                    Strides(ovol, 1),
                    &col,
                    Strides(1, cols),
                    T::one(),
                    &mut gw,
                    Strides(rows, 1),
                );
                // dcol = Wᵀ · G
                gemm(
                    rows,
                    g.out_ch,
                    cols,
                    weight,
                    Strides(1, rows),
                    gslab,
                    Strides(ovol, 1),
                    T::zero(),
                    &mut col,
                    Strides(cols, 1),
                );
                col2im(&col, in_dims, out_dims, &g, od0, od1, gxs);
                od0 = od1;
            }
            gw
        })
        .collect();
    let mut gw = vec![T::zero(); g.weight_len()];
    for p in &partial {
        for (a, &b) in gw.iter_mut().zip(p) {
            *a += b;
        }
    }
    let gd = grad_out.data();
    let gb = (0..g.out_ch)
        .map(|co| {
            (0..os[0])
                .map(|n| {
                    let start = (n * g.out_ch + co) * ovol;
                    gd[start..start + ovol].iter().copied().sum::<T>()
                })
                .sum()
        })
        .collect();
    Ok((gx, gw, gb))
}

/// Transposed convolution with kernel size equal to its stride, so every
/// output voxel receives exactly one tap: spatial dims grow by `kernel`.
pub fn conv_transpose3d<T: Scalar>(
    x: &Tensor5<T>,
    weight: &[T],
    bias: &[T],
    g: ConvGeometry,
) -> Result<Tensor5<T>> {
    check_transpose(&g, x)?;
    let [n_n, ci_n, d, h, w] = x.shape();
    let k = g.kernel;
    let co_n = g.out_ch;
    let os = [n_n, co_n, d * k, h * k, w * k];
    let ovol = os[2] * os[3] * os[4];
    let mut out = Tensor5::zeros(os);
    if ovol == 0 {
        return Ok(out);
    }
    let xd = x.data();
    let (ow_n, oh_n) = (w * k, h * k);
    out.data_mut()
        .par_chunks_mut(ovol)
        .enumerate()
        .for_each(|(idx, o)| {
            let (n, co) = (idx / co_n, idx % co_n);
            o.fill(bias[co]);
            for ci in 0..ci_n {
                let xin = &xd[(n * ci_n + ci) * d * h * w..][..d * h * w];
                let wbase = (co * ci_n + ci) * k * k * k;
                for i in 0..d {
                    for a in 0..k {
                        for j in 0..h {
                            for b in 0..k {
                                let orow =
                                    &mut o[((i * k + a) * oh_n + j * k + b) * ow_n..][..ow_n];
                                let xrow = &xin[(i * h + j) * w..][..w];
                                for c in 0..k {
                                    let wv = weight[wbase + (a * k + b) * k + c];
                                    for (l, &xv) in xrow.iter().enumerate() {
                                        orow[l * k + c] += wv * xv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

pub fn conv_transpose3d_backward<T: Scalar>(
    x: &Tensor5<T>,
    weight: &[T],
    g: ConvGeometry,
    grad_out: &Tensor5<T>,
) -> Result<(Tensor5<T>, Vec<T>, Vec<T>)> {
    check_transpose(&g, x)?;
    let [n_n, ci_n, d, h, w] = x.shape();
    let k = g.kernel;
    let co_n = g.out_ch;
    let os = [n_n, co_n, d * k, h * k, w * k];
    ensure!(
        grad_out.shape() == os,
        Shape,
        "transposed conv gradient shape {:?} does not match output {os:?}",
        grad_out.shape()
    );
    let (ow_n, oh_n) = (w * k, h * k);
    let ovol = os[2] * os[3] * os[4];
    let ivol = d * h * w;
    let gd = grad_out.data();
    let xd = x.data();

    let mut gx = Tensor5::zeros(x.shape());
    gx.data_mut()
        .par_chunks_mut(ivol)
        .enumerate()
        .for_each(|(idx, gi)| {
            let (n, ci) = (idx / ci_n, idx % ci_n);
            for co in 0..co_n {
                let go = &gd[(n * co_n + co) * ovol..][..ovol];
                let wbase = (co * ci_n + ci) * k * k * k;
                for i in 0..d {
                    for a in 0..k {
                        for j in 0..h {
                            for b in 0..k {
                                let grow = &go[((i * k + a) * oh_n + j * k + b) * ow_n..][..ow_n];
                                let girow = &mut gi[(i * h + j) * w..][..w];
                                for c in 0..k {
                                    let wv = weight[wbase + (a * k + b) * k + c];
                                    for (l, gv) in girow.iter_mut().enumerate() {
                                        *gv += wv * grow[l * k + c];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });

    let per_co = ci_n * k * k * k;
    let mut gw = vec![T::zero(); g.weight_len()];
    gw.par_chunks_mut(per_co).enumerate().for_each(|(co, gwc)| {
        let mut row = vec![T::zero(); w];
        for ci in 0..ci_n {
            for a in 0..k {
                for b in 0..k {
                    for c in 0..k {
                        let mut acc = T::zero();
                        for n in 0..n_n {
                            let go = &gd[(n * co_n + co) * ovol..][..ovol];
                            let xin = &xd[(n * ci_n + ci) * ivol..][..ivol];
                            for i in 0..d {
                                for j in 0..h {
                                    let grow =
                                        &go[((i * k + a) * oh_n + j * k + b) * ow_n..][..ow_n];
                                    for (l, r) in row.iter_mut().enumerate() {
                                        *r = grow[l * k + c];
                                    }
                                    acc += dot(&row, &xin[(i * h + j) * w..][..w]);
                                }
                            }
                        }
                        gwc[((ci * k + a) * k + b) * k + c] = acc;
                    }
                }
            }
        }
    });

    let gb = (0..co_n)
        .map(|co| {
            (0..n_n)
                .map(|n| {
                    gd[(n * co_n + co) * ovol..][..ovol]
                        .iter()
                        .copied()
                        .sum::<T>()
                })
                .sum()
        })
        .collect();
    Ok((gx, gw, gb))
}

fn check_transpose<T: Scalar>(g: &ConvGeometry, x: &Tensor5<T>) -> Result<()> {
    if g.kernel != g.stride || g.padding != 0 || g.kernel == 0 {
        return Err(Error::InvalidArgument(format!(
            "transposed conv supports kernel == stride without padding, got {g:?}"
        )));
    }
    ensure!(
        x.channels() == g.in_ch,
        Shape,
        "transposed conv expects {} input channels, got {}",
        g.in_ch,
        x.channels()
    );
    Ok(())
}

/// Whether a layer should keep activations for a backward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKind {
    Regular,
    Transposed,
}

/// A convolution layer: weights, bias, geometry, and the cached input of the
/// last training-mode forward pass.
#[derive(Clone, Debug)]
pub struct Conv3d<T> {
    pub geometry: ConvGeometry,
    pub kind: ConvKind,
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor5<T>>,
}

impl<T: Scalar> Conv3d<T> {
    pub fn new(geometry: ConvGeometry) -> Self {
        let k = geometry.kernel;
        Self {
            geometry,
            kind: ConvKind::Regular,
            weight: Param::new(&[geometry.out_ch, geometry.in_ch, k, k, k], T::zero()),
            bias: Param::new(&[geometry.out_ch], T::zero()),
            cache: None,
        }
    }

    /// Kernel 2, stride 2 transposed convolution.
    pub fn transposed(in_ch: usize, out_ch: usize) -> Self {
        Self {
            kind: ConvKind::Transposed,
            ..Self::new(ConvGeometry {
                in_ch,
                out_ch,
                kernel: 2,
                stride: 2,
                padding: 0,
            })
        }
    }

    /// Normal(0, std) weights and biases.
    pub fn init_normal(&mut self, rng: &mut Rng, std: f64) {
        self.weight.fill_normal(rng, std);
        self.bias.fill_normal(rng, std);
    }

    pub fn forward(&mut self, x: &Tensor5<T>, mode: Mode) -> Result<Tensor5<T>> {
        let y = match self.kind {
            ConvKind::Regular => conv3d(x, &self.weight.value, &self.bias.value, self.geometry)?,
            ConvKind::Transposed => {
                conv_transpose3d(x, &self.weight.value, &self.bias.value, self.geometry)?
            }
        };
        self.cache = (mode == Mode::Train).then(|| x.clone());
        Ok(y)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor5<T>) -> Result<Tensor5<T>> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidArgument("conv backward without forward".into()))?;
        let (gx, gw, gb) = match self.kind {
            ConvKind::Regular => conv3d_backward(&x, &self.weight.value, self.geometry, grad_out)?,
            ConvKind::Transposed => {
                conv_transpose3d_backward(&x, &self.weight.value, self.geometry, grad_out)?
            }
        };
        self.weight.accumulate(&gw);
        self.bias.accumulate(&gb);
        Ok(gx)
    }
}

impl<T: Scalar> HasParams<T> for Conv3d<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join_name(prefix, "weight"), &mut self.weight);
        f(&join_name(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: [usize; 5]) -> Tensor5<f64> {
        let n = shape.iter().product::<usize>();
        Tensor5::from_vec(
            shape,
            (0..n).map(|i| ((i * 37) % 11) as f64 - 5.0).collect(),
        )
        .unwrap()
    }

    /// Direct six-deep loop, no range tricks.
    fn naive_conv(x: &Tensor5<f64>, w: &[f64], b: &[f64], g: ConvGeometry) -> Tensor5<f64> {
        let [nn, ci_n, d, h, ww] = x.shape();
        let os = g.output_shape(x.shape()).unwrap();
        let k = g.kernel;
        let mut out = Tensor5::zeros(os);
        for n in 0..nn {
            for co in 0..g.out_ch {
                for od in 0..os[2] {
                    for oh in 0..os[3] {
                        for ow in 0..os[4] {
                            let mut acc = b[co];
                            for ci in 0..ci_n {
                                for a in 0..k {
                                    for bb in 0..k {
                                        for c in 0..k {
                                            let id =
                                                (od * g.stride + a) as isize - g.padding as isize;
                                            let ih =
                                                (oh * g.stride + bb) as isize - g.padding as isize;
                                            let iw =
                                                (ow * g.stride + c) as isize - g.padding as isize;
                                            if id < 0
                                                || ih < 0
                                                || iw < 0
                                                || id >= d as isize
                                                || ih >= h as isize
                                                || iw >= ww as isize
                                            {
                                                continue;
                                            }
                                            let xi = (((n * ci_n + ci) * d + id as usize) * h
                                                + ih as usize)
                                                * ww
                                                + iw as usize;
                                            let wi = (((co * ci_n + ci) * k + a) * k + bb) * k + c;
                                            acc += x.data()[xi] * w[wi];
                                        }
                                    }
                                }
                            }
                            let oi = (((n * g.out_ch + co) * os[2] + od) * os[3] + oh) * os[4] + ow;
                            out.data_mut()[oi] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let x = ramp([1, 1, 4, 5, 6]);
        let y = conv3d(&x, &[1.0], &[0.0], ConvGeometry::pointwise(1, 1)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_weights_give_bias() {
        let x = ramp([2, 3, 4, 4, 4]);
        let g = ConvGeometry::same3(3, 2);
        let y = conv3d(&x, &vec![0.0; g.weight_len()], &[1.5, -2.0], g).unwrap();
        assert_eq!(y.shape(), [2, 2, 4, 4, 4]);
        assert!(y.channel(1, 0).iter().all(|&v| v == 1.5));
        assert!(y.channel(0, 1).iter().all(|&v| v == -2.0));
    }

    #[test]
    fn matches_naive_loops() {
        for g in [
            ConvGeometry::same3(2, 3),
            ConvGeometry {
                in_ch: 2,
                out_ch: 2,
                kernel: 3,
                stride: 2,
                padding: 1,
            },
            ConvGeometry {
                in_ch: 1,
                out_ch: 2,
                kernel: 2,
                stride: 1,
                padding: 0,
            },
        ] {
            let x = ramp([2, g.in_ch, 5, 6, 7]);
            let w: Vec<f64> = (0..g.weight_len())
                .map(|i| ((i * 13) % 7) as f64 * 0.25 - 0.7)
                .collect();
            let b: Vec<f64> = (0..g.out_ch).map(|i| i as f64).collect();
            let fast = conv3d(&x, &w, &b, g).unwrap();
            let slow = naive_conv(&x, &w, &b, g);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-9, "{g:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn channel_mismatch() {
        let x = ramp([1, 2, 4, 4, 4]);
        let g = ConvGeometry::same3(3, 1);
        assert!(conv3d(&x, &vec![0.0; g.weight_len()], &[0.0], g).is_err());
    }

    #[test]
    fn transpose_doubles_and_covers_once() {
        let x = Tensor5::full([1, 1, 24, 24, 24], 3.0);
        let g = ConvGeometry {
            in_ch: 1,
            out_ch: 1,
            kernel: 2,
            stride: 2,
            padding: 0,
        };
        let y = conv_transpose3d(&x, &[1.0; 8], &[0.0], g).unwrap();
        assert_eq!(y.shape(), [1, 1, 48, 48, 48]);
        assert!(y.data().iter().all(|&v| v == 3.0));
        let bad = ConvGeometry { kernel: 3, ..g };
        assert!(conv_transpose3d(&x, &[1.0; 27], &[0.0], bad).is_err());
    }
}
