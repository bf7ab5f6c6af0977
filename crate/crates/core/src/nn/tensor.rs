use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{ensure, Result};

/// Floating-point element type of the engine. `f64` is used for gradient
/// checks, `f32` for training throughput.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Send
    + Sync
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;

    /// `C = A·B + beta·C` for strided row/column layouts.
    ///
    /// # Safety
    /// Every index reachable through the given extents and strides must lie
    /// inside the corresponding buffer; see [`gemm`] for the checked wrapper.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        sa: (isize, isize),
        b: *const Self,
        sb: (isize, isize),
        beta: Self,
        c: *mut Self,
        sc: (isize, isize),
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn of(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn f64(self) -> f64 {
                self as f64
            }
            unsafe fn gemm_raw(
                m: usize,
                k: usize,
                n: usize,
                a: *const Self,
                sa: (isize, isize),
                b: *const Self,
                sb: (isize, isize),
                beta: Self,
                c: *mut Self,
                sc: (isize, isize),
            ) {
                $gemm(
                    m, k, n, 1.0, a, sa.0, sa.1, b, sb.0, sb.1, beta, c, sc.0, sc.1,
                )
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Row/column strides of a matrix operand.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Strides(pub usize, pub usize);

fn extent(rows: usize, cols: usize, s: Strides) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * s.0 + (cols - 1) * s.1 + 1
    }
}

/// Checked `C (m×n) = A (m×k) · B (k×n) + beta·C`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    sa: Strides,
    b: &[T],
    sb: Strides,
    beta: T,
    c: &mut [T],
    sc: Strides,
) {
    assert!(extent(m, k, sa) <= a.len(), "gemm: A out of bounds");
    assert!(extent(k, n, sb) <= b.len(), "gemm: B out of bounds");
    assert!(extent(m, n, sc) <= c.len(), "gemm: C out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    let st = |s: Strides| (s.0 as isize, s.1 as isize);
    // SAFETY: the extents above bound every index the kernel touches.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.as_ptr(),
            st(sa),
            b.as_ptr(),
            st(sb),
            beta,
            c.as_mut_ptr(),
            st(sc),
        );
    }
}

/// Dense 5D tensor laid out `(batch, channel, depth, height, width)`, width
/// fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor5<T> {
    data: Vec<T>,
    shape: [usize; 5],
}

impl<T: Scalar> Tensor5<T> {
    pub fn zeros(shape: [usize; 5]) -> Self {
        Self {
            data: vec![T::zero(); shape.iter().product()],
            shape,
        }
    }

    pub fn full(shape: [usize; 5], value: T) -> Self {
        Self {
            data: vec![value; shape.iter().product()],
            shape,
        }
    }

    pub fn from_vec(shape: [usize; 5], data: Vec<T>) -> Result<Self> {
        ensure!(
            data.len() == shape.iter().product::<usize>(),
            Shape,
            "data length {} does not match shape {shape:?}",
            data.len()
        );
        Ok(Self { data, shape })
    }

    pub fn shape(&self) -> [usize; 5] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    /// `(depth, height, width)`.
    pub fn spatial(&self) -> [usize; 3] {
        [self.shape[2], self.shape[3], self.shape[4]]
    }

    pub fn spatial_len(&self) -> usize {
        self.shape[2] * self.shape[3] * self.shape[4]
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// The spatial block of sample `n`, channel `c`.
    pub fn channel(&self, n: usize, c: usize) -> &[T] {
        let s = self.spatial_len();
        let start = (n * self.shape[1] + c) * s;
        &self.data[start..start + s]
    }

    pub fn channel_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let s = self.spatial_len();
        let start = (n * self.shape[1] + c) * s;
        &mut self.data[start..start + s]
    }

    /// All channels of sample `n`.
    pub fn sample(&self, n: usize) -> &[T] {
        let s = self.shape[1] * self.spatial_len();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            shape: self.shape,
        }
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|v| v * factor)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor5<U> {
        Tensor5 {
            data: self.data.iter().map(|&v| U::of(v.f64())).collect(),
            shape: self.shape,
        }
    }

    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.f64()).sum()
    }

    /// Stacks single-sample tensors of equal shape along the batch axis.
    pub fn stack(items: &[Tensor5<T>]) -> Result<Self> {
        ensure!(!items.is_empty(), Shape, "cannot stack zero tensors");
        let first = items[0].shape;
        let mut data = Vec::with_capacity(items.len() * items[0].numel());
        for t in items {
            ensure!(
                t.shape[1..] == first[1..],
                Shape,
                "stack shape mismatch {:?} vs {:?}",
                t.shape,
                first
            );
            data.extend_from_slice(&t.data);
        }
        let n = items.iter().map(|t| t.shape[0]).sum();
        Ok(Self {
            data,
            shape: [n, first[1], first[2], first[3], first[4]],
        })
    }
}

pub(crate) fn check_same_shape<T: Scalar>(
    a: &Tensor5<T>,
    b: &Tensor5<T>,
    what: &str,
) -> Result<()> {
    ensure!(
        a.shape() == b.shape(),
        Shape,
        "{what}: shapes {:?} and {:?} differ",
        a.shape(),
        b.shape()
    );
    Ok(())
}

/// Deterministic dot product with independent partial sums so the compiler
/// can vectorize it.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}
