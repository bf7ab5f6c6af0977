//! Unit dipole kernel in k-space, the forward field model and truncated
//! k-space division (TKD) as a classical inversion baseline.
//!
//! With B0 along +z, the kernel at physical frequency `k` is
//! `d(k) = 1/3 - kz² / |k|²`, with `d(0) = 0`.

use num_complex::Complex64;

use crate::error::{ensure, Result};
use crate::fft::{signed_frequency, Fft3};
use crate::volgrid::{Dims, Unit, Volume};

/// Unit dipole kernel sampled on an FFT-ordered k-space grid.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelGrid {
    values: Vec<f64>,
    dims: Dims,
    voxel_size: [f64; 3],
}

impl KernelGrid {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        self.voxel_size
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, l: usize) -> f64 {
        self.values[i + self.dims[0] * (j + self.dims[1] * l)]
    }

    fn check_matches(&self, volume: &Volume) -> Result<()> {
        ensure!(
            volume.dims() == self.dims,
            Shape,
            "volume dims {:?} do not match kernel dims {:?}",
            volume.dims(),
            self.dims
        );
        Ok(())
    }
}

/// Builds `d(k)` for a grid of `dims` voxels of size `voxel_size` mm.
///
/// Frequencies use physical coordinates `k = f / (n * dx)` so anisotropic
/// voxels produce a correctly shaped kernel.
pub fn dipole_kernel(dims: Dims, voxel_size: [f64; 3]) -> Result<KernelGrid> {
    ensure!(
        dims.iter().all(|&d| d >= 1),
        InvalidArgument,
        "kernel dims must be >= 1, got {dims:?}"
    );
    ensure!(
        voxel_size.iter().all(|&v| v > 0.0 && v.is_finite()),
        InvalidArgument,
        "voxel sizes must be positive, got {voxel_size:?}"
    );
    let axis = |a: usize| -> Vec<f64> {
        (0..dims[a])
            .map(|i| signed_frequency(i, dims[a]) / (dims[a] as f64 * voxel_size[a]))
            .collect()
    };
    let (kx, ky, kz) = (axis(0), axis(1), axis(2));
    let mut values = Vec::with_capacity(dims.iter().product());
    for &z in &kz {
        let z2 = z * z;
        for &y in &ky {
            let y2 = y * y;
            for &x in &kx {
                let k2 = x * x + y2 + z2;
                values.push(if k2 == 0.0 { 0.0 } else { 1.0 / 3.0 - z2 / k2 });
            }
        }
    }
    Ok(KernelGrid {
        values,
        dims,
        voxel_size,
    })
}

fn to_spectrum(volume: &Volume, fft: &Fft3) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = volume
        .data()
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    fft.forward(&mut buf);
    buf
}

/// Field perturbation induced by `chi`: `IFFT(FFT(chi) · d)`.
///
/// The field keeps the numeric scale of `chi` (a ppb susceptibility map yields a
/// ppb-equivalent field); multiply by 1e-3 for ppm.
pub fn forward_field(chi: &Volume, kernel: &KernelGrid) -> Result<Volume> {
    kernel.check_matches(chi)?;
    let fft = Fft3::new(kernel.dims);
    let mut spec = to_spectrum(chi, &fft);
    for (s, &d) in spec.iter_mut().zip(&kernel.values) {
        *s *= d;
    }
    fft.inverse(&mut spec);
    chi.with_data(spec.iter().map(|c| c.re).collect(), Unit::FieldNormalized)
}

/// Truncated k-space division. Where `|d| < threshold` the kernel is replaced
/// by `sign(d) · threshold`, with `sign(0) = +1`.
pub fn tkd_invert(field: &Volume, kernel: &KernelGrid, threshold: f64) -> Result<Volume> {
    kernel.check_matches(field)?;
    ensure!(
        threshold > 0.0 && threshold.is_finite(),
        InvalidArgument,
        "tkd threshold must be positive, got {threshold}"
    );
    let fft = Fft3::new(kernel.dims);
    let mut spec = to_spectrum(field, &fft);
    for (s, &d) in spec.iter_mut().zip(&kernel.values) {
        let denom = if d.abs() >= threshold {
            d
        } else if d < 0.0 {
            -threshold
        } else {
            threshold
        };
        *s /= denom;
    }
    fft.inverse(&mut spec);
    field.with_data(spec.iter().map(|c| c.re).collect(), Unit::Ppb)
}

/// Keeps only the spectral components of `volume` where `keep(d)` holds.
pub fn spectral_mask(
    volume: &Volume,
    kernel: &KernelGrid,
    keep: impl Fn(f64) -> bool,
) -> Result<Volume> {
    kernel.check_matches(volume)?;
    let fft = Fft3::new(kernel.dims);
    let mut spec = to_spectrum(volume, &fft);
    for (s, &d) in spec.iter_mut().zip(&kernel.values) {
        if !keep(d) {
            *s = Complex64::default();
        }
    }
    fft.inverse(&mut spec);
    volume.with_data(spec.iter().map(|c| c.re).collect(), volume.unit())
}
