//! Independent reference implementations used as test oracles. Nothing here
//! calls into the FFT path of the crate.
#![allow(dead_code)]

use std::f64::consts::PI;

use octqsm::{Dims, Unit, Volume};

/// Signed FFT bin index.
fn bin(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// `1/3 - kz²/|k|²` on the FFT grid, 0 at the origin, x fastest.
pub fn naive_kernel(dims: Dims, voxel: [f64; 3]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let kx = bin(i, dims[0]) / (dims[0] as f64 * voxel[0]);
                let ky = bin(j, dims[1]) / (dims[1] as f64 * voxel[1]);
                let kz = bin(l, dims[2]) / (dims[2] as f64 * voxel[2]);
                let k2 = kx * kx + ky * ky + kz * kz;
                out.push(if k2 == 0.0 {
                    0.0
                } else {
                    1.0 / 3.0 - kz * kz / k2
                });
            }
        }
    }
    out
}

/// Real-space point spread function of the discrete kernel by a direct
/// inverse DFT. The kernel is even, so the imaginary part vanishes.
pub fn dipole_psf(dims: Dims, voxel: [f64; 3]) -> Vec<f64> {
    let d = naive_kernel(dims, voxel);
    let n: usize = dims.iter().product();
    let mut psf = vec![0.0; n];
    for rz in 0..dims[2] {
        for ry in 0..dims[1] {
            for rx in 0..dims[0] {
                let mut acc = 0.0;
                let mut idx = 0;
                for l in 0..dims[2] {
                    let pz = (l * rz) as f64 / dims[2] as f64;
                    for j in 0..dims[1] {
                        let py = (j * ry) as f64 / dims[1] as f64;
                        for i in 0..dims[0] {
                            let px = (i * rx) as f64 / dims[0] as f64;
                            acc += d[idx] * (2.0 * PI * (px + py + pz)).cos();
                            idx += 1;
                        }
                    }
                }
                psf[rx + dims[0] * (ry + dims[1] * rz)] = acc / n as f64;
            }
        }
    }
    psf
}

/// Field of `chi` as the circular real-space convolution with the PSF.
pub fn brute_force_field(chi: &Volume) -> Vec<f64> {
    let dims = chi.dims();
    let psf = dipole_psf(dims, chi.voxel_size());
    let mut out = vec![0.0; chi.len()];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let mut acc = 0.0;
                for sz in 0..dims[2] {
                    let dz = (z + dims[2] - sz) % dims[2];
                    for sy in 0..dims[1] {
                        let dy = (y + dims[1] - sy) % dims[1];
                        for sx in 0..dims[0] {
                            let v = chi.get(sx, sy, sz);
                            if v != 0.0 {
                                let dx = (x + dims[0] - sx) % dims[0];
                                acc += v * psf[dx + dims[0] * (dy + dims[1] * dz)];
                            }
                        }
                    }
                }
                out[chi.index(x, y, z)] = acc;
            }
        }
    }
    out
}

/// Uniform sphere of susceptibility `chi` centred at voxel `n/2` of an `n³`
/// grid; voxels with centre distance <= `r` are inside.
pub fn sphere(n: usize, r: f64, chi: f64) -> Volume {
    let c = (n / 2) as f64;
    Volume::from_fn([n; 3], [1.0; 3], Unit::Ppb, |x, y, z| {
        let d2 = (x as f64 - c).powi(2) + (y as f64 - c).powi(2) + (z as f64 - c).powi(2);
        if d2.sqrt() <= r {
            chi
        } else {
            0.0
        }
    })
    .unwrap()
}

/// Exterior field of a uniform sphere, `chi/3 · R³/r³ · (3cos²θ - 1)` with B0
/// along z, zero inside.
pub fn sphere_exterior(offset: [f64; 3], r: f64, chi: f64) -> f64 {
    let d = (offset[0].powi(2) + offset[1].powi(2) + offset[2].powi(2)).sqrt();
    if d <= r {
        return 0.0;
    }
    let cos2 = (offset[2] / d).powi(2);
    chi / 3.0 * (r / d).powi(3) * (3.0 * cos2 - 1.0)
}

/// Analytic exterior field at voxel `p` of the sphere of [`sphere`] together
/// with its 26 nearest periodic images.
pub fn periodic_sphere_exterior(n: usize, r: f64, chi: f64, p: [usize; 3]) -> f64 {
    let c = (n / 2) as f64;
    let mut total = 0.0;
    for ix in -1i32..=1 {
        for iy in -1i32..=1 {
            for iz in -1i32..=1 {
                let off = [
                    p[0] as f64 - c + (ix * n as i32) as f64,
                    p[1] as f64 - c + (iy * n as i32) as f64,
                    p[2] as f64 - c + (iz * n as i32) as f64,
                ];
                total += sphere_exterior(off, r, chi);
            }
        }
    }
    total
}

/// Least-squares scale `a` minimizing `||a·x - y||`, and the NRMSE (%) it
/// reaches.
pub fn scalar_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let xy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let xx: f64 = x.iter().map(|a| a * a).sum();
    let a = if xx > 0.0 { xy / xx } else { 0.0 };
    let err: f64 = x.iter().zip(y).map(|(p, q)| (a * p - q).powi(2)).sum();
    let yy: f64 = y.iter().map(|q| q * q).sum();
    (a, 100.0 * (err / yy).sqrt())
}

pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}
