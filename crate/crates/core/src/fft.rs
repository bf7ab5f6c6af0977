//! 3D complex FFT over x-fastest grids, built from 1D rustfft passes.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::volgrid::Dims;

pub(crate) struct Fft3 {
    dims: Dims,
    forward: [Arc<dyn Fft<f64>>; 3],
    inverse: [Arc<dyn Fft<f64>>; 3],
}

impl Fft3 {
    pub fn new(dims: Dims) -> Self {
        let mut planner = FftPlanner::new();
        let forward = dims.map(|n| planner.plan_fft_forward(n));
        let inverse = dims.map(|n| planner.plan_fft_inverse(n));
        Self {
            dims,
            forward,
            inverse,
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.forward);
    }

    /// Normalized inverse transform (divides by N).
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inverse);
        let scale = 1.0 / data.len() as f64;
        data.iter_mut().for_each(|v| *v *= scale);
    }

    fn run(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>; 3]) {
        let [nx, ny, nz] = self.dims;
        debug_assert_eq!(data.len(), nx * ny * nz);
        // x lines are contiguous
        plans[0].process(data);

        let mut line = vec![Complex64::default(); ny.max(nz)];
        for z in 0..nz {
            for x in 0..nx {
                let base = x + nx * ny * z;
                for y in 0..ny {
                    line[y] = data[base + nx * y];
                }
                plans[1].process(&mut line[..ny]);
                for y in 0..ny {
                    data[base + nx * y] = line[y];
                }
            }
        }
        let plane = nx * ny;
        for y in 0..ny {
            for x in 0..nx {
                let base = x + nx * y;
                for z in 0..nz {
                    line[z] = data[base + plane * z];
                }
                plans[2].process(&mut line[..nz]);
                for z in 0..nz {
                    data[base + plane * z] = line[z];
                }
            }
        }
    }
}

/// Signed frequency of FFT bin `i` on an `n`-point grid, in `[-n/2, n/2)`.
#[inline]
pub fn signed_frequency(i: usize, n: usize) -> f64 {
    if i < n.div_ceil(2) {
        i as f64
    } else {
        i as f64 - n as f64
    }
}
