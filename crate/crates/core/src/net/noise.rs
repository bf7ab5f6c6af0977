//! Training-time Gaussian noise injection at a randomly chosen SNR.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure, Result};
use crate::nn::{Scalar, Tensor5};
use crate::seed::Rng;

pub const DEFAULT_SNR_LIST: [f64; 4] = [40.0, 20.0, 10.0, 5.0];
pub const DEFAULT_NOISE_PROBABILITY: f64 = 0.2;

/// What the noise layer did to one batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseDraw {
    Skipped,
    Added { snr: f64, std: f64 },
}

pub fn check_noise_settings(probability: f64, snr_list: &[f64]) -> Result<()> {
    ensure!(
        (0.0..=1.0).contains(&probability),
        InvalidArgument,
        "noise probability must lie in [0, 1], got {probability}"
    );
    ensure!(
        !snr_list.is_empty() && snr_list.iter().all(|&s| s.is_finite() && s > 0.0),
        InvalidArgument,
        "SNR list must be nonempty and positive, got {snr_list:?}"
    );
    Ok(())
}

/// With probability `probability`, adds zero-mean Gaussian noise of variance
/// `Power / SNR` to every element of the batch, where `Power` is the mean
/// square of `x` and `SNR` is drawn uniformly from `snr_list`. One draw
/// covers the whole batch.
pub fn noise_layer<T: Scalar>(
    x: &Tensor5<T>,
    rng: &mut Rng,
    probability: f64,
    snr_list: &[f64],
) -> Result<(Tensor5<T>, NoiseDraw)> {
    check_noise_settings(probability, snr_list)?;
    let u: f64 = rng.random();
    if u >= probability {
        return Ok((x.clone(), NoiseDraw::Skipped));
    }
    let snr = snr_list[rng.random_range(0..snr_list.len())];
    let n = x.numel().max(1) as f64;
    let power = x.data().iter().map(|v| v.f64() * v.f64()).sum::<f64>() / n;
    let std = (power / snr).sqrt();
    let mut y = x.clone();
    for v in y.data_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v += T::of(std * z);
    }
    Ok((y, NoiseDraw::Added { snr, std }))
}
