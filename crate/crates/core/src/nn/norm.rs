//! Per-channel batch normalization over `(batch, depth, height, width)`.

use super::conv::Mode;
use super::param::{join_name, HasParams, Param};
use super::tensor::{Scalar, Tensor5};
use crate::error::{ensure, Error, Result};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Clone, Debug)]
struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<f64>,
    shape: [usize; 5],
    mode: Mode,
}

/// Batch norm with learnable gain/shift and running statistics.
///
/// Running variance is tracked with the unbiased estimator; normalization in
/// training mode uses the biased batch variance.
#[derive(Clone, Debug)]
pub struct BatchNorm3d<T> {
    pub gain: Param<T>,
    pub shift: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub momentum: f64,
    pub epsilon: f64,
    cache: Option<BnCache<T>>,
}

impl<T: Scalar> BatchNorm3d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gain: Param::new(&[channels], T::one()),
            shift: Param::new(&[channels], T::zero()),
            running_mean: Param::buffer(&[channels], T::zero()),
            running_var: Param::buffer(&[channels], T::one()),
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gain.len()
    }

    /// `train` selects batch statistics (and updates the running ones);
    /// otherwise running statistics are used. `keep` stores what the backward
    /// pass needs.
    pub fn forward_with(&mut self, x: &Tensor5<T>, train: bool, keep: bool) -> Result<Tensor5<T>> {
        let [n, c, ..] = x.shape();
        ensure!(
            c == self.channels(),
            Shape,
            "batch norm expects {} channels, got {c}",
            self.channels()
        );
        let s = x.spatial_len();
        let m = n * s;
        if train && m < 2 {
            return Err(Error::InvalidArgument(format!(
                "batch norm in training mode needs >= 2 values per channel, got {m}"
            )));
        }
        let mut out = Tensor5::zeros(x.shape());
        let mut xhat = if keep {
            vec![T::zero(); x.numel()]
        } else {
            Vec::new()
        };
        let mut inv_stds = Vec::with_capacity(c);
        for ch in 0..c {
            let (mean, inv_std) = if train {
                let mut sum = 0.0;
                for b in 0..n {
                    sum += x.channel(b, ch).iter().map(|v| v.f64()).sum::<f64>();
                }
                let mean = sum / m as f64;
                let mut sq = 0.0;
                for b in 0..n {
                    sq += x
                        .channel(b, ch)
                        .iter()
                        .map(|v| {
                            let d = v.f64() - mean;
                            d * d
                        })
                        .sum::<f64>();
                }
                let var = sq / m as f64;
                let unbiased = sq / (m - 1) as f64;
                let mom = self.momentum;
                let rm = &mut self.running_mean.value[ch];
                *rm = T::of((1.0 - mom) * rm.f64() + mom * mean);
                let rv = &mut self.running_var.value[ch];
                *rv = T::of((1.0 - mom) * rv.f64() + mom * unbiased);
                (mean, 1.0 / (var + self.epsilon).sqrt())
            } else {
                let var = self.running_var.value[ch].f64();
                (
                    self.running_mean.value[ch].f64(),
                    1.0 / (var + self.epsilon).sqrt(),
                )
            };
            inv_stds.push(inv_std);
            let (g, sh) = (self.gain.value[ch], self.shift.value[ch]);
            let (mean_t, inv_t) = (T::of(mean), T::of(inv_std));
            for b in 0..n {
                let src = x.channel(b, ch);
                let start = (b * c + ch) * s;
                let dst = &mut out.data_mut()[start..start + s];
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o = (v - mean_t) * inv_t;
                }
                if keep {
                    xhat[start..start + s].copy_from_slice(dst);
                }
                for o in dst.iter_mut() {
                    *o = *o * g + sh;
                }
            }
        }
        self.cache = keep.then(|| BnCache {
            xhat,
            inv_std: inv_stds,
            shape: x.shape(),
            mode: if train { Mode::Train } else { Mode::Eval },
        });
        Ok(out)
    }

    pub fn forward(&mut self, x: &Tensor5<T>, mode: Mode) -> Result<Tensor5<T>> {
        let train = mode == Mode::Train;
        self.forward_with(x, train, train)
    }

    pub fn backward(&mut self, grad_out: &Tensor5<T>) -> Result<Tensor5<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidArgument("batch norm backward without forward".into()))?;
        ensure!(
            grad_out.shape() == cache.shape,
            Shape,
            "batch norm gradient shape mismatch"
        );
        let [n, c, ..] = cache.shape;
        let s = grad_out.spatial_len();
        let m = (n * s) as f64;
        let mut gx = Tensor5::zeros(cache.shape);
        for ch in 0..c {
            let g = self.gain.value[ch].f64();
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for b in 0..n {
                let start = (b * c + ch) * s;
                let dy = &grad_out.data()[start..start + s];
                let xh = &cache.xhat[start..start + s];
                for (&d, &xv) in dy.iter().zip(xh) {
                    sum_dy += d.f64();
                    sum_dy_xhat += d.f64() * xv.f64();
                }
            }
            self.gain.grad[ch] += T::of(sum_dy_xhat);
            self.shift.grad[ch] += T::of(sum_dy);
            let inv_std = cache.inv_std[ch];
            for b in 0..n {
                let start = (b * c + ch) * s;
                let dy = &grad_out.data()[start..start + s];
                let xh = &cache.xhat[start..start + s];
                let dst = &mut gx.data_mut()[start..start + s];
                match cache.mode {
                    Mode::Train => {
                        let k = g * inv_std / m;
                        for ((o, &d), &xv) in dst.iter_mut().zip(dy).zip(xh) {
                            *o = T::of(k * (m * d.f64() - sum_dy - xv.f64() * sum_dy_xhat));
                        }
                    }
                    Mode::Eval => {
                        let k = T::of(g * inv_std);
                        for (o, &d) in dst.iter_mut().zip(dy) {
                            *o = d * k;
                        }
                    }
                }
            }
        }
        Ok(gx)
    }
}

impl<T: Scalar> HasParams<T> for BatchNorm3d<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join_name(prefix, "gain"), &mut self.gain);
        f(&join_name(prefix, "shift"), &mut self.shift);
        f(&join_name(prefix, "running_mean"), &mut self.running_mean);
        f(&join_name(prefix, "running_var"), &mut self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_mode_standardizes() {
        let data: Vec<f64> = (0..2 * 2 * 27)
            .map(|i| ((i * 7919) % 101) as f64 * 0.3 + 4.0)
            .collect();
        let x = Tensor5::from_vec([2, 2, 3, 3, 3], data).unwrap();
        let mut bn = BatchNorm3d::new(2);
        let y = bn.forward(&x, Mode::Train).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..2).flat_map(|b| y.channel(b, ch).to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3, "variance {var}");
        }
        assert!(bn.running_mean.value.iter().all(|&m| m > 0.0));
    }

    #[test]
    fn eval_mode_identity_with_unit_stats() {
        let x = Tensor5::from_vec([1, 1, 2, 2, 2], (0..8).map(|i| i as f64).collect()).unwrap();
        let mut bn = BatchNorm3d::new(1);
        let y = bn.forward(&x, Mode::Eval).unwrap();
        let scale = 1.0 / (1.0 + BN_EPSILON).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * scale).abs() < 1e-15);
        }
        assert_eq!(bn.running_mean.value, vec![0.0]);
    }

    #[test]
    fn degenerate_train_statistics() {
        let x = Tensor5::<f64>::zeros([1, 1, 1, 1, 1]);
        let mut bn = BatchNorm3d::new(1);
        assert!(bn.forward(&x, Mode::Train).is_err());
        assert!(bn.forward(&x, Mode::Eval).is_ok());
    }
}
