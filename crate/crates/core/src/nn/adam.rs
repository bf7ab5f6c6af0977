//! Adam with bias-corrected moments.

use super::param::{HasParams, Param};
use super::tensor::Scalar;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// Defaults β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// One update of every trainable parameter of `model` from its
    /// accumulated gradient. Moments are keyed by visit order and created
    /// lazily on the first step.
    pub fn step<T: Scalar, M: HasParams<T> + ?Sized>(&mut self, model: &mut M) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.epsilon, self.lr);
        let first_step = self.first.is_empty();
        let mut idx = 0;
        let mut err = None;
        let (first, second) = (&mut self.first, &mut self.second);
        model.visit_params("", &mut |name, p: &mut Param<T>| {
            if !p.trainable || err.is_some() {
                return;
            }
            if first_step {
                first.push(vec![0.0; p.len()]);
                second.push(vec![0.0; p.len()]);
            }
            let (Some(m), Some(v)) = (first.get_mut(idx), second.get_mut(idx)) else {
                err = Some(Error::Shape(format!("optimizer has no state for {name}")));
                return;
            };
            if m.len() != p.len() {
                err = Some(Error::Shape(format!(
                    "optimizer state for {name} has {} entries, parameter has {}",
                    m.len(),
                    p.len()
                )));
                return;
            }
            for i in 0..p.len() {
                let g = p.grad[i].f64();
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.value[i] = T::of(p.value[i].f64() - lr * mhat / (vhat.sqrt() + eps));
            }
            idx += 1;
        });
        if let Some(e) = err {
            return Err(e);
        }
        if idx != self.first.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, model has {idx}",
                self.first.len()
            )));
        }
        Ok(())
    }
}

/// Functional form: update `params` in place from their gradients.
pub fn adam_step<T: Scalar>(params: &mut Vec<Param<T>>, state: &mut AdamState) -> Result<()> {
    state.step(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_noop() {
        let mut ps = vec![Param::new(&[3], 1.5f64)];
        let mut st = AdamState::new(1e-3);
        for _ in 0..5 {
            adam_step(&mut ps, &mut st).unwrap();
        }
        assert_eq!(ps[0].value, vec![1.5; 3]);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        let mut ps = vec![Param::new(&[4], 0.0f64)];
        ps[0].grad = vec![3.0, -0.2, 1e-3, -50.0];
        let mut st = AdamState::new(1e-2);
        adam_step(&mut ps, &mut st).unwrap();
        for (v, g) in ps[0].value.iter().zip([3.0f64, -0.2, 1e-3, -50.0]) {
            assert!((v + 1e-2 * g.signum()).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn quadratic_descends() {
        // f(x) = (x - 3)^2
        let mut ps = vec![Param::new(&[1], -2.0f64)];
        let mut st = AdamState::new(0.1);
        let mut losses = Vec::new();
        for _ in 0..50 {
            let x = ps[0].value[0];
            losses.push((x - 3.0).powi(2));
            ps[0].grad[0] = 2.0 * (x - 3.0);
            adam_step(&mut ps, &mut st).unwrap();
        }
        for w in losses[5..].windows(2) {
            assert!(w[1] < w[0], "loss rose: {w:?}");
        }
        assert!(losses[49] < 0.05 * losses[0]);
    }

    #[test]
    fn shape_change_rejected() {
        let mut ps = vec![Param::new(&[2], 0.0f64)];
        let mut st = AdamState::new(1e-3);
        adam_step(&mut ps, &mut st).unwrap();
        ps.push(Param::new(&[1], 0.0));
        assert!(adam_step(&mut ps, &mut st).is_err());
    }
}
