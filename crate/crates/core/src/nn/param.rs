use rand_distr::{Distribution, Normal};

use super::tensor::Scalar;
use crate::seed::Rng;

/// A parameter buffer with its accumulated gradient.
///
/// Non-trainable buffers (batch-norm running statistics) are skipped by the
/// optimizer but still saved in checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(shape: &[usize], fill: T) -> Self {
        let n = shape.iter().product();
        Self {
            value: vec![fill; n],
            grad: vec![T::zero(); n],
            shape: shape.to_vec(),
            trainable: true,
        }
    }

    pub fn buffer(shape: &[usize], fill: T) -> Self {
        Self {
            trainable: false,
            ..Self::new(shape, fill)
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn fill_normal(&mut self, rng: &mut Rng, std: f64) {
        let dist = Normal::new(0.0, std).expect("finite std");
        for v in &mut self.value {
            *v = T::of(dist.sample(rng));
        }
    }

    pub(crate) fn accumulate(&mut self, g: &[T]) {
        debug_assert_eq!(g.len(), self.grad.len());
        for (a, &b) in self.grad.iter_mut().zip(g) {
            *a += b;
        }
    }
}

/// Anything that owns named parameters. Visit order must be stable: the
/// optimizer and checkpoints rely on it.
pub trait HasParams<T: Scalar> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>));

    fn zero_grad(&mut self) {
        self.visit_params("", &mut |_, p| p.zero_grad());
    }

    fn trainable_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, p| {
            if p.trainable {
                n += p.len()
            }
        });
        n
    }
}

impl<T: Scalar> HasParams<T> for Vec<Param<T>> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, p) in self.iter_mut().enumerate() {
            f(&join_name(prefix, &i.to_string()), p);
        }
    }
}

pub(crate) fn join_name(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
