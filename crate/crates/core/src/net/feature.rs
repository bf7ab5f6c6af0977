use crate::error::{ensure, Result};
use crate::nn::{add, concat_channels, split_channels, Scalar, Tensor5};

/// Channels assigned to the high-resolution group when `total` channels are
/// split with ratio `alpha`.
pub fn high_channels(total: usize, alpha: f64) -> usize {
    ((alpha * total as f64).round() as usize).min(total)
}

/// A high-resolution / half-resolution pair of feature tensors. `low` is
/// absent when every channel sits in the high group (ratio 1).
#[derive(Clone, Debug, PartialEq)]
pub struct OctFeature<T> {
    pub high: Tensor5<T>,
    pub low: Option<Tensor5<T>>,
}

impl<T: Scalar> OctFeature<T> {
    pub fn new(high: Tensor5<T>, low: Option<Tensor5<T>>) -> Result<Self> {
        if let Some(l) = &low {
            let (h, ls) = (high.shape(), l.shape());
            ensure!(
                h[0] == ls[0] && h[2..].iter().zip(&ls[2..]).all(|(&a, &b)| a == 2 * b),
                Shape,
                "low branch {ls:?} is not half of high branch {h:?}"
            );
        }
        Ok(Self { high, low })
    }

    pub fn high_only(high: Tensor5<T>) -> Self {
        Self { high, low: None }
    }

    pub fn high_channels(&self) -> usize {
        self.high.channels()
    }

    pub fn low_channels(&self) -> usize {
        self.low.as_ref().map_or(0, |l| l.channels())
    }

    pub fn channels(&self) -> usize {
        self.high_channels() + self.low_channels()
    }

    /// Fraction of channels in the high group.
    pub fn alpha(&self) -> f64 {
        self.high_channels() as f64 / self.channels().max(1) as f64
    }

    pub fn all_finite(&self) -> bool {
        self.high.all_finite() && self.low.as_ref().is_none_or(|l| l.all_finite())
    }

    pub fn map(&self, f: impl Fn(&Tensor5<T>) -> Tensor5<T>) -> Self {
        Self {
            high: f(&self.high),
            low: self.low.as_ref().map(f),
        }
    }

    pub fn try_map(&self, mut f: impl FnMut(&Tensor5<T>) -> Result<Tensor5<T>>) -> Result<Self> {
        Ok(Self {
            high: f(&self.high)?,
            low: self.low.as_ref().map(&mut f).transpose()?,
        })
    }

    /// Branch-wise sum.
    pub fn add(&self, other: &Self) -> Result<Self> {
        Ok(Self {
            high: add(&self.high, &other.high)?,
            low: join(&self.low, &other.low, add)?,
        })
    }

    /// Group-wise channel concatenation: high with high, low with low.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        Ok(Self {
            high: concat_channels(&self.high, &other.high)?,
            low: join(&self.low, &other.low, concat_channels)?,
        })
    }

    /// Inverse of [`OctFeature::concat`] given the first operand's group
    /// sizes.
    pub fn split(&self, high: usize, low: usize) -> Result<(Self, Self)> {
        let (ha, hb) = split_channels(&self.high, high)?;
        let (la, lb) = match &self.low {
            Some(l) => {
                let (a, b) = split_channels(l, low)?;
                (Some(a), Some(b))
            }
            None => (None, None),
        };
        Ok((Self { high: ha, low: la }, Self { high: hb, low: lb }))
    }
}

fn join<T: Scalar>(
    a: &Option<Tensor5<T>>,
    b: &Option<Tensor5<T>>,
    f: impl Fn(&Tensor5<T>, &Tensor5<T>) -> Result<Tensor5<T>>,
) -> Result<Option<Tensor5<T>>> {
    match (a, b) {
        (Some(a), Some(b)) => Ok(Some(f(a, b)?)),
        (None, None) => Ok(None),
        _ => Err(crate::Error::Shape(
            "octave features disagree on the presence of a low branch".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_split_rounding() {
        assert_eq!(high_channels(16, 0.5), 8);
        assert_eq!(high_channels(8, 1.0), 8);
        assert_eq!(high_channels(5, 0.5), 3);
        assert_eq!(high_channels(4, 0.0), 0);
    }

    #[test]
    fn concat_split_roundtrip() {
        let f = OctFeature::new(
            Tensor5::<f64>::full([1, 2, 4, 4, 4], 1.0),
            Some(Tensor5::full([1, 2, 2, 2, 2], 2.0)),
        )
        .unwrap();
        let g = f.map(|t| t.scale(-1.0));
        let c = f.concat(&g).unwrap();
        assert_eq!(c.channels(), 8);
        assert_eq!(c.alpha(), 0.5);
        let (a, b) = c.split(2, 2).unwrap();
        assert_eq!(a, f);
        assert_eq!(b, g);
        assert!(OctFeature::new(
            Tensor5::<f64>::zeros([1, 1, 4, 4, 4]),
            Some(Tensor5::zeros([1, 1, 4, 4, 4]))
        )
        .is_err());
    }
}
