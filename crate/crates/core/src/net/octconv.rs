//! Octave convolution: four intra/inter-group convolutions between a high-
//! and a half-resolution feature group.
//!
//! ```text
//! F_HH = Conv_HH(X_H)              Y_H = F_HH + F_LH
//! F_HL = Conv_HL(AvgPool(X_H))     Y_L = F_HL + F_LL
//! F_LH = ConvT(Conv_LH(X_L))
//! F_LL = Conv_LL(X_L)
//! ```

use super::feature::{high_channels, OctFeature};
use crate::error::{ensure, Error, Result};
use crate::nn::param::join_name;
use crate::nn::{
    add, avg_pool3d, avg_pool3d_backward, Conv3d, ConvGeometry, HasParams, Mode, Param, Scalar,
    Tensor5,
};
use crate::seed::Rng;

/// Channel bookkeeping of one octave layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OctShape {
    pub in_ch: usize,
    pub out_ch: usize,
    pub alpha_in: f64,
    pub alpha_out: f64,
}

impl OctShape {
    pub fn in_high(&self) -> usize {
        high_channels(self.in_ch, self.alpha_in)
    }

    pub fn in_low(&self) -> usize {
        self.in_ch - self.in_high()
    }

    pub fn out_high(&self) -> usize {
        high_channels(self.out_ch, self.alpha_out)
    }

    pub fn out_low(&self) -> usize {
        self.out_ch - self.out_high()
    }
}

/// The learnable part of an octave layer. Paths whose source or target group
/// is empty are absent.
#[derive(Clone, Debug)]
pub struct OctConv<T> {
    pub shape: OctShape,
    pub hh: Option<Conv3d<T>>,
    pub hl: Option<Conv3d<T>>,
    pub lh: Option<Conv3d<T>>,
    /// Upsamples the `lh` output back to high resolution.
    pub lh_up: Option<Conv3d<T>>,
    pub ll: Option<Conv3d<T>>,
    high_shape: Option<[usize; 5]>,
}

impl<T: Scalar> OctConv<T> {
    pub fn new(shape: OctShape) -> Result<Self> {
        ensure!(
            (0.0..=1.0).contains(&shape.alpha_in) && (0.0..=1.0).contains(&shape.alpha_out),
            InvalidArgument,
            "octave ratios must lie in [0, 1], got {shape:?}"
        );
        ensure!(
            shape.in_high() > 0 && shape.out_high() > 0,
            InvalidArgument,
            "octave layer needs a nonempty high group, got {shape:?}"
        );
        let (hi, li, ho, lo) = (
            shape.in_high(),
            shape.in_low(),
            shape.out_high(),
            shape.out_low(),
        );
        let conv =
            |a: usize, b: usize| (a > 0 && b > 0).then(|| Conv3d::new(ConvGeometry::same3(a, b)));
        Ok(Self {
            shape,
            hh: conv(hi, ho),
            hl: conv(hi, lo),
            lh: conv(li, ho),
            lh_up: (li > 0 && ho > 0).then(|| Conv3d::transposed(ho, ho)),
            ll: conv(li, lo),
            high_shape: None,
        })
    }

    /// Learnable weights of the four main kernels, excluding the transposed
    /// convolution and biases.
    pub fn main_kernel_weights(&self) -> usize {
        [&self.hh, &self.hl, &self.lh, &self.ll]
            .iter()
            .filter_map(|c| c.as_ref())
            .map(|c| c.weight.len())
            .sum()
    }

    pub fn init_normal(&mut self, rng: &mut Rng, std: f64) {
        for c in self.convs_mut() {
            c.init_normal(rng, std);
        }
    }

    fn convs_mut(&mut self) -> impl Iterator<Item = &mut Conv3d<T>> {
        [
            &mut self.hh,
            &mut self.hl,
            &mut self.lh,
            &mut self.lh_up,
            &mut self.ll,
        ]
        .into_iter()
        .flatten()
    }

    pub fn forward(&mut self, x: &OctFeature<T>, mode: Mode) -> Result<OctFeature<T>> {
        let s = self.shape;
        ensure!(
            x.high_channels() == s.in_high() && x.low_channels() == s.in_low(),
            Shape,
            "octave layer expects {}+{} channels, got {}+{}",
            s.in_high(),
            s.in_low(),
            x.high_channels(),
            x.low_channels()
        );
        if s.out_low() > 0 {
            ensure!(
                x.high.spatial().iter().all(|d| d % 2 == 0),
                Shape,
                "high branch dims {:?} must be even to form a low branch",
                x.high.spatial()
            );
        }
        let hh = self.hh.as_mut().expect("high path always present");
        let mut high = hh.forward(&x.high, mode)?;
        let mut low = None;
        if let Some(hl) = &mut self.hl {
            low = Some(hl.forward(&avg_pool3d(&x.high)?, mode)?);
        }
        if let Some(xl) = &x.low {
            if let (Some(lh), Some(up)) = (&mut self.lh, &mut self.lh_up) {
                let f_lh = up.forward(&lh.forward(xl, mode)?, mode)?;
                high = add(&high, &f_lh)?;
            }
            if let Some(ll) = &mut self.ll {
                let f_ll = ll.forward(xl, mode)?;
                low = Some(match low {
                    Some(l) => add(&l, &f_ll)?,
                    None => f_ll,
                });
            }
        }
        self.high_shape = (mode == Mode::Train).then(|| x.high.shape());
        OctFeature::new(high, low)
    }

    /// Accumulates parameter gradients; returns the input gradient.
    pub fn backward(&mut self, grad: &OctFeature<T>) -> Result<OctFeature<T>> {
        let high_shape = self
            .high_shape
            .take()
            .ok_or_else(|| Error::InvalidArgument("octave backward without forward".into()))?;
        let hh = self.hh.as_mut().expect("high path always present");
        let mut gx_high = hh.backward(&grad.high)?;
        let mut gx_low: Option<Tensor5<T>> = None;
        let mut acc_low = |g: Tensor5<T>| -> Result<()> {
            gx_low = Some(match gx_low.take() {
                Some(a) => add(&a, &g)?,
                None => g,
            });
            Ok(())
        };
        if let (Some(lh), Some(up)) = (&mut self.lh, &mut self.lh_up) {
            acc_low(lh.backward(&up.backward(&grad.high)?)?)?;
        }
        if let Some(gl) = &grad.low {
            if let Some(hl) = &mut self.hl {
                let g_pooled = hl.backward(gl)?;
                gx_high = add(&gx_high, &avg_pool3d_backward(high_shape, &g_pooled)?)?;
            }
            if let Some(ll) = &mut self.ll {
                acc_low(ll.backward(gl)?)?;
            }
        }
        OctFeature::new(gx_high, gx_low)
    }
}

impl<T: Scalar> HasParams<T> for OctConv<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        let named = [
            ("hh", &mut self.hh),
            ("hl", &mut self.hl),
            ("lh", &mut self.lh),
            ("lh_up", &mut self.lh_up),
            ("ll", &mut self.ll),
        ];
        for (name, conv) in named {
            if let Some(c) = conv {
                c.visit_params(&join_name(prefix, name), f);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::conv3d;
    use crate::seed::rng_from_seed;

    fn shape(in_ch: usize, out_ch: usize, ai: f64, ao: f64) -> OctShape {
        OctShape {
            in_ch,
            out_ch,
            alpha_in: ai,
            alpha_out: ao,
        }
    }

    #[test]
    fn four_kernels_match_plain_conv_count() {
        let oc = OctConv::<f32>::new(shape(16, 16, 0.5, 0.5)).unwrap();
        assert_eq!(oc.main_kernel_weights(), 6912);
        assert_eq!(ConvGeometry::same3(16, 16).weight_len(), 6912);
    }

    #[test]
    fn shape_contract() {
        let mut oc = OctConv::<f64>::new(shape(16, 16, 0.5, 0.5)).unwrap();
        oc.init_normal(&mut rng_from_seed(1), 0.01);
        let x = OctFeature::new(
            Tensor5::full([1, 8, 8, 8, 8], 1.0),
            Some(Tensor5::full([1, 8, 4, 4, 4], 1.0)),
        )
        .unwrap();
        let y = oc.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.high.shape(), [1, 8, 8, 8, 8]);
        assert_eq!(y.low.unwrap().shape(), [1, 8, 4, 4, 4]);
    }

    #[test]
    fn unit_ratios_reduce_to_plain_conv() {
        let mut oc = OctConv::<f64>::new(shape(2, 3, 1.0, 1.0)).unwrap();
        oc.init_normal(&mut rng_from_seed(3), 0.5);
        assert!(oc.hl.is_none() && oc.lh.is_none() && oc.ll.is_none());
        let x = Tensor5::from_vec(
            [1, 2, 4, 4, 4],
            (0..128).map(|i| (i as f64).sin()).collect(),
        )
        .unwrap();
        let y = oc
            .forward(&OctFeature::high_only(x.clone()), Mode::Eval)
            .unwrap();
        let hh = oc.hh.as_ref().unwrap();
        let plain = conv3d(
            &x,
            &hh.weight.value,
            &hh.bias.value,
            ConvGeometry::same3(2, 3),
        )
        .unwrap();
        assert_eq!(y.high, plain);
        assert!(y.low.is_none());
    }

    #[test]
    fn rejects_wrong_channels() {
        let mut oc = OctConv::<f64>::new(shape(4, 4, 0.5, 0.5)).unwrap();
        let x = OctFeature::high_only(Tensor5::zeros([1, 4, 4, 4, 4]));
        assert!(oc.forward(&x, Mode::Eval).is_err());
    }
}
