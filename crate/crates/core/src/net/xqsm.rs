//! The xQSM network: an octave-convolution U-net with a noise layer in front
//! and a residual connection from input to output.
//!
//! ```text
//! noise ─┬─ oct1 ─ oct2 ─┬─ pool ─ oct3 ─ oct4 ─┬─ pool ─ oct5 ─ oct6 ─ up1 ─┐
//!        │               │                      └──────────── concat ───────┘
//!        │               │          ┌── oct8 ─ oct7 ──────────────────────┘
//!        │               └─ concat ─┴─ up2
//!        │                  └─ oct9 ─ oct10 ─ final 1³ ─ (+) ─ output
//!        └──────────────────────────────────────────────────┘
//! ```
//!
//! Every octave layer and both upsampling layers are followed by batch norm
//! and ReLU. Feature widths are `w`, `2w`, `4w` at the three resolutions.

use std::path::Path;

use super::feature::OctFeature;
use super::noise::{
    check_noise_settings, noise_layer, NoiseDraw, DEFAULT_NOISE_PROBABILITY, DEFAULT_SNR_LIST,
};
use super::octconv::{OctConv, OctShape};
use crate::config::{join_list, KeyValues};
use crate::error::{ensure, Error, Result};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::param::join_name;
use crate::nn::{
    max_pool3d, max_pool3d_backward, relu, relu_backward, BatchNorm3d, Conv3d, ConvGeometry,
    HasParams, Mode, Param, Scalar, Tensor5,
};
use crate::seed::{rng_from_seed, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    /// Channels at full resolution; doubled at each coarser level.
    pub width: usize,
    /// High-group ratio of the middle octave layers.
    pub alpha: f64,
    pub noise_probability: f64,
    pub snr_list: Vec<f64>,
    /// Input dims must be multiples of this.
    pub divisor: usize,
    /// ppb represented by one network unit; inputs and labels are divided by
    /// it before they reach the network.
    pub value_scale: f64,
    /// Standard deviation of the normal weight and bias initialization.
    pub init_std: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            width: 32,
            alpha: 0.5,
            noise_probability: DEFAULT_NOISE_PROBABILITY,
            snr_list: DEFAULT_SNR_LIST.to_vec(),
            divisor: 8,
            value_scale: 100.0,
            init_std: 0.01,
        }
    }
}

impl NetworkConfig {
    /// Widths 8/16/32.
    pub fn desk() -> Self {
        Self {
            width: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.width >= 2 && self.width.is_multiple_of(2),
            Config,
            "width must be even and at least 2, got {}",
            self.width
        );
        ensure!(
            self.alpha > 0.0 && self.alpha < 1.0,
            Config,
            "alpha must lie strictly between 0 and 1, got {}",
            self.alpha
        );
        ensure!(
            self.divisor >= 8 && self.divisor.is_multiple_of(8),
            Config,
            "divisor must be a positive multiple of 8, got {}",
            self.divisor
        );
        ensure!(
            self.value_scale.is_finite() && self.value_scale > 0.0,
            Config,
            "value_scale must be positive, got {}",
            self.value_scale
        );
        ensure!(
            self.init_std.is_finite() && self.init_std >= 0.0,
            Config,
            "init_std must be nonnegative, got {}",
            self.init_std
        );
        check_noise_settings(self.noise_probability, &self.snr_list)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("width", self.width);
        kv.set("alpha", self.alpha);
        kv.set("noise_probability", self.noise_probability);
        kv.set("snr_list", join_list(&self.snr_list));
        kv.set("divisor", self.divisor);
        kv.set("value_scale", self.value_scale);
        kv.set("init_std", self.init_std);
        kv
    }

    /// Starts from the defaults and overrides every key present.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut c = Self::default();
        if let Some(v) = kv.get("width")? {
            c.width = v;
        }
        if let Some(v) = kv.get("alpha")? {
            c.alpha = v;
        }
        if let Some(v) = kv.get("noise_probability")? {
            c.noise_probability = v;
        }
        if let Some(v) = kv.get_list("snr_list")? {
            c.snr_list = v;
        }
        if let Some(v) = kv.get("divisor")? {
            c.divisor = v;
        }
        if let Some(v) = kv.get("value_scale")? {
            c.value_scale = v;
        }
        if let Some(v) = kv.get("init_std")? {
            c.init_std = v;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Batch norm per branch followed by ReLU.
#[derive(Clone, Debug)]
struct OctNormRelu<T> {
    high: BatchNorm3d<T>,
    low: Option<BatchNorm3d<T>>,
    out: Option<OctFeature<T>>,
}

impl<T: Scalar> OctNormRelu<T> {
    fn new(high: usize, low: usize) -> Self {
        Self {
            high: BatchNorm3d::new(high),
            low: (low > 0).then(|| BatchNorm3d::new(low)),
            out: None,
        }
    }

    fn forward(&mut self, x: &OctFeature<T>, mode: Mode) -> Result<OctFeature<T>> {
        let high = relu(&self.high.forward(&x.high, mode)?);
        let low = match (&mut self.low, &x.low) {
            (Some(bn), Some(l)) => Some(relu(&bn.forward(l, mode)?)),
            (None, None) => None,
            _ => return Err(Error::Shape("batch norm branch mismatch".into())),
        };
        let y = OctFeature { high, low };
        self.out = (mode == Mode::Train).then(|| y.clone());
        Ok(y)
    }

    fn backward(&mut self, g: &OctFeature<T>) -> Result<OctFeature<T>> {
        let out = self
            .out
            .take()
            .ok_or_else(|| Error::InvalidArgument("backward without forward".into()))?;
        // the ReLU output is positive exactly where its input was
        let high = self.high.backward(&relu_backward(&out.high, &g.high)?)?;
        let low = match (&mut self.low, &out.low, &g.low) {
            (Some(bn), Some(o), Some(gl)) => Some(bn.backward(&relu_backward(o, gl)?)?),
            _ => None,
        };
        Ok(OctFeature { high, low })
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.high.visit_params(&join_name(prefix, "bn_high"), f);
        if let Some(l) = &mut self.low {
            l.visit_params(&join_name(prefix, "bn_low"), f);
        }
    }
}

#[derive(Clone, Debug)]
struct OctBlock<T> {
    conv: OctConv<T>,
    norm: OctNormRelu<T>,
}

/// Transposed convolution on each branch, then batch norm and ReLU.
#[derive(Clone, Debug)]
struct UpBlock<T> {
    high: Conv3d<T>,
    low: Option<Conv3d<T>>,
    norm: OctNormRelu<T>,
}

type PoolCache = ([usize; 5], Vec<usize>);

#[derive(Clone, Debug)]
enum Node<T> {
    Noise,
    /// Remembers the current feature in a slot for a later skip connection.
    Save(usize),
    Oct(String, Box<OctBlock<T>>),
    MaxPool(Option<(PoolCache, Option<PoolCache>)>),
    Up(String, Box<UpBlock<T>>),
    /// Concatenates the slot's feature after the current one. Records the
    /// current feature's group sizes for the backward split.
    Concat(usize, Option<(usize, usize)>),
    Final(Box<Conv3d<T>>),
    /// Adds the slot's high branch to the output.
    Residual(usize),
}

/// Layer categories counted by [`Network::audit`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LayerAudit {
    pub octconv: usize,
    pub max_pool: usize,
    /// Upsampling transposed convolutions of the expanding path; the ones
    /// inside octave layers are not counted.
    pub transposed_conv: usize,
    pub batch_norm: usize,
    pub final_conv: usize,
    pub noise: usize,
}

#[derive(Clone, Debug)]
pub struct Network<T> {
    pub config: NetworkConfig,
    nodes: Vec<Node<T>>,
    slots: usize,
    last_noise: Option<NoiseDraw>,
}

/// Builds the network with weights and biases drawn from
/// `Normal(0, config.init_std)` using `seed`.
pub fn build_xqsm<T: Scalar>(config: &NetworkConfig, seed: u64) -> Result<Network<T>> {
    config.validate()?;
    let (w1, w2, w3) = (config.width, 2 * config.width, 4 * config.width);
    let a = config.alpha;
    let oct = |name: &str, in_ch, out_ch, alpha_in, alpha_out| -> Result<Node<T>> {
        let shape = OctShape {
            in_ch,
            out_ch,
            alpha_in,
            alpha_out,
        };
        Ok(Node::Oct(
            name.to_string(),
            Box::new(OctBlock {
                conv: OctConv::new(shape)?,
                norm: OctNormRelu::new(shape.out_high(), shape.out_low()),
            }),
        ))
    };
    let up = |name: &str, in_ch: usize, out_ch: usize| -> Node<T> {
        let s = OctShape {
            in_ch,
            out_ch,
            alpha_in: a,
            alpha_out: a,
        };
        Node::Up(
            name.to_string(),
            Box::new(UpBlock {
                high: Conv3d::transposed(s.in_high(), s.out_high()),
                low: (s.in_low() > 0).then(|| Conv3d::transposed(s.in_low(), s.out_low())),
                norm: OctNormRelu::new(s.out_high(), s.out_low()),
            }),
        )
    };
    let nodes = vec![
        Node::Noise,
        Node::Save(0),
        oct("oct1", 1, w1, 1.0, a)?,
        oct("oct2", w1, w1, a, a)?,
        Node::Save(1),
        Node::MaxPool(None),
        oct("oct3", w1, w2, a, a)?,
        oct("oct4", w2, w2, a, a)?,
        Node::Save(2),
        Node::MaxPool(None),
        oct("oct5", w2, w3, a, a)?,
        oct("oct6", w3, w3, a, a)?,
        up("up1", w3, w2),
        Node::Concat(2, None),
        oct("oct7", 2 * w2, w2, a, a)?,
        oct("oct8", w2, w2, a, a)?,
        up("up2", w2, w1),
        Node::Concat(1, None),
        oct("oct9", 2 * w1, w1, a, a)?,
        oct("oct10", w1, w1, a, 1.0)?,
        Node::Final(Box::new(Conv3d::new(ConvGeometry::pointwise(w1, 1)))),
        Node::Residual(0),
    ];
    let mut net = Network {
        config: config.clone(),
        nodes,
        slots: 3,
        last_noise: None,
    };
    let mut rng = rng_from_seed(seed);
    net.init_normal(&mut rng, config.init_std);
    Ok(net)
}

fn take_cache<C>(c: &mut Option<C>) -> Result<C> {
    c.take()
        .ok_or_else(|| Error::InvalidArgument("backward without a training-mode forward".into()))
}

fn accumulate<T: Scalar>(slot: &mut Option<OctFeature<T>>, g: OctFeature<T>) -> Result<()> {
    *slot = Some(match slot.take() {
        Some(a) => a.add(&g)?,
        None => g,
    });
    Ok(())
}

impl<T: Scalar> Network<T> {
    /// Draws every convolution weight and bias from `Normal(0, std)` in
    /// layer order. Batch-norm gains are 1 and shifts 0.
    pub fn init_normal(&mut self, rng: &mut Rng, std: f64) {
        for node in &mut self.nodes {
            match node {
                Node::Oct(_, b) => b.conv.init_normal(rng, std),
                Node::Up(_, b) => {
                    b.high.init_normal(rng, std);
                    if let Some(l) = &mut b.low {
                        l.init_normal(rng, std);
                    }
                }
                Node::Final(c) => c.init_normal(rng, std),
                _ => {}
            }
        }
    }

    /// Sets every convolution weight and bias to zero, which makes the
    /// network the identity map through its residual connection.
    pub fn zero_convolutions(&mut self) {
        self.visit_params("", &mut |name, p| {
            if name.ends_with(".weight") || name.ends_with(".bias") {
                p.value.iter_mut().for_each(|v| *v = T::zero());
            }
        });
    }

    pub fn audit(&self) -> LayerAudit {
        let mut a = LayerAudit::default();
        for node in &self.nodes {
            match node {
                Node::Noise => a.noise += 1,
                Node::Oct(..) => {
                    a.octconv += 1;
                    a.batch_norm += 1;
                }
                Node::MaxPool(_) => a.max_pool += 1,
                Node::Up(..) => {
                    a.transposed_conv += 1;
                    a.batch_norm += 1;
                }
                Node::Final(_) => a.final_conv += 1,
                _ => {}
            }
        }
        a
    }

    /// Octave layers in graph order.
    pub fn octconvs(&self) -> impl Iterator<Item = &OctConv<T>> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Oct(_, b) => Some(&b.conv),
            _ => None,
        })
    }

    /// What the noise layer did during the most recent training forward.
    pub fn last_noise(&self) -> Option<NoiseDraw> {
        self.last_noise
    }

    pub fn check_input(&self, x: &Tensor5<T>) -> Result<()> {
        ensure!(
            x.channels() == 1,
            Shape,
            "network input must have one channel, got {}",
            x.channels()
        );
        let m = self.config.divisor;
        ensure!(
            x.spatial().iter().all(|&d| d > 0 && d % m == 0),
            Shape,
            "input dims {:?} must be positive multiples of {m}",
            x.spatial()
        );
        ensure!(
            x.all_finite(),
            NonFinite,
            "network input has non-finite values"
        );
        Ok(())
    }

    /// Runs the network. In training mode activations are cached for
    /// [`Network::backward`], batch statistics are used, and the noise layer
    /// is applied when `noise_rng` is given.
    pub fn forward(
        &mut self,
        x: &Tensor5<T>,
        mode: Mode,
        mut noise_rng: Option<&mut Rng>,
    ) -> Result<Tensor5<T>> {
        self.check_input(x)?;
        let mut slots: Vec<Option<OctFeature<T>>> = vec![None; self.slots];
        let mut cur = OctFeature::high_only(x.clone());
        let (p, snrs) = (self.config.noise_probability, self.config.snr_list.clone());
        self.last_noise = None;
        for (idx, node) in self.nodes.iter_mut().enumerate() {
            let label = match node {
                Node::Noise => {
                    if let (Mode::Train, Some(rng)) = (mode, noise_rng.as_deref_mut()) {
                        let (y, draw) = noise_layer(&cur.high, rng, p, &snrs)?;
                        self.last_noise = Some(draw);
                        cur = OctFeature::high_only(y);
                    }
                    "noise"
                }
                Node::Save(s) => {
                    slots[*s] = Some(cur.clone());
                    continue;
                }
                Node::Oct(name, b) => {
                    let y = b.conv.forward(&cur, mode)?;
                    cur = b.norm.forward(&y, mode)?;
                    name.as_str()
                }
                Node::MaxPool(cache) => {
                    let (high, ah) = max_pool3d(&cur.high)?;
                    let (low, al) = match &cur.low {
                        Some(l) => {
                            let (y, a) = max_pool3d(l)?;
                            (Some(y), Some((l.shape(), a)))
                        }
                        None => (None, None),
                    };
                    *cache = (mode == Mode::Train).then(|| ((cur.high.shape(), ah), al));
                    cur = OctFeature::new(high, low)?;
                    "max-pool"
                }
                Node::Up(name, b) => {
                    let high = b.high.forward(&cur.high, mode)?;
                    let low = match (&mut b.low, &cur.low) {
                        (Some(c), Some(l)) => Some(c.forward(l, mode)?),
                        _ => None,
                    };
                    cur = b.norm.forward(&OctFeature::new(high, low)?, mode)?;
                    name.as_str()
                }
                Node::Concat(s, split) => {
                    let skip = slots[*s]
                        .as_ref()
                        .expect("slot filled earlier in the graph");
                    *split = Some((cur.high_channels(), cur.low_channels()));
                    cur = cur.concat(skip)?;
                    "concat"
                }
                Node::Final(c) => {
                    cur = OctFeature::high_only(c.forward(&cur.high, mode)?);
                    "final"
                }
                Node::Residual(s) => {
                    let input = slots[*s]
                        .as_ref()
                        .expect("slot filled earlier in the graph");
                    cur = cur.add(input)?;
                    "residual"
                }
            };
            ensure!(
                cur.all_finite(),
                NonFinite,
                "non-finite activation after layer {idx} ({label})"
            );
        }
        Ok(cur.high)
    }

    /// Back-propagates `grad_out` through the last training-mode forward,
    /// accumulating parameter gradients. Returns the gradient with respect
    /// to the network input (after the noise layer).
    pub fn backward(&mut self, grad_out: &Tensor5<T>) -> Result<Tensor5<T>> {
        let mut slot_grads: Vec<Option<OctFeature<T>>> = vec![None; self.slots];
        let mut g = OctFeature::high_only(grad_out.clone());
        for node in self.nodes.iter_mut().rev() {
            match node {
                Node::Noise => {}
                Node::Save(s) => {
                    if let Some(extra) = slot_grads[*s].take() {
                        g = g.add(&extra)?;
                    }
                }
                Node::Oct(_, b) => {
                    let gy = b.norm.backward(&g)?;
                    g = b.conv.backward(&gy)?;
                }
                Node::MaxPool(cache) => {
                    let ((hs, ah), low) = take_cache(cache)?;
                    let high = max_pool3d_backward(hs, &ah, &g.high)?;
                    let low = match (low, &g.low) {
                        (Some((ls, al)), Some(gl)) => Some(max_pool3d_backward(ls, &al, gl)?),
                        _ => None,
                    };
                    g = OctFeature::new(high, low)?;
                }
                Node::Up(_, b) => {
                    let gy = b.norm.backward(&g)?;
                    let high = b.high.backward(&gy.high)?;
                    let low = match (&mut b.low, &gy.low) {
                        (Some(c), Some(gl)) => Some(c.backward(gl)?),
                        _ => None,
                    };
                    g = OctFeature::new(high, low)?;
                }
                Node::Concat(s, split) => {
                    let (h, l) = take_cache(split)?;
                    let (mine, skip) = g.split(h, l)?;
                    accumulate(&mut slot_grads[*s], skip)?;
                    g = mine;
                }
                Node::Final(c) => {
                    g = OctFeature::high_only(c.backward(&g.high)?);
                }
                Node::Residual(s) => accumulate(&mut slot_grads[*s], g.clone())?,
            }
        }
        Ok(g.high)
    }

    pub fn to_checkpoint(&mut self) -> Checkpoint {
        let meta = self.config.to_key_values();
        Checkpoint::capture(meta, self)
    }

    /// Rebuilds the network described by the checkpoint's metadata and loads
    /// its parameters.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = NetworkConfig::from_key_values(&ck.meta)?;
        let mut net = build_xqsm(&config, 0)?;
        ck.restore(&mut net)?;
        Ok(net)
    }

    pub fn save(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}

impl<T: Scalar> HasParams<T> for Network<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for node in &mut self.nodes {
            match node {
                Node::Oct(name, b) => {
                    let p = join_name(prefix, name);
                    b.conv.visit_params(&p, f);
                    b.norm.visit(&p, f);
                }
                Node::Up(name, b) => {
                    let p = join_name(prefix, name);
                    b.high.visit_params(&join_name(&p, "high"), f);
                    if let Some(l) = &mut b.low {
                        l.visit_params(&join_name(&p, "low"), f);
                    }
                    b.norm.visit(&p, f);
                }
                Node::Final(c) => c.visit_params(&join_name(prefix, "final"), f),
                _ => {}
            }
        }
    }
}
