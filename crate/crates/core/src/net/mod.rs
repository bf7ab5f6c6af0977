//! Octave convolution, the noise layer, and the assembled xQSM network.

pub mod feature;
pub mod noise;
pub mod octconv;
pub mod xqsm;

pub use feature::{high_channels, OctFeature};
pub use noise::{noise_layer, NoiseDraw, DEFAULT_NOISE_PROBABILITY, DEFAULT_SNR_LIST};
pub use octconv::{OctConv, OctShape};
pub use xqsm::{build_xqsm, LayerAudit, Network, NetworkConfig};
