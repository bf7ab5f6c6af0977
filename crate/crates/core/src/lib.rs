//! Quantitative susceptibility mapping with octave-convolution networks.
//!
//! The crate covers the dipole forward model, synthetic label generation,
//! a small deterministic 3D network engine, the xQSM network, dataset
//! construction, training, inference and evaluation metrics.

#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod datapipe;
pub mod dipole;
pub mod error;
mod fft;
pub mod gradcheck;
pub mod metrics;
pub mod net;
pub mod nn;
pub mod phantom;
pub mod seed;
pub mod train;
pub mod volgrid;

pub use dipole::{dipole_kernel, forward_field, tkd_invert, KernelGrid};
pub use error::{Error, Result};
pub use metrics::MetricReport;
pub use net::{build_xqsm, Network, NetworkConfig};
pub use phantom::{random_shapes, scale_chi, shepp_logan, LabeledPhantom, ShapeConfig, ShapeKind};
pub use train::{infer_full, infer_patches, train, TrainConfig};
pub use volgrid::{
    crop_with_record, pad_to_multiple, read_volume, write_volume, Dims, PadRecord, Unit, Volume,
};
