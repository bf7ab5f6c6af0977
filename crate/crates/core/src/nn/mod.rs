//! A small deterministic 3D tensor engine with explicit forward/backward
//! passes for every layer used by the xQSM network.

pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod norm;
pub mod ops;
pub mod param;
pub mod pool;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use checkpoint::Checkpoint;
pub use conv::{
    conv3d, conv3d_backward, conv_transpose3d, conv_transpose3d_backward, Conv3d, ConvGeometry,
    ConvKind, Mode,
};
pub use norm::BatchNorm3d;
pub use ops::{add, concat_channels, l2_loss, relu, relu_backward, split_channels};
pub use param::{HasParams, Param};
pub use pool::{avg_pool3d, avg_pool3d_backward, max_pool3d, max_pool3d_backward};
pub use tensor::{Scalar, Tensor5};
