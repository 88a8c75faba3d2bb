//! Dense tensor primitives with hand-derived backward passes.
//!
//! Every op is a pure forward function plus a backward function that maps an
//! upstream gradient to gradients of its inputs. The [`crate::autograd::Tape`]
//! strings these together; they are also usable on their own.

mod activation;
pub mod conv;
pub(crate) mod gemm;
mod linear;
mod normalize;
mod pool;
mod spatial;

pub use activation::{
    dropout, dropout_backward, relu, relu_backward, softmax_channels, softmax_channels_backward, Dropped,
};
pub use conv::{conv2d, conv2d_backward, output_len, ConvGeom, ConvSpec};
pub use linear::{linear, linear_backward};
pub use normalize::{l2_normalize_pixels, l2_normalize_pixels_backward};
pub use pool::{maxpool, maxpool_backward, Pooled};
pub use spatial::{
    concat_backward, concat_channels, crop, crop_backward, upsample_bilinear,
    upsample_bilinear_backward, Window,
};
