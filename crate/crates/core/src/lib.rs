//! Multi-scale convolutional networks for dense per-pixel prediction of
//! depth, surface normals and semantic labels.
//!
//! Everything is double precision and CPU-only. Gradients are computed by a
//! small reverse-mode tape ([`autograd::Tape`]) over hand-derived backward
//! passes in [`ops`].

pub mod augment;
pub mod config;
pub mod autograd;
pub mod data;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod losses;
pub mod maps;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use maps::{DepthMap, Grid, LabelMap, NormalMap, ValidMask};
pub use tensor::Tensor;
