//! Network description, instantiation and forward passes.

mod config;
mod input;
mod net;

pub use config::{
    parse_size, ConvLayer, EntryConv, Head, Layout, Modality, ModelConfig, ModelSpec, ParamShape, PlanRow, Plane,
    Preset, ScaleSet, Task,
};
pub use input::{extract_window, plane_targets, resample_to_input, Inputs, PlaneTargets};
pub use net::{build_model, Depth, Mode, Model, Param, Recorded};
