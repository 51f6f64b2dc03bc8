//! The full enhancement network and its ablation variants.

mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{config_from_meta, Container};
pub use config::{ModelConfig, Variant};
pub use forward::{
    build_forward, forward, forward_segments, forward_with, majority_class, BoundParams, ForwardOptions,
    ForwardOutput, ForwardVars,
};
pub use params::{count_params, ModelParams};
