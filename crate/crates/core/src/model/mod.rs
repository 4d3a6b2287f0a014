//! The HC-Mamba network: configuration, parameter layout, blocks and the
//! full U-shaped forward pass.

mod block;
mod config;
mod net;
mod params;

pub use block::{BlockIds, ConvLayerIds};
pub use config::{ConvVariant, ModelConfig};
pub use net::{patch_merge_gather, HcMamba};
pub use params::{Init, ParamCount, ParamId, ParamLayout, ParamSpec};
