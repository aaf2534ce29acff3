//! The coarse, fine and guided fusion networks and their building blocks.

pub mod base;
pub mod checkpoint;
pub mod config;
pub mod fusion;
pub mod g2l;
pub mod layers;

pub use base::{base_forward, init_base_params, BaseOutput};
pub use checkpoint::{Checkpoint, NetKind, RngState};
pub use config::ModelConfig;
pub use fusion::{
    fb, fusion_forward, fusion_forward_with_g2l, g2l_pyramid, init_fusion_params, normalize_depth, roi,
    roi_tensor, FusionInputs, FusionOutput,
};
pub use g2l::{attention_block, g2l_forward, g2l_forward_with, init_g2l_params};
