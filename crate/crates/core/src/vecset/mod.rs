//! The hierarchical set-latent occupancy model and its building blocks.

pub mod baseline;
pub mod blocks;
pub mod bottleneck;
pub mod config;
pub mod cost;
pub mod embed;
pub mod fps;
pub mod model;

pub use blocks::{cross_attention, self_attention_stack, AttnBlock};
pub use bottleneck::{ftol, ltof, BottleneckParams};
pub use config::{LevelConfig, ModelConfig};
pub use cost::{attention_cost_account, config_cost, ConfigCost, CostReport};
pub use embed::positional_embed;
pub use fps::fps;
pub use model::{Encoded, HierarchicalModel, LatentHierarchy, LevelParams};
