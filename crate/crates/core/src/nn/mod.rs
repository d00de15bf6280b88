//! Network layers and building blocks.

pub mod blocks;
pub mod layers;

pub use blocks::{avg_fuse, BlockConfig, BlockKind, ConvBlock, Safs, SafsState, SafsWeights, SeBlock};
pub use layers::{BatchNorm2d, Conv2d, Ctx, Linear};
