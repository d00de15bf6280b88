//! Encoder-decoder segmentation network, its configuration and checkpoints.

mod checkpoint;
mod config;
mod model;

pub use checkpoint::{read_config, write_config, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Attention, Fusion, NetworkConfig, SkipSet};
pub use model::{ForwardOutput, Model};
