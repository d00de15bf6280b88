//! Patch grids, stitching, fold splits, augmentation, synthetic data and
//! dataset directories.

pub mod augment;
pub mod dataset;
pub mod folds;
pub mod grid;
pub mod synth;

pub use augment::{augment, AugmentConfig, Geometric, Jitter};
pub use dataset::{Dataset, Manifest, ManifestEntry, Sample};
pub use folds::{kfold_split, FoldAssignment};
pub use grid::{extract, make_grid, stitch, stitch_with, Aggregation, TileGrid};
pub use synth::{synth_generate, synth_sample, SynthSample};
