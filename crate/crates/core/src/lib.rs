//! Scale-adaptive encoder-decoder segmentation for whole-slide images.
//!
//! The crate bundles a small reverse-mode autodiff engine, the network
//! building blocks (plain and shortcut conv blocks, squeeze-excitation,
//! average and scale-adaptive multi-scale fusion), the encoder-decoder
//! model, cross-entropy / SSIM / MS-SSIM / IoU losses, pixel metrics with the
//! clipped-Jaccard WSI score, the tiling and stitching pipeline, and an
//! Adam-based trainer.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod segnet;
pub mod tensor;
pub mod trainer;

pub use autodiff::{Mode, ParamId, ParamStore, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{AnyTensor, DType, Real, Tensor};
pub use segnet::{Attention, Fusion, Model, NetworkConfig, SkipSet};
