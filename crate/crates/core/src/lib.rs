//! Semi-supervised segmentation with complementary foreground/background
//! decoders, bidirectional consistency, and entropy-bound verification.

pub mod ablation;
pub mod augment;
pub mod datasets;
pub mod error;
pub mod labels;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod plot;
pub mod raster;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
pub use raster::{LabelVolume, Raster};
