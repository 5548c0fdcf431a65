//! Polyp segmentation toolkit: backbone networks, the TriUNet composite,
//! single-channel Dice training, ensemble fusion and evaluation.

pub mod backbones;
pub mod checkpoint;
pub mod ensemble;
mod error;
pub mod loss;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod synthgen;
pub mod triunet;

pub use error::{Error, Result};
