//! Music-conditioned dance generation: skeleton and audio handling, the
//! generator and its discriminators, losses, training and cross-modal
//! evaluation.

pub mod audio;
pub mod checkpoint;
pub mod config;
pub mod crossmodal;
pub mod dataset;
pub mod discriminators;
pub mod error;
pub mod generator;
pub mod losses;
pub mod nn;
pub mod perceptual;
pub mod render;
pub mod skeleton;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
