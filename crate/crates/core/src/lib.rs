//! Audio-visual deepfake detection from cross-modal emotion and modality
//! embeddings: a small reverse-mode autodiff engine, MFCC front end,
//! embedding networks, Siamese trainer, scorer and synthetic harness.

pub mod autodiff;
pub mod config;
pub mod error;
pub mod features;
pub mod harness;
pub mod model;
pub mod networks;
pub mod par;
pub mod scorer;
pub mod trainer;

pub use error::{Error, Result};
