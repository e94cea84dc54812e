//! Siamese convolutional metric learning for drug-drug interaction
//! prediction from molecular structure images.
//!
//! A shared convolutional tower embeds each drug image; pairs are compared
//! with a pluggable distance and trained with a margin-based contrastive
//! loss. Interacting pairs are pushed apart, so a pair is predicted to
//! interact when its distance is at or above the selected threshold.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod network;
pub mod objective;
pub mod optim;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
