//! Detached multimodal training.
//!
//! Each modality's encoder is trained with its own objective: a unimodal
//! cross-entropy, a cross-entropy through a classifier shared by all
//! modalities, and a contrastive term that pulls the modality's weak
//! feature dimensions toward the partner modality's strong ones with the
//! partner side held fixed. A fusion head is then trained over frozen
//! features, and predictions are combined per sample by softmax certainty.

pub mod checkpoint;
pub mod config;
mod container;
pub mod dimsep;
mod error;
pub mod experiment;
pub mod inference;
pub mod losses;
pub mod models;
pub mod numerics;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::Tensor;
