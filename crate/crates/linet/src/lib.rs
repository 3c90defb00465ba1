//! Multi-channel time-series forecasting with sparse top-k softmax gating.
//!
//! The crate builds everything from a small dense-tensor kernel with exact
//! reverse-mode gradients: a gated encoder–decoder forecaster that compresses
//! the time and channel axes through learnable top-k softmax attention,
//! calendar/entity embeddings that steer the gates, AdamW training with early
//! stopping, dataset ingestion with chronological splits, and a batch
//! experiment runner with ablation variants.

pub mod checkpoint;
pub mod data;
pub mod embedding;
pub mod error;
pub mod experiment;
pub mod gate;
pub mod gradcheck;
pub mod model;
pub mod report;
pub mod scalar;
pub mod synthetic;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
