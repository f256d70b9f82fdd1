//! Heart-rate estimation from wrist PPG and 3-axis accelerometer signals.
//!
//! Dilated temporal-convolution extractors turn each modality into a short
//! sequence of embeddings; multi-head cross-attention (PPG queries,
//! accelerometer keys/values) fuses them and a small dense head regresses
//! BPM. Everything is implemented on a minimal f32 tensor core with
//! hand-written backward rules.

pub mod autodiff;
pub mod cli;
pub mod error;
pub mod fsutil;
pub mod harness;
pub mod model;
pub mod preprocess;
pub mod selftest;
pub mod tensorcore;
pub mod training;

pub use error::{PulseError, Result};
