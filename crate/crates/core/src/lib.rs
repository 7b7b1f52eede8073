//! Scalable eigenvector CSI feedback.
//!
//! A single shared transformer encoder/decoder core is wrapped by swappable
//! per-antenna-count adapters (`LPT-p` / `LT-p`) and per-payload
//! down/up-sampling branches (`DS-k` / `US-k`) carrying an embedded 2-bit
//! scalar quantizer. One model serves every `(N_t, k)` configuration and
//! every MIMO layer.

pub mod alloc;
pub mod channel;
pub mod config;
pub mod dataset;
pub mod error;
pub mod etype2;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod report;
pub mod train;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
