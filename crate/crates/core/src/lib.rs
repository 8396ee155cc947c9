//! Streaming test-time adaptation for vision-language classifiers, operating
//! on precomputed embeddings.
//!
//! The engine combines a frozen zero-shot classifier ([`zeroshot`]), a gated
//! attention adapter trained online on confident pseudo-labeled test samples
//! ([`adapter`]) and a negative key-value cache ([`negcache`]). [`pipeline`]
//! drives them over a test stream; [`featurestore`] defines the file formats.

pub mod adapter;
pub mod cli;
pub mod error;
pub mod featurestore;
pub mod negcache;
pub mod numerics;
pub mod pipeline;
pub mod zeroshot;

pub use error::{Result, TaeaError};
pub use numerics::Matrix;
pub use pipeline::{run_stream, RunReport, TtaConfig};
