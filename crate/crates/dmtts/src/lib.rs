//! Dialectal mixture-of-experts text-to-speech-token modeling, from corpus
//! synthesis through training, RL post-training, and streaming inference.
//!
//! The crate is organized bottom-up:
//!
//! - [`seeds`], [`provenance`], [`error`]: deterministic seed derivation,
//!   artifact provenance stamps, and the shared error type.
//! - [`numerics`]: dense f64 tensors, the math kernels used by training,
//!   and a finite-difference gradient checker.
//! - [`corpus`]: vocabulary layout, dialect transduction with an exact
//!   inverse, corpus generation, WER and speaker-similarity metrics.
//! - [`model`]: the decoder-only transformer with grouped-query attention,
//!   per-layer dialect cross-attention, and a dialectal mixture of experts.
//! - [`train`]: Adam and the staged supervised pipeline.
//! - [`rlpost`]: hierarchical reinforcement post-training.
//! - [`serve`]: the streaming engine with a paged KV cache, tiled
//!   attention, int8 weight quantization, benchmarking, and WAV rendering.
//! - [`eval`]: the evaluation harness and system comparison reports.
//!
//! Runnable walkthroughs live in `examples/`; the `dmtts` binary exposes
//! the same functionality as subcommands.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod provenance;
pub mod rlpost;
pub mod seeds;
pub mod serve;
pub mod train;

pub use error::{Error, Result};
