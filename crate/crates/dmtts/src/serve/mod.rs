//! Streaming synthesis: paged KV caching, int8 weight quantization, an
//! offline full-recompute reference, benchmarking, and audio rendering.
//!
//! The [`engine::Engine`] serves any number of concurrent sessions from one
//! immutable weight set; the page pool behind a mutex is the only shared
//! mutable state. Float precision reproduces the training-path logits to
//! near machine accuracy; Int8 swaps every linear projection for
//! per-channel-scaled int8 rows. [`offline::offline_decode`] is the
//! deliberately slow baseline the bench compares against, and
//! [`wav::render_wav`] turns token streams into audible RIFF files.

pub mod bench;
pub mod engine;
pub mod kv_cache;
pub mod offline;
pub mod quant;
pub mod wav;

pub use bench::{
    bench, bench_with_precision, build_workload, BenchConfig, BenchQuality, BenchReport,
    BenchTimings, PathQuality, SessionRecord, WorkloadItem, TOKENS_PER_SECOND,
};
pub use engine::{Engine, Precision, Session, SessionStatus, StepOutcome};
pub use kv_cache::{pages_for, Page, PagePool, PlaneCache, PoolConfig};
pub use offline::{offline_decode, OfflineResult};
pub use quant::{quantize_tensor, quantize_weights, Int8Matrix, MatRepr, QuantLayer, QuantParams};
pub use wav::{render_wav, wav_bytes, write_wav, SAMPLE_RATE, SAMPLES_PER_TOKEN};
