//! Online test-time adaptation under simultaneous covariate and label shift.
//!
//! The crate covers the full pipeline: synthetic and CSV-backed base data,
//! non-i.i.d. stream generation with replayable manifests, a small MLP whose
//! normalization layers keep gradient-preserving global statistics, a
//! category-balanced memory bank, teacher/student adaptation, graph-based
//! output refinement, and a harness running the method, its ablations and
//! simple baselines over a stream.

pub mod adaptation;
pub mod backbone;
pub mod error;
pub mod gprerbn;
pub mod harness;
pub mod memory_bank;
pub mod numerics;
pub mod output_adaptation;
pub mod streamgen;

pub use adaptation::{AdaptConfig, AdaptSession};
pub use backbone::{Mode, Model, ModelConfig};
pub use error::{Error, Result};
pub use harness::{Method, RunConfig, RunResult, Variant};
pub use memory_bank::MemoryBank;
pub use numerics::{Matrix, RandomSource};
pub use output_adaptation::{AffinityConfig, LambdaRule, RefineConfig, RefinementResult};
pub use streamgen::{BaseDataset, Stream, StreamBatch, StreamConfig};
