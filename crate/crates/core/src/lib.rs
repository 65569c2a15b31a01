//! Joint-context multi-view referring-expression grounding.
//!
//! Given per-view visual feature vectors for `m` candidate objects and a
//! token-embedding sequence for a referring expression, the grounding model
//! places every view of every object and every language token into one
//! transformer sequence, max-pools each object's contextualized view outputs
//! and scores the objects jointly.
//!
//! The crate is organized bottom-up:
//!
//! * [`nn`]: dense tensors, a reverse-mode tape, transformer building
//!   blocks, AdamW, the warmup schedule and finite-difference checking.
//! * [`model`]: sequence assembly, the encoder, pooling/scoring, losses and
//!   the context-ablation variants.
//! * [`data`]: annotation parsing, the MVGF feature-store format,
//!   augmentation masks, view subsampling, distractor extension, the
//!   synthetic relational reference game and batching.
//! * [`train`]: the training loop, checkpoints, evaluation, seed
//!   aggregation and Welch's t-test.

pub mod checks;
pub mod data;
pub mod error;
pub mod model;
pub mod nn;
pub mod report;
pub mod train;

pub use error::{Error, Result};

/// Environment variable that forces deterministic (order-invariant) reductions.
pub const DETERMINISTIC_ENV: &str = "MAGIC_GROUND_DETERMINISTIC";

/// Returns true when [`DETERMINISTIC_ENV`] is set to `1`.
pub fn deterministic_from_env() -> bool {
    std::env::var(DETERMINISTIC_ENV).map(|v| v.trim() == "1").unwrap_or(false)
}
