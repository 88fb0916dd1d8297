//! Multi-view correlation analysis of learned speech representations.
//!
//! The crate trains (deep) generalized canonical correlation analysis across
//! several views of the same utterances and turns the resulting per-utterance
//! cross-view agreement into the phonetic-syntax ratio (PSR). Supporting
//! pieces: a log-Mel frontend for the acoustic view, softmax layer
//! aggregation for multi-layer feature stacks, and Levenshtein-based
//! linguistic distances.

pub mod dgcca;
pub mod error;
pub mod feature_io;
pub mod gcca;
pub mod layer_agg;
pub mod lingdist;
pub mod mel;
pub mod psr;
pub mod synthetic;

pub use error::{Error, Result};

/// Toolkit version reported by the CLI and stamped into reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
