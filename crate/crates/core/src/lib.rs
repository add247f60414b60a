//! Online log template mining.
//!
//! Lines are tokenized and routed into buckets by token count. Each bucket
//! keeps a frequency map and an evolutionary grouping tree whose static paths
//! are the discovered templates; dynamic leaves hold the unresolved columns
//! as run-length encoded rows.

pub mod benchgen;
pub mod cli;
pub mod convergence;
pub mod egt;
pub mod engine;
pub mod error;
pub mod evolution;
pub mod freqmap;
pub mod ingest;
pub mod interner;
pub mod metrics;

pub use error::{KelpError, Result};
