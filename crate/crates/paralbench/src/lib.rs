//! Benchmark harness for paralinguistic probing of acoustic encoders.
//!
//! The harness wires five stages into reproducible evaluation runs:
//!
//! 1. [`registry`] — task and label-space catalog (classification and
//!    regression targets, cross-corpus label mappings).
//! 2. [`corpus`] — sample manifests, deterministic splits, count
//!    verification, and synthetic corpus generation.
//! 3. [`features`] — pluggable feature extractors behind an on-disk cache,
//!    including deterministic synthetic extractors for testing.
//! 4. [`probe`] — the downstream model (projection + Transformer encoder +
//!    two-layer classifier), its losses, optimizer, and training loop.
//! 5. [`protocols`] — evaluation drivers (within-corpus, cross-corpus,
//!    layer sweep, fusion comparison, adapter-tuning comparison) writing
//!    append-only result records that [`report`] renders as leaderboards.
//!
//! Everything is single-threaded and deterministic: a run is a pure
//! function of its spec, the harness version, and the corpus bytes.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod features;
pub mod metrics;
pub mod nn;
pub mod probe;
pub mod protocols;
pub mod registry;
pub mod report;

pub use error::{HarnessError, Result};
