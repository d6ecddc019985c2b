//! Seeded experiment harness that probes language-model scorers for abstract
//! sameness relations (AAB / ABA / ABB tri-gram repetition patterns).
//!
//! The pipeline is:
//!
//! - [`stimulus`] picks prime and probe tokens from a vocabulary and builds
//!   tri-grams and shuffled priming sequences.
//! - [`scorer`] defines the log-probability contract, built-in test scorers,
//!   a line-protocol client for external model sidecars, and probe surprisal.
//! - [`pmi`] streams tokenized corpora and ranks "seen" sameness tri-grams by
//!   positional pointwise mutual information.
//! - [`experiment`] runs the four prime/probe settings, aggregates mean
//!   surprisal tables and classifies them against the expected human pattern.
//! - [`cli`] wires it all together behind `mine-pmi`, `run` and `report`.

pub mod cli;
pub mod error;
pub mod experiment;
pub mod manifest;
pub mod pmi;
pub mod rng;
pub mod scorer;
pub mod stimulus;

pub use error::{Error, Result};
