//! Scoring contract and probe surprisal.
//!
//! A scorer answers "log2 probability of `target` given `context`". The
//! surprisal of a probe tri-gram after a primed context is
//! `S = -log2 P(t2 | primes, t1) - log2 P(t3 | primes, t1, t2)`; the first
//! position is scored and kept but does not enter `S`.

mod builtin;
pub mod external;
pub mod protocol;

pub use builtin::{PatternOracle, UniformScorer, UnigramScorer, DEFAULT_ECHO_WEIGHT};
pub use external::{ClientOptions, Endpoint, ExternalScorer};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ScoreError};
use crate::stimulus::{Pattern, TriGram};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoreRequest<'a> {
    pub context: &'a [u32],
    pub target: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    Uniform,
    Unigram,
    PatternOracle,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VocabularySource {
    Internal,
    FetchedFromScorer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerDescriptor {
    pub name: String,
    pub kind: ScorerKind,
    pub vocabulary_source: VocabularySource,
}

/// Metadata reported by an external scorer at handshake time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandshakeInfo {
    pub proto: u32,
    pub model: String,
    pub vocab_size: usize,
}

pub trait Scorer: Send + Sync {
    fn descriptor(&self) -> ScorerDescriptor;

    /// `log2 P(target | context)`, finite and `<= 0`.
    fn score(&self, request: ScoreRequest<'_>) -> Result<f64, ScoreError>;

    fn handshake(&self) -> Option<HandshakeInfo> {
        None
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn descriptor(&self) -> ScorerDescriptor {
        (**self).descriptor()
    }
    fn score(&self, request: ScoreRequest<'_>) -> Result<f64, ScoreError> {
        (**self).score(request)
    }
    fn handshake(&self) -> Option<HandshakeInfo> {
        (**self).handshake()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub prime_pattern: Pattern,
    pub probe_pattern: Pattern,
    pub probe: TriGram,
    /// Recorded for completeness; not part of `surprisal`.
    pub log2_p_t1: f64,
    pub log2_p_t2: f64,
    pub log2_p_t3: f64,
    /// Bits.
    pub surprisal: f64,
}

impl Measurement {
    pub fn new(
        prime_pattern: Pattern,
        probe: TriGram,
        log2_p_t1: f64,
        log2_p_t2: f64,
        log2_p_t3: f64,
    ) -> Self {
        Measurement {
            prime_pattern,
            probe_pattern: probe.pattern,
            probe,
            log2_p_t1,
            log2_p_t2,
            log2_p_t3,
            // 0.0 - x keeps a perfect prediction at +0.0 instead of -0.0
            surprisal: 0.0 - (log2_p_t2 + log2_p_t3),
        }
    }
}

fn checked(value: f64) -> Result<f64, ScoreError> {
    if value.is_finite() && value <= 0.0 {
        Ok(value)
    } else {
        Err(ScoreError::InvalidValue(value))
    }
}

/// Scores `probe` after `primes` with three calls, one per probe position.
///
/// `primes` must be a rendered priming sequence ending in `separator`.
pub fn surprisal<S: Scorer + ?Sized>(
    scorer: &S,
    primes: &[u32],
    separator: u32,
    prime_pattern: Pattern,
    probe: &TriGram,
) -> Result<Measurement> {
    if primes.last() != Some(&separator) {
        return Err(Error::Config(
            "rendered primes must be non-empty and end with the separator".into(),
        ));
    }
    let ids = probe.ids();
    let mut context = Vec::with_capacity(primes.len() + 2);
    context.extend_from_slice(primes);
    let mut logs = [0.0f64; 3];
    for (pos, &target) in ids.iter().enumerate() {
        let lp = scorer.score(ScoreRequest {
            context: &context,
            target,
        })?;
        logs[pos] = checked(lp)?;
        context.push(target);
    }
    Ok(Measurement::new(
        prime_pattern,
        probe.clone(),
        logs[0],
        logs[1],
        logs[2],
    ))
}
