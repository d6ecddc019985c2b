use thiserror::Error;

use crate::stimulus::Pattern;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised while scoring a single request.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("unknown token id {0}")]
    UnknownToken(u32),
    #[error("empty scoring context")]
    EmptyContext,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("scorer reported error: {0}")]
    Remote(String),
    #[error("scorer returned invalid log-probability {0}")]
    InvalidValue(f64),
}

impl ScoreError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ScoreError::Transport(_) | ScoreError::Timeout { .. })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("insufficient eligible tokens: need {needed}, have {available}")]
    InsufficientTokens { needed: usize, available: usize },
    #[error("pattern {0} cannot be used for priming")]
    InvalidPrimePattern(Pattern),
    #[error("ranking for {pattern} has {available} entries, need {needed}")]
    InsufficientRanking {
        pattern: Pattern,
        needed: usize,
        available: usize,
    },
    #[error("pmi undefined for tri-gram {0:?}: zero positional count")]
    UndefinedPmi([u32; 3]),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("cycle {cycle} of run {run} ({pattern} primes): {source}")]
    Cycle {
        run: u32,
        cycle: u32,
        pattern: Pattern,
        #[source]
        source: Box<Error>,
    },
    #[error("schema mismatch: expected {expected}, found {found}")]
    Schema { expected: String, found: String },
    #[error("malformed input: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
