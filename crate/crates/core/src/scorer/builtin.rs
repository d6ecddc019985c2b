use std::collections::BTreeMap;

use super::{ScoreRequest, Scorer, ScorerDescriptor, ScorerKind, VocabularySource};
use crate::error::ScoreError;
use crate::stimulus::Pattern;

/// Same probability `1/V` for every token of a size-`V` vocabulary (ids `0..V`).
#[derive(Debug, Clone)]
pub struct UniformScorer {
    size: usize,
    log2_p: f64,
}

impl UniformScorer {
    pub fn new(size: usize) -> Self {
        assert!(size > 0, "empty vocabulary");
        UniformScorer {
            size,
            log2_p: -(size as f64).log2(),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }
}

fn check_ids(req: &ScoreRequest<'_>, size: usize) -> Result<(), ScoreError> {
    if req.context.is_empty() {
        return Err(ScoreError::EmptyContext);
    }
    if let Some(&bad) = req
        .context
        .iter()
        .chain(std::iter::once(&req.target))
        .find(|&&id| id as usize >= size)
    {
        return Err(ScoreError::UnknownToken(bad));
    }
    Ok(())
}

impl Scorer for UniformScorer {
    fn descriptor(&self) -> ScorerDescriptor {
        ScorerDescriptor {
            name: format!("uniform:{}", self.size),
            kind: ScorerKind::Uniform,
            vocabulary_source: VocabularySource::Internal,
        }
    }

    fn score(&self, request: ScoreRequest<'_>) -> Result<f64, ScoreError> {
        check_ids(&request, self.size)?;
        Ok(self.log2_p)
    }
}

/// Context-free scorer: `P(t) = count(t) / total`. Tokens with a zero
/// count are not part of its vocabulary.
#[derive(Debug, Clone)]
pub struct UnigramScorer {
    name: String,
    counts: BTreeMap<u32, u64>,
    total: u64,
}

impl UnigramScorer {
    pub fn new(name: impl Into<String>, counts: impl IntoIterator<Item = (u32, u64)>) -> Self {
        let mut map = BTreeMap::new();
        for (id, c) in counts {
            if c > 0 {
                *map.entry(id).or_insert(0) += c;
            }
        }
        let total = map.values().sum();
        UnigramScorer {
            name: name.into(),
            counts: map,
            total,
        }
    }

    pub fn counts(&self) -> &BTreeMap<u32, u64> {
        &self.counts
    }
}

impl Scorer for UnigramScorer {
    fn descriptor(&self) -> ScorerDescriptor {
        ScorerDescriptor {
            name: self.name.clone(),
            kind: ScorerKind::Unigram,
            vocabulary_source: VocabularySource::Internal,
        }
    }

    fn score(&self, request: ScoreRequest<'_>) -> Result<f64, ScoreError> {
        if request.context.is_empty() {
            return Err(ScoreError::EmptyContext);
        }
        if let Some(&bad) = request
            .context
            .iter()
            .find(|id| !self.counts.contains_key(id))
        {
            return Err(ScoreError::UnknownToken(bad));
        }
        let c = *self
            .counts
            .get(&request.target)
            .ok_or(ScoreError::UnknownToken(request.target))?;
        Ok((c as f64 / self.total as f64).log2())
    }
}

/// Weight multiplier given to tokens already present in the current probe
/// prefix when spreading leftover probability mass.
pub const DEFAULT_ECHO_WEIGHT: f64 = 2.0;

/// Scorer that behaves like an idealised sameness-relation learner.
///
/// It reads the context as separator-delimited tri-grams, takes the majority
/// sameness pattern of the complete ones and, if that pattern fixes the next
/// probe token (position 2 under AAB, position 3 under ABA/ABB), gives it
/// probability `alpha`. The remaining mass (all of it when nothing is
/// predicted) is spread over the other tokens, with tokens already seen in
/// the probe prefix weighted by `echo_weight`. An echo weight of 1 spreads
/// it uniformly.
#[derive(Debug, Clone)]
pub struct PatternOracle {
    alpha: f64,
    echo_weight: f64,
    size: usize,
    separator: u32,
}

impl PatternOracle {
    pub fn new(alpha: f64, size: usize, separator: u32) -> Self {
        assert!(alpha > 0.0 && alpha < 1.0, "alpha must be in (0, 1)");
        assert!(size >= 4, "vocabulary too small");
        assert!((separator as usize) < size, "separator outside vocabulary");
        PatternOracle {
            alpha,
            echo_weight: DEFAULT_ECHO_WEIGHT,
            size,
            separator,
        }
    }

    pub fn with_echo_weight(mut self, weight: f64) -> Self {
        assert!(weight > 0.0 && weight.is_finite());
        self.echo_weight = weight;
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Majority sameness pattern among the complete tri-grams of `context`
    /// (strict plurality), plus the trailing probe prefix.
    pub fn parse<'c>(&self, context: &'c [u32]) -> (Option<Pattern>, &'c [u32]) {
        let last_sep = context.iter().rposition(|&t| t == self.separator);
        let (body, prefix) = match last_sep {
            Some(i) => (&context[..i], &context[i + 1..]),
            None => (&context[..0], context),
        };
        let mut tally = [0usize; 3];
        for group in body.split(|&t| t == self.separator) {
            if let [a, b, c] = group {
                match Pattern::of(a, b, c) {
                    Some(p) if p.is_sameness() => tally[p.index()] += 1,
                    _ => {}
                }
            }
        }
        let best = *tally.iter().max().expect("three patterns");
        let majority = if best > 0 && tally.iter().filter(|&&n| n == best).count() == 1 {
            Pattern::SAMENESS
                .iter()
                .copied()
                .find(|p| tally[p.index()] == best)
        } else {
            None
        };
        (majority, prefix)
    }

    /// The token the primed pattern forces next, if any.
    pub fn predicted(&self, context: &[u32]) -> Option<u32> {
        let (pattern, prefix) = self.parse(context);
        forced(pattern, prefix)
    }

    fn probability(&self, context: &[u32], target: u32) -> f64 {
        let (pattern, prefix) = self.parse(context);
        let predicted = forced(pattern, prefix);
        if predicted == Some(target) {
            return self.alpha;
        }
        let residual = if predicted.is_some() {
            1.0 - self.alpha
        } else {
            1.0
        };
        let mut echoes: Vec<u32> = prefix
            .iter()
            .copied()
            .filter(|&t| Some(t) != predicted)
            .collect();
        echoes.sort_unstable();
        echoes.dedup();
        let candidates = self.size - usize::from(predicted.is_some());
        let denom = (candidates - echoes.len()) as f64 + self.echo_weight * echoes.len() as f64;
        let weight = if echoes.binary_search(&target).is_ok() {
            self.echo_weight
        } else {
            1.0
        };
        residual * weight / denom
    }
}

fn forced(pattern: Option<Pattern>, prefix: &[u32]) -> Option<u32> {
    match (pattern?, prefix) {
        (Pattern::AAB, [a]) => Some(*a),
        (Pattern::ABA, [a, _]) => Some(*a),
        (Pattern::ABB, [_, b]) => Some(*b),
        _ => None,
    }
}

impl Scorer for PatternOracle {
    fn descriptor(&self) -> ScorerDescriptor {
        ScorerDescriptor {
            name: format!("oracle:{}:{}", self.alpha, self.size),
            kind: ScorerKind::PatternOracle,
            vocabulary_source: VocabularySource::Internal,
        }
    }

    fn score(&self, request: ScoreRequest<'_>) -> Result<f64, ScoreError> {
        check_ids(&request, self.size)?;
        Ok(self.probability(request.context, request.target).log2())
    }
}
