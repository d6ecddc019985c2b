//! Prime/probe material selection and tri-gram stimulus generation.
//!
//! Tokens play the role of syllables: two A and two B tokens build the four
//! unique priming tri-grams of a pattern, four A and four B tokens (disjoint
//! from the primes) build the sixteen probes of each pattern.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StimulusRng;

/// Number of tri-grams in every priming sequence.
pub const SEQUENCE_LEN: usize = 16;
/// Rendered priming sequence length: three tokens plus a separator per tri-gram.
pub const RENDERED_LEN: usize = SEQUENCE_LEN * 4;
pub const PRIME_TOKENS_PER_ROLE: usize = 2;
pub const PROBE_TOKENS_PER_ROLE: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Token {
    pub id: u32,
    pub surface: String,
}

impl Token {
    pub fn new(id: u32, surface: impl Into<String>) -> Result<Self> {
        let surface = surface.into();
        if surface.is_empty() {
            return Err(Error::Config(format!("token {id} has an empty surface")));
        }
        Ok(Token { id, surface })
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.surface)
    }
}

/// A scorer's token inventory plus the ids that may never be drawn as
/// stimulus material (special tokens, the separator, user denylist).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    index: HashMap<u32, usize>,
    excluded: BTreeSet<u32>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<Token>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.surface.is_empty() {
                return Err(Error::Config(format!(
                    "token {} has an empty surface",
                    t.id
                )));
            }
            if index.insert(t.id, i).is_some() {
                return Err(Error::Config(format!("duplicate token id {}", t.id)));
            }
        }
        Ok(Vocabulary {
            tokens,
            index,
            excluded: BTreeSet::new(),
        })
    }

    /// `size` tokens: id 0 is the separator `"."`, ids `1..size` are `w1`,
    /// `w2`, ... The separator is already excluded.
    pub fn synthetic(size: usize) -> Result<(Self, Token)> {
        if size < 2 {
            return Err(Error::Config(format!(
                "synthetic vocabulary needs at least 2 tokens, got {size}"
            )));
        }
        let tokens = (0..size as u32)
            .map(|id| Token {
                id,
                surface: if id == 0 {
                    ".".to_string()
                } else {
                    format!("w{id}")
                },
            })
            .collect();
        let mut vocab = Vocabulary::new(tokens)?;
        let sep = vocab.tokens[0].clone();
        vocab.exclude(sep.id)?;
        Ok((vocab, sep))
    }

    pub fn exclude(&mut self, id: u32) -> Result<()> {
        if !self.index.contains_key(&id) {
            return Err(Error::Config(format!(
                "cannot exclude unknown token id {id}"
            )));
        }
        self.excluded.insert(id);
        Ok(())
    }

    /// Excludes every token whose surface appears in `denylist`.
    pub fn exclude_surfaces<S: AsRef<str>>(&mut self, denylist: &[S]) {
        let deny: HashSet<&str> = denylist.iter().map(|s| s.as_ref()).collect();
        for t in &self.tokens {
            if deny.contains(t.surface.as_str()) {
                self.excluded.insert(t.id);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn excluded(&self) -> &BTreeSet<u32> {
        &self.excluded
    }

    pub fn is_excluded(&self, id: u32) -> bool {
        self.excluded.contains(&id)
    }

    pub fn get(&self, id: u32) -> Option<&Token> {
        self.index.get(&id).map(|&i| &self.tokens[i])
    }

    pub fn contains(&self, id: u32) -> bool {
        self.index.contains_key(&id)
    }

    pub fn find_surface(&self, surface: &str) -> Option<&Token> {
        self.tokens.iter().find(|t| t.surface == surface)
    }

    /// Eligible tokens in vocabulary order.
    pub fn eligible(&self) -> Vec<&Token> {
        self.tokens
            .iter()
            .filter(|t| !self.excluded.contains(&t.id))
            .collect()
    }

    pub fn eligible_count(&self) -> usize {
        self.tokens.len() - self.excluded.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pattern {
    AAB,
    ABA,
    ABB,
    ABC,
}

impl Pattern {
    pub const ALL: [Pattern; 4] = [Pattern::AAB, Pattern::ABA, Pattern::ABB, Pattern::ABC];
    pub const SAMENESS: [Pattern; 3] = [Pattern::AAB, Pattern::ABA, Pattern::ABB];

    pub fn label(self) -> &'static str {
        match self {
            Pattern::AAB => "AAB",
            Pattern::ABA => "ABA",
            Pattern::ABB => "ABB",
            Pattern::ABC => "ABC",
        }
    }

    pub fn is_sameness(self) -> bool {
        self != Pattern::ABC
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Pattern of a concrete id triple; `None` for `xxx`, which fits no pattern.
    pub fn of<T: PartialEq>(t1: &T, t2: &T, t3: &T) -> Option<Pattern> {
        match (t1 == t2, t1 == t3, t2 == t3) {
            (true, false, false) => Some(Pattern::AAB),
            (false, true, false) => Some(Pattern::ABA),
            (false, false, true) => Some(Pattern::ABB),
            (false, false, false) => Some(Pattern::ABC),
            _ => None,
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "AAB" => Ok(Pattern::AAB),
            "ABA" => Ok(Pattern::ABA),
            "ABB" => Ok(Pattern::ABB),
            "ABC" => Ok(Pattern::ABC),
            other => Err(Error::Config(format!("unknown pattern {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TriGram {
    pub tokens: [Token; 3],
    pub pattern: Pattern,
}

impl TriGram {
    /// Builds a tri-gram, checking that the tokens actually realise `pattern`.
    pub fn new(t1: Token, t2: Token, t3: Token, pattern: Pattern) -> Result<Self> {
        let actual = Pattern::of(&t1.id, &t2.id, &t3.id);
        if actual != Some(pattern) {
            return Err(Error::Config(format!(
                "tri-gram ({} {} {}) does not match pattern {pattern}",
                t1.id, t2.id, t3.id
            )));
        }
        Ok(TriGram {
            tokens: [t1, t2, t3],
            pattern,
        })
    }

    pub fn ids(&self) -> [u32; 3] {
        [self.tokens[0].id, self.tokens[1].id, self.tokens[2].id]
    }

    pub fn is_valid(&self) -> bool {
        Pattern::of(&self.tokens[0].id, &self.tokens[1].id, &self.tokens[2].id)
            == Some(self.pattern)
    }
}

impl fmt::Display for TriGram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {}",
            self.tokens[0], self.tokens[1], self.tokens[2]
        )
    }
}

fn instantiate(a: &Token, b: &Token, pattern: Pattern) -> Result<TriGram> {
    let (t1, t2, t3) = match pattern {
        Pattern::AAB => (a, a, b),
        Pattern::ABA => (a, b, a),
        Pattern::ABB => (a, b, b),
        Pattern::ABC => return Err(Error::InvalidPrimePattern(pattern)),
    };
    TriGram::new(t1.clone(), t2.clone(), t3.clone(), pattern)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimeMaterial {
    pub a_tokens: [Token; PRIME_TOKENS_PER_ROLE],
    pub b_tokens: [Token; PRIME_TOKENS_PER_ROLE],
}

impl PrimeMaterial {
    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.a_tokens.iter().chain(&self.b_tokens).map(|t| t.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeMaterial {
    pub a_tokens: [Token; PROBE_TOKENS_PER_ROLE],
    pub b_tokens: [Token; PROBE_TOKENS_PER_ROLE],
}

impl ProbeMaterial {
    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.a_tokens.iter().chain(&self.b_tokens).map(|t| t.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimingSequence {
    pub pattern: Pattern,
    pub trigrams: Vec<TriGram>,
    /// Seed of the shuffle that produced this order.
    pub seed_trace: u64,
}

impl PrimingSequence {
    pub fn token_ids(&self) -> BTreeSet<u32> {
        self.trigrams.iter().flat_map(|t| t.ids()).collect()
    }

    pub fn distinct_trigrams(&self) -> usize {
        self.trigrams.iter().collect::<HashSet<_>>().len()
    }
}

fn draw_eligible(
    vocab: &Vocabulary,
    rng: &mut StimulusRng,
    avoid: &HashSet<u32>,
    count: usize,
) -> Result<Vec<Token>> {
    let pool: Vec<&Token> = vocab
        .eligible()
        .into_iter()
        .filter(|t| !avoid.contains(&t.id))
        .collect();
    let drawn = rng.sample(&pool, count).ok_or(Error::InsufficientTokens {
        needed: count,
        available: pool.len(),
    })?;
    Ok(drawn.into_iter().cloned().collect())
}

/// Draws 2 A and 2 B prime tokens without replacement. A/B roles follow
/// draw order: the first two draws are A.
pub fn select_prime_material(vocab: &Vocabulary, rng: &mut StimulusRng) -> Result<PrimeMaterial> {
    select_prime_material_avoiding(vocab, rng, &HashSet::new())
}

/// Like [`select_prime_material`], additionally skipping `avoid` (used when
/// the probes are fixed in advance).
pub fn select_prime_material_avoiding(
    vocab: &Vocabulary,
    rng: &mut StimulusRng,
    avoid: &HashSet<u32>,
) -> Result<PrimeMaterial> {
    let mut drawn = draw_eligible(vocab, rng, avoid, 2 * PRIME_TOKENS_PER_ROLE)?.into_iter();
    let mut next = || drawn.next().expect("drawn exactly four tokens");
    Ok(PrimeMaterial {
        a_tokens: [next(), next()],
        b_tokens: [next(), next()],
    })
}

pub fn select_probe_material(
    vocab: &Vocabulary,
    rng: &mut StimulusRng,
    exclude: &PrimeMaterial,
) -> Result<ProbeMaterial> {
    let avoid: HashSet<u32> = exclude.ids().collect();
    select_probe_material_avoiding(vocab, rng, &avoid)
}

pub fn select_probe_material_avoiding(
    vocab: &Vocabulary,
    rng: &mut StimulusRng,
    avoid: &HashSet<u32>,
) -> Result<ProbeMaterial> {
    let drawn = draw_eligible(vocab, rng, avoid, 2 * PROBE_TOKENS_PER_ROLE)?;
    let (a, b) = drawn.split_at(PROBE_TOKENS_PER_ROLE);
    Ok(ProbeMaterial {
        a_tokens: a.to_vec().try_into().expect("four A tokens"),
        b_tokens: b.to_vec().try_into().expect("four B tokens"),
    })
}

/// The four unique priming tri-grams, A-major order (`a1 b1`, `a1 b2`, ...).
pub fn generate_prime_trigrams(material: &PrimeMaterial, pattern: Pattern) -> Result<Vec<TriGram>> {
    if !pattern.is_sameness() {
        return Err(Error::InvalidPrimePattern(pattern));
    }
    let mut out = Vec::with_capacity(4);
    for a in &material.a_tokens {
        for b in &material.b_tokens {
            out.push(instantiate(a, b, pattern)?);
        }
    }
    Ok(out)
}

/// The sixteen probes of one pattern. For ABC the third slot is drawn
/// uniformly from the other three A tokens, one probe per (A, B) pair.
pub fn generate_probe_trigrams(
    material: &ProbeMaterial,
    pattern: Pattern,
    rng: &mut StimulusRng,
) -> Vec<TriGram> {
    let mut out = Vec::with_capacity(PROBE_TOKENS_PER_ROLE * PROBE_TOKENS_PER_ROLE);
    for (i, a) in material.a_tokens.iter().enumerate() {
        for b in &material.b_tokens {
            let tri = match pattern {
                Pattern::ABC => {
                    let mut k = rng.below(PROBE_TOKENS_PER_ROLE - 1);
                    if k >= i {
                        k += 1;
                    }
                    let c = &material.a_tokens[k];
                    TriGram::new(a.clone(), b.clone(), c.clone(), Pattern::ABC)
                }
                p => instantiate(a, b, p),
            };
            out.push(tri.expect("material tokens are pairwise distinct"));
        }
    }
    out
}

/// Expands `trigrams` `repetitions` times and shuffles the result.
///
/// Random-material sequences are 4 unique tri-grams x 4, seen-material
/// sequences 16 unique tri-grams x 1. The input tri-grams must be pairwise
/// distinct and share one sameness pattern.
pub fn build_priming_sequence(
    trigrams: &[TriGram],
    repetitions: usize,
    seed: u64,
) -> Result<PrimingSequence> {
    if trigrams.len() * repetitions != SEQUENCE_LEN {
        return Err(Error::Config(format!(
            "{} tri-grams x {repetitions} repetitions != {SEQUENCE_LEN}",
            trigrams.len()
        )));
    }
    let pattern = trigrams[0].pattern;
    if !pattern.is_sameness() {
        return Err(Error::InvalidPrimePattern(pattern));
    }
    if let Some(bad) = trigrams
        .iter()
        .find(|t| t.pattern != pattern || !t.is_valid())
    {
        return Err(Error::Config(format!(
            "tri-gram '{bad}' does not match sequence pattern {pattern}"
        )));
    }
    if trigrams.iter().collect::<HashSet<_>>().len() != trigrams.len() {
        return Err(Error::Config("priming tri-grams must be distinct".into()));
    }

    let mut expanded: Vec<TriGram> = Vec::with_capacity(SEQUENCE_LEN);
    for _ in 0..repetitions {
        expanded.extend_from_slice(trigrams);
    }
    StimulusRng::from_seed(seed).shuffle(&mut expanded);
    Ok(PrimingSequence {
        pattern,
        trigrams: expanded,
        seed_trace: seed,
    })
}

/// Tokens of each tri-gram followed by `separator`, including after the
/// last one, so a probe appended to the result always follows a separator.
pub fn render_sequence(seq: &PrimingSequence, separator: &Token) -> Vec<Token> {
    let mut out = Vec::with_capacity(seq.trigrams.len() * 4);
    for tri in &seq.trigrams {
        out.extend(tri.tokens.iter().cloned());
        out.push(separator.clone());
    }
    out
}

pub fn render_ids(seq: &PrimingSequence, separator: &Token) -> Vec<u32> {
    render_sequence(seq, separator)
        .iter()
        .map(|t| t.id)
        .collect()
}

/// One line of the plain-text stimulus dump: rendered surfaces, space separated.
pub fn text_line(seq: &PrimingSequence, separator: &Token) -> String {
    render_sequence(seq, separator)
        .iter()
        .map(|t| t.surface.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

pub const STIMULUS_SCHEMA: &str = "asr-stimulus/1";

/// Structured stimulus dump record (one JSON object per line).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusRecord {
    pub schema: String,
    pub pattern: Pattern,
    pub seed: u64,
    pub token_ids: Vec<u32>,
    pub trigram_patterns: Vec<Pattern>,
}

impl StimulusRecord {
    pub fn new(seq: &PrimingSequence, separator: &Token) -> Self {
        StimulusRecord {
            schema: STIMULUS_SCHEMA.to_string(),
            pattern: seq.pattern,
            seed: seq.seed_trace,
            token_ids: render_ids(seq, separator),
            trigram_patterns: seq.trigrams.iter().map(|t| t.pattern).collect(),
        }
    }
}
