//! Corpus tri-gram statistics and positional PMI ranking of "seen"
//! sameness tri-grams.
//!
//! Every stride-1 window of three tokens inside a document counts once
//! towards the positional token counts. Windows whose tokens form an
//! AAB/ABA/ABB pattern (and contain no excluded token) are also counted as
//! tri-grams. The PMI of a stored tri-gram is
//!
//! ```text
//! pmi = log2( N^2 * C(xyz) / (C1(x) * C2(y) * C3(z)) )
//! ```
//!
//! with `N` the number of tokens scanned and `Ci` the count of a token at
//! window position `i`.

use std::collections::{HashMap, HashSet};
use std::io::{self, BufRead, Read, Write};
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StimulusRng;
use crate::stimulus::{Pattern, TriGram, Vocabulary, SEQUENCE_LEN};

pub const DEFAULT_MIN_COUNT: u64 = 20;
pub const DEFAULT_TOP_K: usize = 32;
pub const RANKING_SCHEMA: &str = "asr-pmi-ranking/1";

pub type TrigramKey = [u32; 3];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub n_tokens: u64,
    pub n_windows: u64,
    pub trigram_counts: HashMap<TrigramKey, u64>,
    pub pos_counts: [HashMap<u32, u64>; 3],
}

impl CorpusStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn scan_document(&mut self, doc: &[u32], excluded: &HashSet<u32>) {
        self.n_tokens += doc.len() as u64;
        for w in doc.windows(3) {
            self.n_windows += 1;
            for (pos, &t) in w.iter().enumerate() {
                *self.pos_counts[pos].entry(t).or_insert(0) += 1;
            }
            let sameness = matches!(Pattern::of(&w[0], &w[1], &w[2]), Some(p) if p.is_sameness());
            if sameness && !w.iter().any(|t| excluded.contains(t)) {
                *self.trigram_counts.entry([w[0], w[1], w[2]]).or_insert(0) += 1;
            }
        }
    }

    /// Adds `other` into `self`. Commutative and associative.
    pub fn merge(&mut self, other: CorpusStats) {
        self.n_tokens += other.n_tokens;
        self.n_windows += other.n_windows;
        for (k, c) in other.trigram_counts {
            *self.trigram_counts.entry(k).or_insert(0) += c;
        }
        for (mine, theirs) in self.pos_counts.iter_mut().zip(other.pos_counts) {
            for (t, c) in theirs {
                *mine.entry(t).or_insert(0) += c;
            }
        }
    }

    pub fn count(&self, key: &TrigramKey) -> u64 {
        self.trigram_counts.get(key).copied().unwrap_or(0)
    }

    pub fn pos_count(&self, pos: usize, token: u32) -> u64 {
        self.pos_counts[pos].get(&token).copied().unwrap_or(0)
    }
}

/// Single-threaded scan of a document sequence.
pub fn scan_corpus<I, D>(docs: I, excluded: &HashSet<u32>) -> CorpusStats
where
    I: IntoIterator<Item = D>,
    D: AsRef<[u32]>,
{
    let mut stats = CorpusStats::new();
    for doc in docs {
        stats.scan_document(doc.as_ref(), excluded);
    }
    stats
}

/// Splits `docs` into `shards` contiguous shards, scans them in parallel and
/// merges the results.
pub fn scan_sharded<D: AsRef<[u32]> + Sync>(
    docs: &[D],
    shards: usize,
    excluded: &HashSet<u32>,
) -> CorpusStats {
    let shards = shards.max(1);
    let chunk = docs.len().div_ceil(shards).max(1);
    docs.par_chunks(chunk)
        .map(|part| scan_corpus(part, excluded))
        .reduce(CorpusStats::new, |mut a, b| {
            a.merge(b);
            a
        })
}

/// Streams documents from `source` in batches, scanning each batch in
/// parallel. Stops after `max_tokens` tokens, truncating the last document.
pub fn scan_stream<I>(
    source: I,
    excluded: &HashSet<u32>,
    batch_docs: usize,
    max_tokens: Option<u64>,
) -> Result<CorpusStats>
where
    I: IntoIterator<Item = Result<Vec<u32>>>,
{
    let mut stats = CorpusStats::new();
    let mut batch: Vec<Vec<u32>> = Vec::with_capacity(batch_docs);
    let mut taken: u64 = 0;
    let flush = |stats: &mut CorpusStats, batch: &mut Vec<Vec<u32>>| {
        let shards = rayon::current_num_threads();
        stats.merge(scan_sharded(batch, shards, excluded));
        batch.clear();
    };
    for doc in source {
        let mut doc = doc?;
        if let Some(limit) = max_tokens {
            let room = limit.saturating_sub(taken);
            if room == 0 {
                break;
            }
            doc.truncate(room.min(doc.len() as u64) as usize);
        }
        taken += doc.len() as u64;
        batch.push(doc);
        if batch.len() >= batch_docs.max(1) {
            flush(&mut stats, &mut batch);
        }
    }
    if !batch.is_empty() {
        flush(&mut stats, &mut batch);
    }
    Ok(stats)
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// PMI of `key` in `stats`.
///
/// The count ratio is reduced as an exact integer fraction before taking
/// logs, so scaling every count by the same factor leaves the value
/// bit-identical.
pub fn compute_pmi(key: &TrigramKey, stats: &CorpusStats) -> Result<f64> {
    let c = stats.count(key);
    let pos = [
        stats.pos_count(0, key[0]),
        stats.pos_count(1, key[1]),
        stats.pos_count(2, key[2]),
    ];
    if c == 0 || stats.n_tokens == 0 || pos.contains(&0) {
        return Err(Error::UndefinedPmi(*key));
    }
    let n = stats.n_tokens as u128;
    let exact = n.checked_mul(n).and_then(|v| v.checked_mul(c as u128)).zip(
        (pos[0] as u128)
            .checked_mul(pos[1] as u128)
            .and_then(|v| v.checked_mul(pos[2] as u128)),
    );
    Ok(match exact {
        Some((num, den)) => {
            let g = gcd(num, den);
            ((num / g) as f64).log2() - ((den / g) as f64).log2()
        }
        None => {
            2.0 * (stats.n_tokens as f64).log2() + (c as f64).log2()
                - pos.iter().map(|&p| (p as f64).log2()).sum::<f64>()
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmiEntry {
    pub ids: TrigramKey,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surfaces: Option<[String; 3]>,
    pub count: u64,
    pub pmi: f64,
}

impl PmiEntry {
    pub fn trigram(&self, vocab: &Vocabulary) -> Result<TriGram> {
        let tok = |id: u32| {
            vocab
                .get(id)
                .cloned()
                .ok_or_else(|| Error::Config(format!("ranked token id {id} not in vocabulary")))
        };
        let pattern = Pattern::of(&self.ids[0], &self.ids[1], &self.ids[2]).ok_or_else(|| {
            Error::Config(format!("ranked tri-gram {:?} has no pattern", self.ids))
        })?;
        TriGram::new(
            tok(self.ids[0])?,
            tok(self.ids[1])?,
            tok(self.ids[2])?,
            pattern,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmiRanking {
    pub schema: String,
    pub corpus_id: String,
    pub pattern: Pattern,
    pub min_count: u64,
    pub k: usize,
    pub n_tokens: u64,
    pub entries: Vec<PmiEntry>,
}

impl PmiRanking {
    pub fn is_short(&self) -> bool {
        self.entries.len() < self.k
    }

    pub fn attach_surfaces(&mut self, vocab: &Vocabulary) {
        for e in &mut self.entries {
            let s = |id: u32| vocab.get(id).map(|t| t.surface.clone());
            if let (Some(a), Some(b), Some(c)) = (s(e.ids[0]), s(e.ids[1]), s(e.ids[2])) {
                e.surfaces = Some([a, b, c]);
            }
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("ranking serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let schema = value.get("schema").and_then(|s| s.as_str()).unwrap_or("");
        if schema != RANKING_SCHEMA {
            return Err(Error::Schema {
                expected: RANKING_SCHEMA.into(),
                found: schema.into(),
            });
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Top `k` tri-grams of `pattern` with at least `min_count` occurrences,
/// ordered by PMI descending, then count descending, then token ids.
pub fn rank_top(
    stats: &CorpusStats,
    pattern: Pattern,
    min_count: u64,
    k: usize,
    corpus_id: &str,
) -> Result<PmiRanking> {
    if !pattern.is_sameness() {
        return Err(Error::Config(format!(
            "only sameness patterns are ranked, got {pattern}"
        )));
    }
    let mut entries = Vec::new();
    for (key, &count) in &stats.trigram_counts {
        if count < min_count || Pattern::of(&key[0], &key[1], &key[2]) != Some(pattern) {
            continue;
        }
        entries.push(PmiEntry {
            ids: *key,
            surfaces: None,
            count,
            pmi: compute_pmi(key, stats)?,
        });
    }
    entries.sort_by(|a, b| {
        b.pmi
            .total_cmp(&a.pmi)
            .then(b.count.cmp(&a.count))
            .then(a.ids.cmp(&b.ids))
    });
    entries.truncate(k);
    let ranking = PmiRanking {
        schema: RANKING_SCHEMA.to_string(),
        corpus_id: corpus_id.to_string(),
        pattern,
        min_count,
        k,
        n_tokens: stats.n_tokens,
        entries,
    };
    if ranking.is_short() {
        warn!(
            "{pattern} ranking for {corpus_id} has {} of {k} entries (min count {min_count})",
            ranking.entries.len()
        );
    }
    Ok(ranking)
}

/// Seen tri-grams for one pattern, split into prime and probe lists.
#[derive(Debug, Clone, PartialEq)]
pub struct SeenMaterial {
    pub primes: Vec<PmiEntry>,
    pub probes: Vec<PmiEntry>,
}

/// With `both_seen`, shuffles the top 32 entries and splits them 16/16 into
/// disjoint prime and probe lists. Otherwise both lists are the top 16
/// entries (a single-seen setting only uses one of them).
pub fn select_seen_material(
    ranking: &PmiRanking,
    both_seen: bool,
    rng: &mut StimulusRng,
) -> Result<SeenMaterial> {
    let needed = if both_seen {
        2 * SEQUENCE_LEN
    } else {
        SEQUENCE_LEN
    };
    if ranking.entries.len() < needed {
        return Err(Error::InsufficientRanking {
            pattern: ranking.pattern,
            needed,
            available: ranking.entries.len(),
        });
    }
    if both_seen {
        let mut top = ranking.entries[..needed].to_vec();
        rng.shuffle(&mut top);
        let probes = top.split_off(SEQUENCE_LEN);
        Ok(SeenMaterial {
            primes: top,
            probes,
        })
    } else {
        let top = ranking.entries[..SEQUENCE_LEN].to_vec();
        Ok(SeenMaterial {
            primes: top.clone(),
            probes: top,
        })
    }
}

/// Line-oriented corpus: one document per line, whitespace-separated ids.
pub struct IdsTextReader<R> {
    inner: R,
    line: String,
    lineno: usize,
}

impl<R: BufRead> IdsTextReader<R> {
    pub fn new(inner: R) -> Self {
        IdsTextReader {
            inner,
            line: String::new(),
            lineno: 0,
        }
    }
}

impl<R: BufRead> Iterator for IdsTextReader<R> {
    type Item = Result<Vec<u32>>;

    fn next(&mut self) -> Option<Self::Item> {
        self.line.clear();
        match self.inner.read_line(&mut self.line) {
            Ok(0) => None,
            Ok(_) => {
                self.lineno += 1;
                let lineno = self.lineno;
                Some(
                    self.line
                        .split_whitespace()
                        .map(|t| {
                            t.parse::<u32>().map_err(|_| {
                                Error::Parse(format!("line {lineno}: bad token id {t:?}"))
                            })
                        })
                        .collect(),
                )
            }
            Err(e) => Some(Err(e.into())),
        }
    }
}

/// Length-prefixed binary corpus: per document a little-endian `u32` length
/// followed by that many little-endian `u32` ids.
pub struct IdsBinaryReader<R> {
    inner: R,
}

impl<R: Read> IdsBinaryReader<R> {
    pub fn new(inner: R) -> Self {
        IdsBinaryReader { inner }
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<Option<u32>> {
    let mut buf = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut buf[filled..])? {
            0 if filled == 0 => return Ok(None),
            0 => {
                return Err(io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    "truncated u32",
                ))
            }
            n => filled += n,
        }
    }
    Ok(Some(u32::from_le_bytes(buf)))
}

impl<R: Read> Iterator for IdsBinaryReader<R> {
    type Item = Result<Vec<u32>>;

    fn next(&mut self) -> Option<Self::Item> {
        let len = match read_u32(&mut self.inner) {
            Ok(None) => return None,
            Ok(Some(n)) => n as usize,
            Err(e) => return Some(Err(e.into())),
        };
        let mut doc = Vec::with_capacity(len.min(1 << 20));
        for _ in 0..len {
            match read_u32(&mut self.inner) {
                Ok(Some(id)) => doc.push(id),
                Ok(None) => return Some(Err(Error::Parse("truncated binary document".into()))),
                Err(e) => return Some(Err(e.into())),
            }
        }
        Some(Ok(doc))
    }
}

pub fn write_binary_document<W: Write>(w: &mut W, doc: &[u32]) -> io::Result<()> {
    w.write_all(&(doc.len() as u32).to_le_bytes())?;
    for id in doc {
        w.write_all(&id.to_le_bytes())?;
    }
    Ok(())
}
