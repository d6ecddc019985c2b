//! Experiment orchestration: cycles, runs, result tables and verdicts.
//!
//! One cycle builds a single priming sequence for a prime pattern, renders
//! it once and scores every probe of every probe pattern in scope against
//! that same rendering. Cycle seeds come from [`cycle_seed`]:
//!
//! ```text
//! seed = u64_le(SHA-256("asr-cycle/v1" || 0x00 || master_le || run_le || cycle_le || pattern_le)[..8])
//! ```
//!
//! where all integers are `u64` and the pattern index is AAB=0, ABA=1, ABB=2.
//! Within a cycle, material draws use `StimulusRng::from_seed(seed)` and the
//! priming shuffle uses the seed derived with label `"asr-shuffle/v1"`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pmi::{select_seen_material, PmiRanking};
use crate::rng::{derive_seed, StimulusRng, RNG_VERSION};
use crate::scorer::{surprisal, Measurement, Scorer};
use crate::stimulus::{
    build_priming_sequence, generate_prime_trigrams, generate_probe_trigrams, render_ids,
    select_prime_material_avoiding, select_probe_material_avoiding, Pattern, PrimingSequence,
    Token, TriGram, Vocabulary, SEQUENCE_LEN,
};

pub const CYCLE_SEED_LABEL: &str = "asr-cycle/v1";
pub const SHUFFLE_SEED_LABEL: &str = "asr-shuffle/v1";
pub const SPLIT_SEED_LABEL: &str = "asr-seen-split/v1";
pub const RESULTS_SCHEMA: &str = "asr-results/1";
pub const REPORT_SCHEMA: &str = "asr-report/1";

/// Means closer than this are treated as tied by [`classify`].
pub const TIE_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_DROP_THRESHOLD: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Setting {
    RandomRandom,
    SeenRandom,
    RandomSeen,
    SeenSeen,
}

impl Setting {
    pub const ALL: [Setting; 4] = [
        Setting::RandomRandom,
        Setting::SeenRandom,
        Setting::RandomSeen,
        Setting::SeenSeen,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Setting::RandomRandom => "random-random",
            Setting::SeenRandom => "seen-random",
            Setting::RandomSeen => "random-seen",
            Setting::SeenSeen => "seen-seen",
        }
    }

    pub fn caption(self) -> &'static str {
        match self {
            Setting::RandomRandom => "Random Primes, Random Probes",
            Setting::SeenRandom => "Seen Primes, Random Probes",
            Setting::RandomSeen => "Random Primes, Seen Probes",
            Setting::SeenSeen => "Seen Primes, Seen Probes",
        }
    }

    pub fn seen_primes(self) -> bool {
        matches!(self, Setting::SeenRandom | Setting::SeenSeen)
    }

    pub fn seen_probes(self) -> bool {
        matches!(self, Setting::RandomSeen | Setting::SeenSeen)
    }

    pub fn uses_rankings(self) -> bool {
        self != Setting::RandomRandom
    }

    /// Probe columns: seen probes have no ABC column.
    pub fn probe_patterns(self) -> &'static [Pattern] {
        if self.seen_probes() {
            &Pattern::SAMENESS
        } else {
            &Pattern::ALL
        }
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Setting::ALL
            .into_iter()
            .find(|x| x.label() == s || x.label().replace('-', "/") == s)
            .ok_or_else(|| Error::Config(format!("unknown setting {s:?}")))
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub setting: Setting,
    pub probes_per_cycle: usize,
    pub cycles_per_run: usize,
    pub runs: usize,
    pub master_seed: u64,
    pub separator: Token,
    /// Largest tolerated fraction of dropped measurements.
    pub drop_threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            setting: Setting::RandomRandom,
            probes_per_cycle: 16,
            cycles_per_run: 256,
            runs: 3,
            master_seed: 0,
            separator: Token {
                id: 0,
                surface: ".".into(),
            },
            drop_threshold: DEFAULT_DROP_THRESHOLD,
        }
    }
}

impl ExperimentConfig {
    /// Measurements per priming-probing condition.
    pub fn measurements_per_condition(&self) -> u64 {
        (self.probes_per_cycle * self.cycles_per_run * self.runs) as u64
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=SEQUENCE_LEN).contains(&self.probes_per_cycle) {
            return Err(Error::Config(format!(
                "probes_per_cycle must be in 1..={SEQUENCE_LEN}, got {}",
                self.probes_per_cycle
            )));
        }
        if self.cycles_per_run == 0 || self.runs == 0 {
            return Err(Error::Config(
                "cycles_per_run and runs must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.drop_threshold) {
            return Err(Error::Config("drop_threshold must be within [0, 1]".into()));
        }
        Ok(())
    }
}

pub fn cycle_seed(master: u64, run: u32, cycle: u32, prime: Pattern) -> u64 {
    derive_seed(
        CYCLE_SEED_LABEL,
        master,
        &[run as u64, cycle as u64, prime.index() as u64],
    )
}

/// Seen tri-grams resolved against the vocabulary, per pattern.
#[derive(Debug, Clone, Default)]
pub struct SeenSets {
    pub primes: BTreeMap<Pattern, Vec<TriGram>>,
    pub probes: BTreeMap<Pattern, Vec<TriGram>>,
    pub split_seeds: BTreeMap<Pattern, u64>,
}

impl SeenSets {
    pub fn prepare(
        setting: Setting,
        rankings: &BTreeMap<Pattern, PmiRanking>,
        vocab: &Vocabulary,
        master_seed: u64,
    ) -> Result<Self> {
        let mut sets = SeenSets::default();
        if !setting.uses_rankings() {
            return Ok(sets);
        }
        let both = setting == Setting::SeenSeen;
        for p in Pattern::SAMENESS {
            let ranking = rankings
                .get(&p)
                .ok_or_else(|| Error::Config(format!("{setting} needs a {p} ranking")))?;
            if ranking.pattern != p {
                return Err(Error::Config(format!(
                    "ranking supplied for {p} is a {} ranking",
                    ranking.pattern
                )));
            }
            let seed = derive_seed(SPLIT_SEED_LABEL, master_seed, &[p.index() as u64]);
            let material = select_seen_material(ranking, both, &mut StimulusRng::from_seed(seed))?;
            let resolve = |entries: &[crate::pmi::PmiEntry]| {
                entries
                    .iter()
                    .map(|e| e.trigram(vocab))
                    .collect::<Result<Vec<_>>>()
            };
            if both {
                sets.split_seeds.insert(p, seed);
            }
            if setting.seen_primes() {
                sets.primes.insert(p, resolve(&material.primes)?);
            }
            if setting.seen_probes() {
                sets.probes.insert(p, resolve(&material.probes)?);
            }
        }
        Ok(sets)
    }

    fn probe_token_ids(&self) -> HashSet<u32> {
        self.probes
            .values()
            .flatten()
            .flat_map(|t| t.ids())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRecord {
    pub probe_pattern: Pattern,
    pub probe: [u32; 3],
    pub reason: String,
}

/// Everything produced by one cycle.
#[derive(Debug, Clone)]
pub struct CycleOutcome {
    pub run: u32,
    pub cycle: u32,
    pub prime_pattern: Pattern,
    pub seed: u64,
    pub sequence: PrimingSequence,
    pub rendered: Vec<u32>,
    pub probe_tokens: BTreeSet<u32>,
    pub measurements: Vec<Measurement>,
    pub drops: Vec<DropRecord>,
}

impl CycleOutcome {
    pub fn prime_tokens(&self) -> BTreeSet<u32> {
        self.sequence.token_ids()
    }

    pub fn is_disjoint(&self) -> bool {
        self.prime_tokens().is_disjoint(&self.probe_tokens)
    }
}

/// Runs one cycle. `vocab` must already exclude the separator.
pub fn run_cycle<S: Scorer + ?Sized>(
    config: &ExperimentConfig,
    scorer: &S,
    vocab: &Vocabulary,
    seen: &SeenSets,
    prime_pattern: Pattern,
    seed: u64,
) -> Result<CycleOutcome> {
    let mut rng = StimulusRng::from_seed(seed);
    let shuffle_seed = derive_seed(SHUFFLE_SEED_LABEL, seed, &[]);
    let setting = config.setting;

    let sequence = if setting.seen_primes() {
        let primes = seen
            .primes
            .get(&prime_pattern)
            .ok_or_else(|| Error::Config(format!("no seen primes for {prime_pattern}")))?;
        build_priming_sequence(primes, 1, shuffle_seed)?
    } else {
        let avoid = seen.probe_token_ids();
        let material = select_prime_material_avoiding(vocab, &mut rng, &avoid)?;
        let unique = generate_prime_trigrams(&material, prime_pattern)?;
        build_priming_sequence(&unique, SEQUENCE_LEN / unique.len(), shuffle_seed)?
    };
    let rendered = render_ids(&sequence, &config.separator);

    let probes: Vec<TriGram> = if setting.seen_probes() {
        let mut out = Vec::new();
        for q in setting.probe_patterns() {
            let list = seen
                .probes
                .get(q)
                .ok_or_else(|| Error::Config(format!("no seen probes for {q}")))?;
            out.extend(list.iter().take(config.probes_per_cycle).cloned());
        }
        out
    } else {
        let avoid: HashSet<u32> = sequence.token_ids().into_iter().collect();
        let material = select_probe_material_avoiding(vocab, &mut rng, &avoid)?;
        let mut out = Vec::new();
        for &q in setting.probe_patterns() {
            let list = generate_probe_trigrams(&material, q, &mut rng);
            out.extend(list.into_iter().take(config.probes_per_cycle));
        }
        out
    };
    let probe_tokens = probes.iter().flat_map(|t| t.ids()).collect();

    let mut measurements = Vec::with_capacity(probes.len());
    let mut drops = Vec::new();
    for probe in &probes {
        match surprisal(scorer, &rendered, config.separator.id, prime_pattern, probe) {
            Ok(m) => measurements.push(m),
            Err(Error::Score(e)) => drops.push(DropRecord {
                probe_pattern: probe.pattern,
                probe: probe.ids(),
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }

    Ok(CycleOutcome {
        run: 0,
        cycle: 0,
        prime_pattern,
        seed,
        sequence,
        rendered,
        probe_tokens,
        measurements,
        drops,
    })
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub prime: Pattern,
    pub probe: Pattern,
    /// Mean surprisal in bits.
    pub mean: f64,
    pub std: f64,
    pub n: u64,
}

impl Cell {
    pub fn from_values(prime: Pattern, probe: Pattern, values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Cell {
                prime,
                probe,
                mean: 0.0,
                std: 0.0,
                n: 0,
            };
        }
        let mean = compensated_sum(values.iter().copied()) / n as f64;
        let var = if n > 1 {
            compensated_sum(values.iter().map(|v| (v - mean) * (v - mean))) / (n - 1) as f64
        } else {
            0.0
        };
        Cell {
            prime,
            probe,
            mean,
            std: var.sqrt(),
            n: n as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropReport {
    pub attempted: u64,
    pub dropped: u64,
    pub threshold: f64,
    pub failed: bool,
}

impl DropReport {
    pub fn rate(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.dropped as f64 / self.attempted as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub master_seed: u64,
    pub derivation: String,
    pub rng: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub schema: String,
    pub setting: Setting,
    pub scorer: String,
    pub probe_patterns: Vec<Pattern>,
    /// Prime-major order, probe columns in `probe_patterns` order.
    pub cells: Vec<Cell>,
    pub expected_n: u64,
    pub drops: DropReport,
    pub seeds: SeedSummary,
}

impl ResultsTable {
    pub fn cell(&self, prime: Pattern, probe: Pattern) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.prime == prime && c.probe == probe)
    }

    /// Table from bare means, one row per prime pattern (AAB, ABA, ABB),
    /// columns in the setting's probe order.
    pub fn from_means(setting: Setting, scorer: &str, rows: &[Vec<f64>]) -> Result<Self> {
        let probes = setting.probe_patterns();
        if rows.len() != 3 || rows.iter().any(|r| r.len() != probes.len()) {
            return Err(Error::Config(format!(
                "expected 3 rows of {} values",
                probes.len()
            )));
        }
        let mut cells = Vec::new();
        for (prime, row) in Pattern::SAMENESS.iter().zip(rows) {
            for (probe, &mean) in probes.iter().zip(row) {
                cells.push(Cell {
                    prime: *prime,
                    probe: *probe,
                    mean,
                    std: 0.0,
                    n: 1,
                });
            }
        }
        Ok(ResultsTable {
            schema: RESULTS_SCHEMA.into(),
            setting,
            scorer: scorer.into(),
            probe_patterns: probes.to_vec(),
            cells,
            expected_n: 1,
            drops: DropReport {
                attempted: 0,
                dropped: 0,
                threshold: DEFAULT_DROP_THRESHOLD,
                failed: false,
            },
            seeds: SeedSummary {
                master_seed: 0,
                derivation: String::new(),
                rng: String::new(),
            },
        })
    }
}

/// Per-cycle seed record for the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSeed {
    pub prime_pattern: Pattern,
    pub run: u32,
    pub cycle: u32,
    pub seed: u64,
    pub shuffle_seed: u64,
    pub dropped: u32,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub table: ResultsTable,
    pub cycles: Vec<CycleSeed>,
    pub split_seeds: BTreeMap<Pattern, u64>,
    pub drop_records: Vec<DropRecord>,
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Worker threads; 1 runs everything on the calling thread.
    pub workers: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

pub fn run_experiment<S: Scorer + ?Sized>(
    config: &ExperimentConfig,
    scorer: &S,
    vocab: &Vocabulary,
    rankings: &BTreeMap<Pattern, PmiRanking>,
    options: RunOptions,
) -> Result<ExperimentOutput> {
    run_experiment_observed(config, scorer, vocab, rankings, options, |_| {})
}

/// [`run_experiment`] with a hook that sees every cycle before aggregation.
/// The hook may be called from several threads and in any order.
pub fn run_experiment_observed<S, F>(
    config: &ExperimentConfig,
    scorer: &S,
    vocab: &Vocabulary,
    rankings: &BTreeMap<Pattern, PmiRanking>,
    options: RunOptions,
    observe: F,
) -> Result<ExperimentOutput>
where
    S: Scorer + ?Sized,
    F: Fn(&CycleOutcome) + Sync,
{
    config.validate()?;
    if vocab.get(config.separator.id) != Some(&config.separator) {
        return Err(Error::Config(format!(
            "separator {:?} (id {}) is not in the vocabulary",
            config.separator.surface, config.separator.id
        )));
    }
    let mut vocab = vocab.clone();
    vocab.exclude(config.separator.id)?;
    let seen = SeenSets::prepare(config.setting, rankings, &vocab, config.master_seed)?;

    let mut jobs = Vec::new();
    for p in Pattern::SAMENESS {
        for run in 0..config.runs as u32 {
            for cycle in 0..config.cycles_per_run as u32 {
                jobs.push((p, run, cycle, cycle_seed(config.master_seed, run, cycle, p)));
            }
        }
    }

    let exec = |&(p, run, cycle, seed): &(Pattern, u32, u32, u64)| -> Result<CycleOutcome> {
        let mut out =
            run_cycle(config, scorer, &vocab, &seen, p, seed).map_err(|e| Error::Cycle {
                run,
                cycle,
                pattern: p,
                source: Box::new(e),
            })?;
        out.run = run;
        out.cycle = cycle;
        observe(&out);
        Ok(out)
    };
    let outcomes: Vec<CycleOutcome> = if options.workers <= 1 {
        jobs.iter().map(exec).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(exec).collect::<Result<_>>())?
    };

    let probes = config.setting.probe_patterns();
    let mut values: BTreeMap<(Pattern, Pattern), Vec<f64>> = BTreeMap::new();
    let mut cycles = Vec::with_capacity(outcomes.len());
    let mut drop_records = Vec::new();
    let mut attempted = 0u64;
    for out in &outcomes {
        attempted += (out.measurements.len() + out.drops.len()) as u64;
        for m in &out.measurements {
            values
                .entry((m.prime_pattern, m.probe_pattern))
                .or_default()
                .push(m.surprisal);
        }
        cycles.push(CycleSeed {
            prime_pattern: out.prime_pattern,
            run: out.run,
            cycle: out.cycle,
            seed: out.seed,
            shuffle_seed: out.sequence.seed_trace,
            dropped: out.drops.len() as u32,
        });
        drop_records.extend(out.drops.iter().cloned());
    }

    let mut cells = Vec::new();
    for p in Pattern::SAMENESS {
        for &q in probes {
            let v = values.get(&(p, q)).map(Vec::as_slice).unwrap_or(&[]);
            cells.push(Cell::from_values(p, q, v));
        }
    }
    let dropped = drop_records.len() as u64;
    let drops = DropReport {
        attempted,
        dropped,
        threshold: config.drop_threshold,
        failed: attempted == 0 || dropped as f64 > config.drop_threshold * attempted as f64,
    };
    if drops.failed {
        log::error!(
            "{dropped} of {attempted} measurements dropped (threshold {})",
            config.drop_threshold
        );
    }

    let table = ResultsTable {
        schema: RESULTS_SCHEMA.into(),
        setting: config.setting,
        scorer: scorer.descriptor().name,
        probe_patterns: probes.to_vec(),
        cells,
        expected_n: config.measurements_per_condition(),
        drops,
        seeds: SeedSummary {
            master_seed: config.master_seed,
            derivation: format!(
                "sha256({CYCLE_SEED_LABEL} | 0x00 | master | run | cycle | pattern)[..8] le"
            ),
            rng: RNG_VERSION.into(),
        },
    };
    Ok(ExperimentOutput {
        table,
        cycles,
        split_seeds: seen.split_seeds,
        drop_records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowVerdict {
    pub prime: Pattern,
    /// Strict row minimum; `None` on ties or missing cells.
    pub argmin: Option<Pattern>,
    /// All probe patterns within [`TIE_TOLERANCE`] of the row minimum.
    pub minima: Vec<Pattern>,
    /// Whether ABC is the strict row maximum; `None` without an ABC column.
    pub abc_is_max: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub rows: Vec<RowVerdict>,
    pub human_consistent: bool,
}

impl Verdict {
    pub fn row(&self, prime: Pattern) -> Option<&RowVerdict> {
        self.rows.iter().find(|r| r.prime == prime)
    }
}

/// Compares a table with the expected human pattern: the consistent probe
/// is the strict minimum of each row and, where present, ABC the strict
/// maximum.
pub fn classify(table: &ResultsTable) -> Verdict {
    let mut rows = Vec::new();
    for prime in Pattern::SAMENESS {
        let row: Vec<&Cell> = table
            .probe_patterns
            .iter()
            .filter_map(|&q| table.cell(prime, q))
            .filter(|c| c.n > 0)
            .collect();
        let complete = row.len() == table.probe_patterns.len() && !row.is_empty();
        let min = row.iter().map(|c| c.mean).fold(f64::INFINITY, f64::min);
        let minima: Vec<Pattern> = row
            .iter()
            .filter(|c| c.mean - min <= TIE_TOLERANCE)
            .map(|c| c.probe)
            .collect();
        let argmin = (complete && minima.len() == 1).then(|| minima[0]);
        let abc_is_max = table
            .cell(prime, Pattern::ABC)
            .filter(|_| complete)
            .map(|abc| {
                row.iter()
                    .filter(|c| c.probe != Pattern::ABC)
                    .all(|c| abc.mean - c.mean > TIE_TOLERANCE)
            });
        rows.push(RowVerdict {
            prime,
            argmin,
            minima,
            abc_is_max,
        });
    }
    let human_consistent = rows.len() == 3
        && rows
            .iter()
            .all(|r| r.argmin == Some(r.prime) && r.abc_is_max != Some(false));
    Verdict {
        rows,
        human_consistent,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Text,
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" | "txt" => Ok(Format::Text),
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(Error::Config(format!("unknown format {s:?}"))),
        }
    }
}

/// Structured report: a results table with its verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub table: ResultsTable,
    pub verdict: Verdict,
}

impl Report {
    pub fn new(table: ResultsTable) -> Self {
        let verdict = classify(&table);
        Report {
            schema: REPORT_SCHEMA.into(),
            table,
            verdict,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value.get("schema").and_then(|s| s.as_str()).unwrap_or("");
        if found != REPORT_SCHEMA {
            return Err(Error::Schema {
                expected: REPORT_SCHEMA.into(),
                found: found.into(),
            });
        }
        let report: Report = serde_json::from_value(value)?;
        if report.table.schema != RESULTS_SCHEMA {
            return Err(Error::Schema {
                expected: RESULTS_SCHEMA.into(),
                found: report.table.schema,
            });
        }
        Ok(report)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn render_text(out: &mut String, table: &ResultsTable, verdict: &Verdict) {
    let _ = writeln!(
        out,
        "== {} | {} ({}) ==",
        table.scorer,
        table.setting.caption(),
        table.setting
    );
    let _ = write!(out, "{:<12}", "");
    for q in &table.probe_patterns {
        let _ = write!(out, "{:>17}", format!("S({q}|primes)"));
    }
    out.push('\n');
    for prime in Pattern::SAMENESS {
        let _ = write!(out, "{:<12}", format!("{prime} primes"));
        let row = verdict.row(prime);
        for &q in &table.probe_patterns {
            let text = match table.cell(prime, q) {
                Some(c) if c.n > 0 => {
                    let mut s = format!("{:.4}", c.mean);
                    if q == prime {
                        s = format!("[{s}]");
                    }
                    if row.is_some_and(|r| r.argmin == Some(q)) {
                        s.push('*');
                    } else {
                        s.push(' ');
                    }
                    s
                }
                _ => "-  ".into(),
            };
            let _ = write!(out, "{text:>17}");
        }
        out.push('\n');
    }
    let minima: Vec<String> = verdict
        .rows
        .iter()
        .map(|r| match r.argmin {
            Some(p) => format!("{} primes -> {p}", r.prime),
            None => format!("{} primes -> tie", r.prime),
        })
        .collect();
    let _ = writeln!(
        out,
        "human-consistent: {} ({})",
        if verdict.human_consistent {
            "yes"
        } else {
            "no"
        },
        minima.join(", ")
    );
    let _ = writeln!(
        out,
        "n per cell: {} expected; dropped {} of {}{}",
        table.expected_n,
        table.drops.dropped,
        table.drops.attempted,
        if table.drops.failed { " (FAILED)" } else { "" }
    );
    out.push_str("[x] consistent condition, * row minimum\n");
}

const CSV_HEADER: &str = "scorer,setting,prime,probe,mean,std,n,consistent,row_min\n";

fn render_csv_rows(out: &mut String, table: &ResultsTable, verdict: &Verdict) {
    for c in &table.cells {
        let row_min = verdict
            .row(c.prime)
            .is_some_and(|r| r.argmin == Some(c.probe));
        let scorer = if table.scorer.contains([',', '"']) {
            format!("\"{}\"", table.scorer.replace('"', "\"\""))
        } else {
            table.scorer.clone()
        };
        let _ = writeln!(
            out,
            "{scorer},{},{},{},{},{},{},{},{}",
            table.setting,
            c.prime,
            c.probe,
            c.mean,
            c.std,
            c.n,
            c.prime == c.probe,
            row_min
        );
    }
}

/// Serializes a table and its verdict.
pub fn emit(table: &ResultsTable, verdict: &Verdict, format: Format) -> String {
    let mut out = String::new();
    match format {
        Format::Text => render_text(&mut out, table, verdict),
        Format::Csv => {
            out.push_str(CSV_HEADER);
            render_csv_rows(&mut out, table, verdict);
        }
        Format::Json => {
            out = Report {
                schema: REPORT_SCHEMA.into(),
                table: table.clone(),
                verdict: verdict.clone(),
            }
            .to_json()
        }
    }
    out
}

/// Several reports rendered one after another, in the given order.
pub fn emit_many(reports: &[Report], format: Format) -> String {
    let mut out = String::new();
    match format {
        Format::Text => {
            for (i, r) in reports.iter().enumerate() {
                if i > 0 {
                    out.push('\n');
                }
                render_text(&mut out, &r.table, &r.verdict);
            }
        }
        Format::Csv => {
            out.push_str(CSV_HEADER);
            for r in reports {
                render_csv_rows(&mut out, &r.table, &r.verdict);
            }
        }
        Format::Json => {
            out = serde_json::to_string_pretty(reports).expect("reports serialize");
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::{PatternOracle, UniformScorer};

    fn small(setting: Setting) -> ExperimentConfig {
        ExperimentConfig {
            setting,
            cycles_per_run: 4,
            runs: 1,
            master_seed: 3,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn default_counts() {
        let c = ExperimentConfig::default();
        assert_eq!(c.measurements_per_condition(), 12_288);
        assert_eq!(Setting::RandomSeen.probe_patterns().len(), 3);
        assert_eq!(Setting::SeenRandom.probe_patterns().len(), 4);
        assert_eq!("seen/seen".parse::<Setting>().unwrap(), Setting::SeenSeen);
    }

    #[test]
    fn random_cycle_has_sixty_four_measurements() {
        let (vocab, sep) = crate::stimulus::Vocabulary::synthetic(100).unwrap();
        let cfg = ExperimentConfig {
            separator: sep,
            ..small(Setting::RandomRandom)
        };
        let s = UniformScorer::new(100);
        let out = run_cycle(&cfg, &s, &vocab, &SeenSets::default(), Pattern::ABA, 9).unwrap();
        assert_eq!(out.measurements.len(), 64);
        assert_eq!(out.rendered.len(), 64);
        assert!(out.is_disjoint());
        let other = run_cycle(&cfg, &s, &vocab, &SeenSets::default(), Pattern::ABA, 10).unwrap();
        let a: Vec<f64> = out.measurements.iter().map(|m| m.surprisal).collect();
        let b: Vec<f64> = other.measurements.iter().map(|m| m.surprisal).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_means_are_analytic() {
        let (vocab, sep) = crate::stimulus::Vocabulary::synthetic(1000).unwrap();
        let cfg = ExperimentConfig {
            separator: sep,
            ..small(Setting::RandomRandom)
        };
        let out = run_experiment(
            &cfg,
            &UniformScorer::new(1000),
            &vocab,
            &BTreeMap::new(),
            RunOptions { workers: 2 },
        )
        .unwrap();
        let expected = 2.0 * 1000f64.log2();
        for c in &out.table.cells {
            assert!((c.mean - expected).abs() < 1e-9);
            assert_eq!(c.n, 64);
        }
        let v = classify(&out.table);
        assert!(!v.human_consistent);
        assert!(v
            .rows
            .iter()
            .all(|r| r.argmin.is_none() && r.minima.len() == 4));
    }

    #[test]
    fn oracle_gives_human_pattern_at_small_scale() {
        let (vocab, sep) = crate::stimulus::Vocabulary::synthetic(500).unwrap();
        let cfg = ExperimentConfig {
            separator: sep.clone(),
            ..small(Setting::RandomRandom)
        };
        let oracle = PatternOracle::new(0.9, 500, sep.id);
        let out = run_experiment(
            &cfg,
            &oracle,
            &vocab,
            &BTreeMap::new(),
            RunOptions { workers: 1 },
        )
        .unwrap();
        assert!(classify(&out.table).human_consistent);
    }

    #[test]
    fn seen_setting_without_rankings_fails() {
        let (vocab, sep) = crate::stimulus::Vocabulary::synthetic(100).unwrap();
        let cfg = ExperimentConfig {
            separator: sep,
            ..small(Setting::SeenRandom)
        };
        let err = run_experiment(
            &cfg,
            &UniformScorer::new(100),
            &vocab,
            &BTreeMap::new(),
            RunOptions { workers: 1 },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn synthetic_human_table() {
        let t = ResultsTable::from_means(
            Setting::RandomRandom,
            "synthetic",
            &[
                vec![1.0, 2.0, 2.0, 3.0],
                vec![2.0, 1.0, 2.0, 3.0],
                vec![2.0, 2.0, 1.0, 3.0],
            ],
        )
        .unwrap();
        let v = classify(&t);
        assert!(v.human_consistent);
        let text = emit(&t, &v, Format::Text);
        assert!(text.contains("[1.0000]*"));
        assert_eq!(
            text.lines()
                .filter(|l| l.starts_with("AA") || l.starts_with("AB"))
                .count(),
            3
        );
    }

    #[test]
    fn abc_not_max_is_not_human() {
        let t = ResultsTable::from_means(
            Setting::RandomRandom,
            "synthetic",
            &[
                vec![1.0, 2.0, 4.0, 3.0],
                vec![2.0, 1.0, 2.0, 3.0],
                vec![2.0, 2.0, 1.0, 3.0],
            ],
        )
        .unwrap();
        let v = classify(&t);
        assert_eq!(v.rows[0].argmin, Some(Pattern::AAB));
        assert_eq!(v.rows[0].abc_is_max, Some(false));
        assert!(!v.human_consistent);
    }

    #[test]
    fn compensated_sum_is_order_independent() {
        let vals: Vec<f64> = (0..10_000).map(|i| 1e8 + (i as f64) * 1e-3).collect();
        let mut rev = vals.clone();
        rev.reverse();
        let a = compensated_sum(vals.iter().copied()) / 1e4;
        let b = compensated_sum(rev.iter().copied()) / 1e4;
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn report_schema_checked() {
        let t = ResultsTable::from_means(Setting::RandomSeen, "x", &vec![vec![1.0, 2.0, 3.0]; 3])
            .unwrap();
        let r = Report::new(t);
        assert_eq!(Report::from_json(&r.to_json()).unwrap(), r);
        let bad = r.to_json().replace(REPORT_SCHEMA, "asr-report/0");
        assert!(matches!(Report::from_json(&bad), Err(Error::Schema { .. })));
    }
}
