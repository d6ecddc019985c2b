//! Command-line front end: `mine-pmi`, `run` and `report`.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::experiment::{
    emit, emit_many, run_experiment, ExperimentConfig, Format, Report, RunOptions, Setting,
    DEFAULT_DROP_THRESHOLD,
};
use crate::manifest::{ManifestInputs, RankingRef, RunManifest, Timing};
use crate::pmi::{
    rank_top, scan_stream, IdsBinaryReader, IdsTextReader, PmiRanking, DEFAULT_MIN_COUNT,
    DEFAULT_TOP_K,
};
use crate::scorer::{
    ClientOptions, Endpoint, ExternalScorer, PatternOracle, Scorer, UniformScorer, UnigramScorer,
};
use crate::stimulus::{Pattern, Token, Vocabulary};

/// Environment variable naming the default scorer endpoint.
pub const ENDPOINT_ENV: &str = "ASR_SCORER_ENDPOINT";
pub const DEFAULT_ORACLE_VOCAB: usize = 1000;

pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const TRANSPORT: i32 = 3;
    /// Completed, but the output is degenerate (empty or short rankings).
    pub const DEGENERATE: i32 = 4;
    /// Completed, but too many measurements were dropped.
    pub const RUN_FAILED: i32 = 5;
}

#[derive(Debug, Parser)]
#[command(
    name = "asr-probe",
    version,
    about = "Probe language-model scorers for abstract sameness relations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Count corpus tri-grams and write per-pattern PMI rankings.
    MinePmi(MineArgs),
    /// Run one experimental setting and write report + manifest.
    Run(RunArgs),
    /// Render one or more report files side by side.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CorpusFormat {
    /// One document per line, whitespace-separated token ids.
    IdsText,
    /// Per document: u32 LE length, then u32 LE ids.
    IdsBin,
    /// One document per line of raw text, tokenized by the scorer.
    RawText,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[arg(long = "corpus", required = true, num_args = 1..)]
    pub corpus: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "ids-text")]
    pub format: CorpusFormat,
    #[arg(long, value_delimiter = ',', default_value = "AAB,ABA,ABB")]
    pub patterns: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_MIN_COUNT)]
    pub min_count: u64,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub corpus_id: Option<String>,
    /// Stop after this many tokens.
    #[arg(long)]
    pub max_tokens: Option<u64>,
    /// Token ids never admitted into tri-gram counts.
    #[arg(long, value_delimiter = ',')]
    pub exclude_ids: Vec<u32>,
    /// Scorer endpoint; its special tokens and separator are excluded, and it
    /// tokenizes raw text.
    #[arg(long)]
    pub scorer: Option<String>,
    #[arg(long, default_value = ".")]
    pub separator: String,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, default_value_t = 4096)]
    pub batch_docs: usize,
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// random-random, seen-random, random-seen or seen-seen.
    #[arg(long)]
    pub setting: Option<String>,
    /// uniform:V, oracle:ALPHA[:V], unigram:PATH, tcp://HOST:PORT or cmd:PROGRAM ARGS.
    #[arg(long)]
    pub scorer: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub cycles: Option<usize>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub probes: Option<usize>,
    #[arg(long, num_args = 1..)]
    pub rankings: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML file with defaults for any of these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub separator: Option<String>,
    /// Surfaces never used as stimulus material.
    #[arg(long = "deny", num_args = 1..)]
    pub deny: Vec<String>,
    #[arg(long)]
    pub drop_threshold: Option<f64>,
    /// Format printed on stdout.
    #[arg(long, default_value = "text")]
    pub format: String,
    /// Store wall-clock time in the manifest (breaks byte-identical manifests).
    #[arg(long)]
    pub record_timing: bool,
    #[arg(long, default_value_t = 60)]
    pub timeout_secs: u64,
    #[arg(long, default_value_t = 64)]
    pub max_in_flight: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true, num_args = 1..)]
    pub reports: Vec<PathBuf>,
    #[arg(long, default_value = "text")]
    pub format: String,
}

/// Run-file configuration; every field is optional and overridden by flags.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub setting: Option<String>,
    pub scorer: Option<String>,
    pub seed: Option<u64>,
    pub cycles: Option<usize>,
    pub runs: Option<usize>,
    pub probes: Option<usize>,
    pub rankings: Option<Vec<PathBuf>>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub separator: Option<String>,
    pub deny: Option<Vec<String>>,
    pub drop_threshold: Option<f64>,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::InsufficientTokens { .. }
        | Error::InvalidPrimePattern(_)
        | Error::InsufficientRanking { .. }
        | Error::Schema { .. } => exit::CONFIG,
        Error::Protocol(_) | Error::Score(_) => exit::TRANSPORT,
        Error::Cycle { source, .. } => exit_code(source),
        _ => exit::FAILURE,
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                exit::CONFIG
            } else {
                exit::OK
            };
        }
    };
    let result = match cli.command {
        Command::MinePmi(a) => cmd_mine(&a),
        Command::Run(a) => cmd_run(&a).map(|o| o.exit_code),
        Command::Report(a) => cmd_report(&a).map(|text| {
            print!("{text}");
            exit::OK
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn client_options(timeout_secs: u64, max_in_flight: usize) -> ClientOptions {
    ClientOptions {
        timeout: Duration::from_secs(timeout_secs.max(1)),
        max_in_flight: max_in_flight.max(1),
        ..ClientOptions::default()
    }
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

fn ranking_path(out: &Path, pattern: Pattern) -> PathBuf {
    out.join(format!("ranking-{pattern}.json"))
}

/// `mine-pmi`: scans the corpus once and writes one ranking file per pattern.
pub fn cmd_mine(args: &MineArgs) -> Result<i32> {
    let patterns = args
        .patterns
        .iter()
        .map(|p| p.parse::<Pattern>())
        .collect::<Result<Vec<_>>>()?;
    if let Some(p) = patterns.iter().find(|p| !p.is_sameness()) {
        return Err(Error::Config(format!("cannot rank {p} tri-grams")));
    }
    let mut excluded: HashSet<u32> = args.exclude_ids.iter().copied().collect();

    let scorer = match &args.scorer {
        Some(spec) => {
            let endpoint: Endpoint = spec.parse()?;
            let (s, vocab) = ExternalScorer::connect(&endpoint, client_options(60, 64))?;
            excluded.extend(vocab.excluded().iter().copied());
            if let Some(sep) = vocab.find_surface(&args.separator) {
                excluded.insert(sep.id);
            }
            Some((s, vocab))
        }
        None => None,
    };
    if args.format == CorpusFormat::RawText && scorer.is_none() {
        return Err(Error::Config(
            "raw-text corpora need --scorer for tokenization".into(),
        ));
    }

    let corpus_id = args.corpus_id.clone().unwrap_or_else(|| {
        args.corpus
            .iter()
            .map(|p| {
                p.file_stem()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned()
            })
            .collect::<Vec<_>>()
            .join("+")
    });

    let tokenizer = scorer.as_ref().map(|(s, _)| s);
    let mut docs: Vec<Box<dyn Iterator<Item = Result<Vec<u32>>> + Send + '_>> = Vec::new();
    for path in &args.corpus {
        let file = File::open(path)
            .map_err(|e| Error::Config(format!("cannot read corpus {}: {e}", path.display())))?;
        let reader = BufReader::new(file);
        docs.push(match (args.format, tokenizer) {
            (CorpusFormat::IdsText, _) => Box::new(IdsTextReader::new(reader)),
            (CorpusFormat::IdsBin, _) => Box::new(IdsBinaryReader::new(reader)),
            (CorpusFormat::RawText, Some(s)) => {
                Box::new(reader.lines().map(move |line| Ok(s.tokenize(&line?)?)))
            }
            (CorpusFormat::RawText, None) => unreachable!(),
        });
    }

    let started = Instant::now();
    let chained = docs.into_iter().flatten();
    let stats = with_workers(args.workers, || {
        scan_stream(chained, &excluded, args.batch_docs, args.max_tokens)
    })??;
    eprintln!(
        "scanned {} tokens, {} windows, {} distinct sameness tri-grams in {:.2}s",
        stats.n_tokens,
        stats.n_windows,
        stats.trigram_counts.len(),
        started.elapsed().as_secs_f64()
    );

    std::fs::create_dir_all(&args.out)?;
    let mut degenerate = false;
    for p in patterns {
        let mut ranking = rank_top(&stats, p, args.min_count, args.k, &corpus_id)?;
        if let Some((_, vocab)) = &scorer {
            ranking.attach_surfaces(vocab);
        }
        if ranking.is_short() {
            degenerate = true;
            eprintln!(
                "warning: {p} ranking has {} of {} entries",
                ranking.entries.len(),
                args.k
            );
        }
        let path = ranking_path(&args.out, p);
        ranking.save(&path)?;
        info!("wrote {}", path.display());
    }
    Ok(if degenerate {
        exit::DEGENERATE
    } else {
        exit::OK
    })
}

/// A scorer named on the command line, with its vocabulary.
pub struct LoadedScorer {
    pub scorer: Box<dyn Scorer>,
    pub vocab: Vocabulary,
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Config(format!("bad {what} {s:?} in scorer spec")))
}

/// Reads `id surface count` lines.
fn load_unigram(path: &Path) -> Result<(UnigramScorer, Vocabulary)> {
    let text = std::fs::read_to_string(path)?;
    let mut tokens = Vec::new();
    let mut counts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [id, surface, count] = fields[..] else {
            return Err(Error::Parse(format!(
                "{}:{}: expected `id surface count`",
                path.display(),
                i + 1
            )));
        };
        let id: u32 = parse_num(id, "token id")?;
        tokens.push(Token::new(id, surface)?);
        counts.push((id, parse_num::<u64>(count, "count")?));
    }
    let name = format!("unigram:{}", path.display());
    Ok((UnigramScorer::new(name, counts), Vocabulary::new(tokens)?))
}

pub fn load_scorer(spec: &str, options: ClientOptions) -> Result<LoadedScorer> {
    if let Some(v) = spec.strip_prefix("uniform:") {
        let size: usize = parse_num(v, "vocabulary size")?;
        let (vocab, _) = Vocabulary::synthetic(size)?;
        return Ok(LoadedScorer {
            scorer: Box::new(UniformScorer::new(size)),
            vocab,
        });
    }
    if let Some(rest) = spec.strip_prefix("oracle:") {
        let mut parts = rest.split(':');
        let alpha: f64 = parse_num(parts.next().unwrap_or(""), "alpha")?;
        let size: usize = match parts.next() {
            Some(v) => parse_num(v, "vocabulary size")?,
            None => DEFAULT_ORACLE_VOCAB,
        };
        if !(alpha > 0.0 && alpha < 1.0) || size < 16 {
            return Err(Error::Config(format!(
                "oracle needs alpha in (0, 1) and at least 16 tokens, got {spec:?}"
            )));
        }
        let (vocab, sep) = Vocabulary::synthetic(size)?;
        return Ok(LoadedScorer {
            scorer: Box::new(PatternOracle::new(alpha, size, sep.id)),
            vocab,
        });
    }
    if let Some(path) = spec.strip_prefix("unigram:") {
        let (scorer, vocab) = load_unigram(Path::new(path))?;
        return Ok(LoadedScorer {
            scorer: Box::new(scorer),
            vocab,
        });
    }
    let endpoint: Endpoint = spec.parse()?;
    let (scorer, vocab) = ExternalScorer::connect(&endpoint, options)?;
    Ok(LoadedScorer {
        scorer: Box::new(scorer),
        vocab,
    })
}

pub struct RunOutcome {
    pub exit_code: i32,
    pub report: Report,
    pub manifest: RunManifest,
}

/// `run`: resolves configuration (flags > config file > defaults), runs the
/// experiment and writes `report.{json,txt,csv}` and `manifest.json`.
pub fn cmd_run(args: &RunArgs) -> Result<RunOutcome> {
    let file: RunFile = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => RunFile::default(),
    };

    let setting: Setting = args
        .setting
        .clone()
        .or(file.setting)
        .unwrap_or_else(|| Setting::RandomRandom.label().to_string())
        .parse()?;
    let scorer_spec = args
        .scorer
        .clone()
        .or(file.scorer)
        .or_else(|| std::env::var(ENDPOINT_ENV).ok())
        .ok_or_else(|| {
            Error::Config(format!("no scorer given (use --scorer or {ENDPOINT_ENV})"))
        })?;
    let seed = match args.seed.or(file.seed) {
        Some(s) => s,
        None => {
            let s: u64 = rand::random();
            eprintln!("no --seed given; using random seed {s}");
            s
        }
    };
    let rankings_paths = if args.rankings.is_empty() {
        file.rankings.unwrap_or_default()
    } else {
        args.rankings.clone()
    };
    let out_dir = args.out.clone().or(file.out);
    let workers = args.workers.or(file.workers);
    let separator = args
        .separator
        .clone()
        .or(file.separator)
        .unwrap_or_else(|| ".".into());
    let deny = if args.deny.is_empty() {
        file.deny.unwrap_or_default()
    } else {
        args.deny.clone()
    };
    let defaults = ExperimentConfig::default();
    let format: Format = args.format.parse()?;

    if setting.uses_rankings() && rankings_paths.is_empty() {
        return Err(Error::Config(format!(
            "setting {setting} needs --rankings for AAB, ABA and ABB"
        )));
    }
    let mut rankings = BTreeMap::new();
    let mut ranking_refs = Vec::new();
    for path in &rankings_paths {
        let r = PmiRanking::load(path)?;
        ranking_refs.push(RankingRef {
            pattern: r.pattern,
            corpus_id: r.corpus_id.clone(),
            path: Some(path.display().to_string()),
            entries: r.entries.len(),
        });
        if rankings.insert(r.pattern, r).is_some() {
            return Err(Error::Config(format!(
                "duplicate ranking in {}",
                path.display()
            )));
        }
    }

    let LoadedScorer { scorer, mut vocab } = load_scorer(
        &scorer_spec,
        client_options(args.timeout_secs, args.max_in_flight),
    )?;
    let sep = vocab.find_surface(&separator).cloned().ok_or_else(|| {
        Error::Config(format!("separator {separator:?} not in scorer vocabulary"))
    })?;
    vocab.exclude(sep.id)?;
    vocab.exclude_surfaces(&deny);

    let config = ExperimentConfig {
        setting,
        probes_per_cycle: args
            .probes
            .or(file.probes)
            .unwrap_or(defaults.probes_per_cycle),
        cycles_per_run: args
            .cycles
            .or(file.cycles)
            .unwrap_or(defaults.cycles_per_run),
        runs: args.runs.or(file.runs).unwrap_or(defaults.runs),
        master_seed: seed,
        separator: sep,
        drop_threshold: args
            .drop_threshold
            .or(file.drop_threshold)
            .unwrap_or(DEFAULT_DROP_THRESHOLD),
    };

    let started = Instant::now();
    let options = match workers {
        Some(n) => RunOptions { workers: n },
        None => RunOptions::default(),
    };
    let output = run_experiment(&config, scorer.as_ref(), &vocab, &rankings, options)?;
    let elapsed = started.elapsed().as_secs_f64();
    eprintln!(
        "{} cycles, {} measurements in {elapsed:.2}s",
        output.cycles.len(),
        output.table.drops.attempted - output.table.drops.dropped
    );

    let report = Report::new(output.table.clone());
    let manifest = RunManifest::new(
        ManifestInputs {
            config: &config,
            scorer_spec: &scorer_spec,
            scorer: scorer.descriptor(),
            handshake: scorer.handshake(),
            vocab: &vocab,
            denylist: &deny,
            rankings: ranking_refs,
            timing: args.record_timing.then_some(Timing {
                wall_seconds: elapsed,
            }),
        },
        &output,
    );

    if let Some(dir) = &out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), report.to_json())?;
        std::fs::write(
            dir.join("report.txt"),
            emit(&report.table, &report.verdict, Format::Text),
        )?;
        std::fs::write(
            dir.join("report.csv"),
            emit(&report.table, &report.verdict, Format::Csv),
        )?;
        std::fs::write(dir.join("manifest.json"), manifest.to_json())?;
    } else {
        warn!("no --out directory; report is only printed");
    }
    print!("{}", emit(&report.table, &report.verdict, format));

    let exit_code = if report.table.drops.failed {
        exit::RUN_FAILED
    } else {
        exit::OK
    };
    Ok(RunOutcome {
        exit_code,
        report,
        manifest,
    })
}

/// `report`: renders reports in input order.
pub fn cmd_report(args: &ReportArgs) -> Result<String> {
    let format: Format = args.format.parse()?;
    let reports = args
        .reports
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p)?;
            Report::from_json(&text)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(emit_many(&reports, format))
}
