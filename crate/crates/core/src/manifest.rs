//! Run manifest: everything needed to replay a run against the same scorer.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{CycleSeed, DropRecord, DropReport, ExperimentConfig, ExperimentOutput};
use crate::rng::RNG_VERSION;
use crate::scorer::{HandshakeInfo, ScorerDescriptor};
use crate::stimulus::{Pattern, Vocabulary};

pub const MANIFEST_SCHEMA: &str = "asr-manifest/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabularySummary {
    pub size: usize,
    pub excluded: usize,
    pub eligible: usize,
}

impl VocabularySummary {
    pub fn of(vocab: &Vocabulary) -> Self {
        VocabularySummary {
            size: vocab.len(),
            excluded: vocab.excluded().len(),
            eligible: vocab.eligible_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRef {
    pub pattern: Pattern,
    pub corpus_id: String,
    pub path: Option<String>,
    pub entries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub tool: String,
    pub tool_version: String,
    pub config: ExperimentConfig,
    /// How the scorer was named on the command line or in the config file.
    pub scorer_spec: String,
    pub scorer: ScorerDescriptor,
    pub handshake: Option<HandshakeInfo>,
    pub vocabulary: VocabularySummary,
    pub denylist: Vec<String>,
    pub rankings: Vec<RankingRef>,
    pub rng: String,
    pub seed_derivation: String,
    pub split_seeds: BTreeMap<Pattern, u64>,
    pub cycles: Vec<CycleSeed>,
    pub drops: DropReport,
    pub drop_records: Vec<DropRecord>,
    /// Wall-clock timing; only recorded on request so that manifests of
    /// identical runs stay byte-identical.
    pub timing: Option<Timing>,
}

pub struct ManifestInputs<'a> {
    pub config: &'a ExperimentConfig,
    pub scorer_spec: &'a str,
    pub scorer: ScorerDescriptor,
    pub handshake: Option<HandshakeInfo>,
    pub vocab: &'a Vocabulary,
    pub denylist: &'a [String],
    pub rankings: Vec<RankingRef>,
    pub timing: Option<Timing>,
}

impl RunManifest {
    pub fn new(inputs: ManifestInputs<'_>, output: &ExperimentOutput) -> Self {
        RunManifest {
            schema: MANIFEST_SCHEMA.into(),
            tool: env!("CARGO_PKG_NAME").into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config: inputs.config.clone(),
            scorer_spec: inputs.scorer_spec.into(),
            scorer: inputs.scorer,
            handshake: inputs.handshake,
            vocabulary: VocabularySummary::of(inputs.vocab),
            denylist: inputs.denylist.to_vec(),
            rankings: inputs.rankings,
            rng: RNG_VERSION.into(),
            seed_derivation: output.table.seeds.derivation.clone(),
            split_seeds: output.split_seeds.clone(),
            cycles: output.cycles.clone(),
            drops: output.table.drops.clone(),
            drop_records: output.drop_records.clone(),
            timing: inputs.timing,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value.get("schema").and_then(|s| s.as_str()).unwrap_or("");
        if found != MANIFEST_SCHEMA {
            return Err(Error::Schema {
                expected: MANIFEST_SCHEMA.into(),
                found: found.into(),
            });
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
