//! Subcommands of the `rbridge` pipeline.
//!
//! Every command reads its inputs from the run config and the run directory,
//! writes deterministic artifacts into the run directory and updates
//! `manifest.json` there.

mod fit;
mod rank;
mod report;
mod score;
mod trace;
mod transfer;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rbridge_core::store::{self, RunConfig, RunManifest};
use rbridge_core::{Error, Result, ScoreRecord};

pub use fit::{cmd_fit, FitReportFile, FitRow, FitSummaryRow};
pub use rank::{cmd_rank, ComputeRow, RankAverage, RankRow, RankingReport};
pub use report::cmd_report;
pub use score::cmd_score;
pub use trace::{cmd_trace, TraceSummary};
pub use transfer::{cmd_transfer, TransferReport, TransferRow, TransferSummaryRow};

pub const MANIFEST: &str = "manifest.json";
pub const SCORES: &str = "scores.jsonl";
pub const FIT_REPORT: &str = "fit_report.json";
pub const RANKING_REPORT: &str = "ranking_report.json";
pub const TRANSFER_REPORT: &str = "transfer_report.json";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Optional input paths given on the command line; each falls back to the
/// config or the run directory.
#[derive(Debug, Clone, Default)]
pub struct Inputs {
    pub scores: Option<PathBuf>,
    pub targets: Option<PathBuf>,
    pub new_scores: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

/// One invocation: a validated config, a run directory and a fixed timestamp.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub config: RunConfig,
    pub out: PathBuf,
    pub created_at: String,
    pub inputs: Inputs,
}

impl RunContext {
    pub fn new(config: RunConfig, out: impl Into<PathBuf>, created_at: impl Into<String>) -> Result<Self> {
        let out = out.into();
        std::fs::create_dir_all(&out).map_err(|e| Error::Io {
            path: out.clone(),
            source: e,
        })?;
        Ok(Self {
            config,
            out,
            created_at: created_at.into(),
            inputs: Inputs::default(),
        })
    }

    pub fn with_inputs(mut self, inputs: Inputs) -> Self {
        self.inputs = inputs;
        self
    }

    pub fn out_path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    pub(crate) fn scores_path(&self) -> PathBuf {
        self.inputs.scores.clone().unwrap_or_else(|| self.out_path(SCORES))
    }

    pub(crate) fn targets_path(&self) -> Result<PathBuf> {
        self.inputs
            .targets
            .clone()
            .or_else(|| self.config.target_scores.as_deref().map(|p| self.config.resolve(p)))
            .ok_or_else(|| Error::Config("no target scores: set target_scores or pass --targets".into()))
    }

    /// Loads the run manifest, starting fresh when the config changed.
    fn manifest(&self) -> Result<RunManifest> {
        let fresh = RunManifest::new(&self.config, &self.created_at, TOOL_VERSION)?;
        let path = self.out_path(MANIFEST);
        if !path.exists() {
            return Ok(fresh);
        }
        let existing: RunManifest = store::read_json(&path)?;
        if existing.config_hash == fresh.config_hash {
            Ok(existing)
        } else {
            log::warn!(
                "config changed since {} was written; starting a new manifest",
                path.display()
            );
            Ok(fresh)
        }
    }

    /// Manifest key of an input: relative to the run directory or the config
    /// directory when under either, so keys do not depend on where a run lives.
    fn input_key(&self, path: &Path) -> String {
        let rel = |base: &Path| {
            (!base.as_os_str().is_empty())
                .then(|| path.strip_prefix(base).ok())
                .flatten()
                .map(|r| r.display().to_string())
        };
        rel(&self.out)
            .map(|r| format!("{}{r}", store::RUN_DIR_PREFIX))
            .or_else(|| rel(&self.config.base_dir))
            .unwrap_or_else(|| path.display().to_string())
    }

    /// Records a finished step with the digests of its inputs and outputs.
    pub(crate) fn finish_step(&self, step: &str, inputs: &[PathBuf], outputs: &[String]) -> Result<()> {
        let mut m = self.manifest()?;
        m.add_step(step);
        for p in inputs {
            m.record_input(&self.input_key(p), p)?;
        }
        for rel in outputs {
            m.record_output(&self.out, rel)?;
        }
        store::write_json(&self.out_path(MANIFEST), &m)
    }
}

/// Timestamp for manifests: `SOURCE_DATE_EPOCH` when set, else now.
pub fn timestamp_from_env() -> Result<String> {
    let at = match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) => {
            let secs: i64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("SOURCE_DATE_EPOCH is not an integer: {v:?}")))?;
            chrono::DateTime::from_timestamp(secs, 0)
                .ok_or_else(|| Error::Config(format!("SOURCE_DATE_EPOCH out of range: {secs}")))?
        }
        Err(_) => chrono::Utc::now(),
    };
    Ok(at.to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
}

/// Key of a point in a score series.
pub(crate) type SeriesKey = (String, String, u64);

pub(crate) fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    if !path.exists() {
        return Err(Error::Config(format!("{} does not exist", path.display())));
    }
    store::read_jsonl(path)
}

/// Target values of `metric`, keyed by (benchmark, dataset, checkpoint_tokens).
pub(crate) fn target_index(records: &[ScoreRecord], metric: &str, path: &Path) -> Result<BTreeMap<SeriesKey, f64>> {
    let mut out = BTreeMap::new();
    for r in records.iter().filter(|r| r.metric == metric) {
        let key = (r.benchmark.clone(), r.dataset.clone(), r.checkpoint_tokens);
        if out.insert(key, r.value).is_some() {
            return Err(Error::Data(format!(
                "{}: duplicate {metric} score for {}/{}@{}",
                path.display(),
                r.benchmark,
                r.dataset,
                r.checkpoint_tokens
            )));
        }
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: no {metric} scores", path.display())));
    }
    Ok(out)
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
