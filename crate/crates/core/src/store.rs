//! JSON/JSONL persistence, run configuration and run manifests.
//!
//! Records are written one per line in struct field order with serde_json's
//! shortest round-trip float encoding, so writing the same records twice
//! yields byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::providers::{ProviderConfig, ReplayRecord};
use crate::scoring::{Aggregate, Orientation, ScoreRecord, DEFAULT_ANSWER_SUFFIX};
use crate::trace::{BenchmarkItem, TracedExample};
use crate::{Error, Result};

/// A JSONL record type with per-line validation.
pub trait Record: Serialize + DeserializeOwned {
    fn check(&self) -> Result<()> {
        Ok(())
    }
}

impl Record for BenchmarkItem {
    fn check(&self) -> Result<()> {
        self.validate()
    }
}

impl Record for TracedExample {
    fn check(&self) -> Result<()> {
        self.validate()
    }
}

impl Record for ScoreRecord {
    fn check(&self) -> Result<()> {
        self.validate()
    }
}

impl Record for ReplayRecord {}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Data(format!("serialize: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    create_parent(path)?;
    fs::write(path, to_jsonl(records)?).map_err(|e| Error::io(path, e))
}

/// Reads and validates every line; errors carry the 1-based line number.
pub fn read_jsonl<T: Record>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |message: String| Error::Record {
            path: path.to_owned(),
            line: i + 1,
            message,
        };
        let rec: T = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        rec.check().map_err(|e| at(e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(format!("serialize: {e}")))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Record {
        path: path.to_owned(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Sorted keys, no insignificant whitespace.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::Data(e.to_string()))?;
    Ok(v.to_string())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub name: String,
    pub path: PathBuf,
}

/// A proxy checkpoint: one pre-training dataset at one token count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub dataset: String,
    /// Pre-training tokens (billions).
    pub tokens: u64,
    /// Overrides the proxy provider's model id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    /// Model parameter count, for compute accounting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<u64>,
}

fn default_gen_tokens() -> u32 {
    256
}

fn default_stop() -> Vec<String> {
    vec!["\n\n".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    #[serde(default = "default_gen_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_stop")]
    pub stop: Vec<String>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            max_tokens: default_gen_tokens(),
            stop: default_stop(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    /// Proxy scores on the new pre-training dataset(s).
    pub new_scores: PathBuf,
    /// Optional ground-truth target scores for the new dataset(s).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
}

/// Metrics `score` knows how to compute.
pub const KNOWN_METRICS: [&str; 12] = [
    "rbridge",
    "nll",
    "nll_rphi",
    "nll_scb",
    "mpca",
    "ted",
    "accuracy",
    "correct_prob",
    "norm_correct_prob",
    "total_prob",
    "margin",
    "cf_accuracy",
];

fn default_metrics() -> Vec<String> {
    vec!["rbridge".into(), "nll".into()]
}

fn default_k() -> usize {
    5
}

fn default_context_template() -> String {
    "Question: {question}\nAnswer: ".into()
}

fn default_suffix() -> String {
    DEFAULT_ANSWER_SUFFIX.into()
}

fn default_target_metric() -> String {
    "accuracy".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub frontier: ProviderConfig,
    pub proxy: ProviderConfig,
    pub benchmarks: Vec<BenchmarkSpec>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<String>,
    #[serde(default)]
    pub checkpoints: Vec<Checkpoint>,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Context the proxy is conditioned on; `{question}` and `{task}` are substituted.
    #[serde(default = "default_context_template")]
    pub score_context_template: String,
    /// Prepended to every scoring context (few-shot exemplars). Empty by default.
    #[serde(default)]
    pub few_shot_prefix: String,
    #[serde(default = "default_suffix")]
    pub scb_suffix_template: String,
    #[serde(default)]
    pub aggregate: Aggregate,
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default = "default_target_metric")]
    pub target_metric: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_scores: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer: Option<TransferConfig>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_owned()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Provider config with its replay path resolved against the config dir.
    pub fn resolved_provider(&self, provider: &ProviderConfig) -> ProviderConfig {
        let mut out = provider.clone();
        out.replay_path = provider.replay_path.as_deref().map(|p| self.resolve(p));
        out
    }

    /// Configured checkpoints, or a single unnamed one.
    pub fn effective_checkpoints(&self) -> Vec<Checkpoint> {
        if self.checkpoints.is_empty() {
            vec![Checkpoint {
                dataset: "default".into(),
                tokens: 0,
                model_id: None,
                params: None,
            }]
        } else {
            self.checkpoints.clone()
        }
    }

    pub fn context_for(&self, item: &BenchmarkItem) -> String {
        format!(
            "{}{}",
            self.few_shot_prefix,
            self.score_context_template
                .replace("{task}", &item.task_label)
                .replace("{question}", &item.question)
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("k must be at least 2, got {}", self.k)));
        }
        self.frontier.validate_paths(self)?;
        self.proxy.validate_paths(self)?;
        if self.benchmarks.is_empty() {
            return Err(Error::Config("no benchmarks configured".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for b in &self.benchmarks {
            if !names.insert(b.name.as_str()) {
                return Err(Error::Config(format!("duplicate benchmark name {}", b.name)));
            }
            if !self.resolve(&b.path).exists() {
                return Err(Error::Config(format!(
                    "benchmark file {} does not exist",
                    b.path.display()
                )));
            }
        }
        if self.metrics.is_empty() {
            return Err(Error::Config("metric list is empty".into()));
        }
        for m in &self.metrics {
            if !KNOWN_METRICS.contains(&m.as_str()) {
                return Err(Error::Config(format!("unknown metric {m}")));
            }
        }
        if Orientation::for_metric(&self.target_metric) != Some(Orientation::HigherBetter) {
            return Err(Error::Config(format!(
                "target metric {} must be a higher-is-better metric",
                self.target_metric
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.checkpoints {
            if !seen.insert((c.dataset.as_str(), c.tokens)) {
                return Err(Error::Config(format!(
                    "duplicate checkpoint {}@{}",
                    c.dataset, c.tokens
                )));
            }
        }
        // target and transfer files are produced mid-pipeline; commands check them on use
        Ok(())
    }

    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(canonical_json(self)?.as_bytes()))
    }
}

impl ProviderConfig {
    fn validate_paths(&self, cfg: &RunConfig) -> Result<()> {
        cfg.resolved_provider(self).validate()
    }
}

/// Parses a `key.path=value` override; the value is JSON if it parses as
/// JSON, else a string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override {key}: {} is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_owned(), value);
            return Ok(());
        }
        node = obj
            .entry((*part).to_owned())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("override key has at least one part")
}

/// Loads a JSON config, applies overrides, fills defaults, rejects unknown
/// keys and validates.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut value: Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let mut cfg: RunConfig =
        serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    cfg.validate()?;
    Ok(cfg)
}

/// Marks manifest input keys that are relative to the run directory.
pub const RUN_DIR_PREFIX: &str = "$RUN/";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub created_at: String,
    pub config_hash: String,
    pub tool_version: String,
    pub proxy_model_id: String,
    pub frontier_model_id: String,
    /// The resolved config, defaults included.
    pub config: Value,
    /// Subcommands that have written into this run directory.
    pub steps: Vec<String>,
    /// Digests of inputs, keyed by path as given in the config.
    pub input_digests: BTreeMap<String, String>,
    /// Digests of outputs, keyed by path relative to the run directory.
    pub output_digests: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(cfg: &RunConfig, created_at: &str, tool_version: &str) -> Result<Self> {
        let config_hash = cfg.hash()?;
        let run_id = sha256_hex(format!("{config_hash}{created_at}").as_bytes())[..16].to_owned();
        Ok(Self {
            run_id,
            created_at: created_at.to_owned(),
            config_hash,
            tool_version: tool_version.to_owned(),
            proxy_model_id: cfg.proxy.model_id.clone(),
            frontier_model_id: cfg.frontier.model_id.clone(),
            config: serde_json::to_value(cfg).map_err(|e| Error::Data(e.to_string()))?,
            ..Self::default()
        })
    }

    pub fn add_step(&mut self, step: &str) {
        if !self.steps.iter().any(|s| s == step) {
            self.steps.push(step.to_owned());
        }
    }

    pub fn record_input(&mut self, key: &str, path: &Path) -> Result<()> {
        self.input_digests.insert(key.to_owned(), file_digest(path)?);
        Ok(())
    }

    pub fn record_output(&mut self, run_dir: &Path, rel: &str) -> Result<()> {
        self.output_digests
            .insert(rel.to_owned(), file_digest(&run_dir.join(rel))?);
        Ok(())
    }

    /// Keys whose files no longer match their recorded digest. Input keys are
    /// resolved against `input_base`, or against `run_dir` when they start
    /// with [`RUN_DIR_PREFIX`].
    pub fn stale_entries(&self, input_base: &Path, run_dir: &Path) -> Vec<String> {
        let check = |base: &Path, entries: &BTreeMap<String, String>| -> Vec<String> {
            entries
                .iter()
                .filter(|(k, digest)| {
                    let (base, k) = match k.strip_prefix(RUN_DIR_PREFIX) {
                        Some(rest) => (run_dir, rest),
                        None => (base, k.as_str()),
                    };
                    let p = Path::new(k);
                    let full = if p.is_absolute() { p.to_owned() } else { base.join(p) };
                    file_digest(&full).ok().as_ref() != Some(*digest)
                })
                .map(|(k, _)| k.clone())
                .collect()
        };
        let mut out = check(input_base, &self.input_digests);
        out.extend(check(run_dir, &self.output_digests));
        out
    }
}
