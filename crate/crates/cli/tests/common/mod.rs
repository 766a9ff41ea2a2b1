#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use rbridge_cli::{Inputs, RunContext};
use rbridge_core::store::{self, load_config};
use rbridge_core::{BenchmarkItem, Orientation, ScoreRecord};
use serde_json::{json, Value};

pub const CREATED_AT: &str = "2024-01-01T00:00:00Z";

/// `n` multiple-choice arithmetic items.
pub fn synthetic_items(n: usize) -> Vec<BenchmarkItem> {
    (0..n)
        .map(|i| {
            let (a, b) = (i + 2, 3 * i + 1);
            let answer = (a + b).to_string();
            let options = vec![answer.clone(), (a + b + 1).to_string(), (a * b).to_string()];
            BenchmarkItem {
                id: format!("q{i:03}"),
                task_label: "math".into(),
                question: format!("What is {a} + {b}?"),
                gold_answer: answer,
                options: Some(options),
                correct_option_index: Some(0),
            }
        })
        .collect()
}

/// Three datasets at two token counts, each checkpoint its own mock model.
pub fn checkpoints() -> Value {
    let mut out = Vec::new();
    for tokens in [10u64, 20] {
        for dataset in ["alpha", "beta", "gamma"] {
            out.push(json!({
                "dataset": dataset,
                "tokens": tokens,
                "model_id": format!("proxy-{dataset}-{tokens}"),
                "params": 1_000_000u64 * tokens,
            }));
        }
    }
    Value::Array(out)
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub config: PathBuf,
}

impl Fixture {
    /// Writes `bench.jsonl` and `config.json`; `patch` is merged into the
    /// config object last.
    pub fn new(n_items: usize, patch: Value) -> Self {
        let dir = tempfile::tempdir().unwrap();
        store::write_jsonl(&dir.path().join("bench.jsonl"), &synthetic_items(n_items)).unwrap();
        let mut cfg = json!({
            "frontier": {"kind": "mock", "model_id": "frontier-mock", "mock": {"seed": 7}},
            "proxy": {"kind": "mock", "model_id": "proxy-mock", "mock": {"seed": 11}},
            "benchmarks": [{"name": "toy", "path": "bench.jsonl"}],
            "metrics": ["rbridge", "nll"],
            "checkpoints": checkpoints(),
            "k": 3,
        });
        merge(&mut cfg, patch);
        let config = dir.path().join("config.json");
        fs::write(&config, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        Self { dir, config }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn out(&self) -> PathBuf {
        self.path("run")
    }

    pub fn ctx(&self, overrides: &[&str]) -> RunContext {
        self.ctx_with(overrides, Inputs::default())
    }

    pub fn ctx_with(&self, overrides: &[&str], inputs: Inputs) -> RunContext {
        let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        let cfg = load_config(&self.config, &overrides).unwrap();
        RunContext::new(cfg, self.out(), CREATED_AT)
            .unwrap()
            .with_inputs(inputs)
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

pub fn record(benchmark: &str, dataset: &str, tokens: u64, metric: &str, value: f64) -> ScoreRecord {
    ScoreRecord {
        benchmark: benchmark.into(),
        dataset: dataset.into(),
        checkpoint_tokens: tokens,
        metric: metric.into(),
        value,
        orientation: Orientation::for_metric(metric).unwrap(),
    }
}

/// Target accuracy records computed from the proxy `metric` series by `f`.
pub fn derived_targets(scores: &[ScoreRecord], metric: &str, f: impl Fn(f64) -> f64) -> Vec<ScoreRecord> {
    scores
        .iter()
        .filter(|r| r.metric == metric)
        .map(|r| record(&r.benchmark, &r.dataset, r.checkpoint_tokens, "accuracy", f(r.value)))
        .collect()
}

/// Every file under `root`, relative path to contents, sorted.
pub fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}
