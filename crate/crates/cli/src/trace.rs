use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use rbridge_core::providers::{ProviderHandle, Role};
use rbridge_core::store;
use rbridge_core::trace::acquire_traces;
use rbridge_core::{BenchmarkItem, Error, Result};
use serde::Serialize;

use crate::RunContext;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BenchmarkTraceSummary {
    pub items: usize,
    pub traced: usize,
    pub dropped: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TraceSummary {
    pub benchmarks: BTreeMap<String, BenchmarkTraceSummary>,
    /// Requests that reached the frontier backend (replay hits excluded).
    #[serde(skip)]
    pub frontier_calls: usize,
}

impl fmt::Display for TraceSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, s) in &self.benchmarks {
            writeln!(f, "{name}: {} traced, {} dropped", s.traced, s.dropped.len())?;
        }
        write!(f, "frontier calls: {}", self.frontier_calls)
    }
}

pub(crate) fn trace_rel(benchmark: &str) -> String {
    format!("traces/{benchmark}.jsonl")
}

/// Generates frontier traces for every configured benchmark and writes
/// `traces/<benchmark>.jsonl` plus `traces/summary.json`.
pub fn cmd_trace(ctx: &RunContext) -> Result<TraceSummary> {
    let cfg = &ctx.config;
    let frontier = ProviderHandle::open(cfg.resolved_provider(&cfg.frontier), Role::Frontier)?;
    let mut summary = TraceSummary::default();
    let mut inputs: Vec<PathBuf> = Vec::new();
    let mut outputs = Vec::new();
    for bench in &cfg.benchmarks {
        let path = cfg.resolve(&bench.path);
        let items: Vec<BenchmarkItem> = store::read_jsonl(&path)?;
        inputs.push(path);
        let rel = trace_rel(&bench.name);
        let acq = match acquire_traces(&items, &frontier) {
            Ok(acq) => acq,
            Err(Error::PartialResults {
                completed,
                dropped,
                source,
            }) => {
                store::write_jsonl(&ctx.out_path(&rel), &completed)?;
                return Err(Error::PartialResults {
                    completed,
                    dropped,
                    source,
                });
            }
            Err(e) => return Err(e),
        };
        store::write_jsonl(&ctx.out_path(&rel), &acq.traces)?;
        outputs.push(rel);
        summary.benchmarks.insert(
            bench.name.clone(),
            BenchmarkTraceSummary {
                items: items.len(),
                traced: acq.traces.len(),
                dropped: acq.dropped,
            },
        );
    }
    summary.frontier_calls = frontier.backend_calls();
    store::write_json(&ctx.out_path("traces/summary.json"), &summary)?;
    outputs.push("traces/summary.json".into());
    ctx.finish_step("trace", &inputs, &outputs)?;
    Ok(summary)
}
