use std::cell::OnceCell;
use std::collections::BTreeMap;
use std::path::PathBuf;

use rbridge_core::parallel::ordered_map;
use rbridge_core::providers::{ProviderHandle, ProxyTokenNLL, Role};
use rbridge_core::scoring::{
    accuracy, benchmark_aggregate, build_label, extract_generated_answer, mc_metrics, mpca, plain_nll, score_trace,
    ted, LabelVariant, MC_METRICS,
};
use rbridge_core::store::{self, Checkpoint};
use rbridge_core::{BenchmarkItem, Error, Orientation, Result, ScoreRecord, TracedExample};

use crate::trace::trace_rel;
use crate::{RunContext, SCORES};

fn needs_trace(metric: &str) -> bool {
    matches!(metric, "rbridge" | "nll_rphi" | "nll_scb")
}

/// Per-item inputs shared by every metric of one item.
struct ItemJob<'a> {
    item: &'a BenchmarkItem,
    trace: Option<&'a TracedExample>,
}

struct ItemScorer<'a> {
    ctx: &'a RunContext,
    proxy: &'a ProviderHandle,
    job: &'a ItemJob<'a>,
    context: String,
    answer_nlls: OnceCell<Vec<ProxyTokenNLL>>,
    generated: OnceCell<String>,
}

impl ItemScorer<'_> {
    fn answer_nlls(&self) -> Result<&[ProxyTokenNLL]> {
        if let Some(v) = self.answer_nlls.get() {
            return Ok(v);
        }
        let v = self.proxy.proxy_token_nlls(&self.context, &self.job.item.gold_answer)?;
        Ok(self.answer_nlls.get_or_init(|| v))
    }

    fn generated_answer(&self) -> Result<&str> {
        if let Some(v) = self.generated.get() {
            return Ok(v);
        }
        let generation = &self.ctx.config.generation;
        let text = self
            .proxy
            .proxy_generate(&self.context, generation.max_tokens, &generation.stop)?;
        Ok(self.generated.get_or_init(|| extract_generated_answer(&text)))
    }

    fn label_nll(&self, variant: LabelVariant) -> Result<f64> {
        let label = build_label(
            variant,
            self.job.item,
            self.job.trace,
            &self.ctx.config.scb_suffix_template,
        )?;
        plain_nll(&self.proxy.proxy_token_nlls(&self.context, &label)?)
    }

    /// `None` when the metric does not apply to this item.
    fn metric(&self, name: &str) -> Result<Option<f64>> {
        let item = self.job.item;
        if needs_trace(name) && self.job.trace.is_none() {
            return Ok(None);
        }
        if MC_METRICS.contains(&name) && !item.is_multiple_choice() {
            return Ok(None);
        }
        let value = match name {
            "rbridge" => {
                let trace = self.job.trace.expect("checked above");
                let nlls = self.proxy.proxy_token_nlls(&self.context, &trace.reasoning)?;
                score_trace(trace, &nlls)?.value
            }
            "nll" => plain_nll(self.answer_nlls()?)?,
            "nll_rphi" => self.label_nll(LabelVariant::Reasoning)?,
            "nll_scb" => self.label_nll(LabelVariant::ReasoningWithAnswer)?,
            "mpca" => {
                let nlls: Vec<f64> = self.answer_nlls()?.iter().map(|t| t.nll).collect();
                mpca(&nlls)?
            }
            "ted" => {
                let generated = self.generated_answer()?;
                let a: Vec<&str> = generated.split_whitespace().collect();
                let b: Vec<&str> = item.gold_answer.split_whitespace().collect();
                ted(&a, &b) as f64
            }
            "accuracy" => f64::from(accuracy(self.generated_answer()?, &item.gold_answer)),
            mc => {
                let options = item.options.as_deref().unwrap_or_default();
                let mut sums = Vec::with_capacity(options.len());
                let mut lengths = Vec::with_capacity(options.len());
                for option in options {
                    let nlls = self.proxy.proxy_token_nlls(&self.context, option)?;
                    sums.push(nlls.iter().map(|t| t.nll).sum());
                    lengths.push(option.chars().count());
                }
                let correct = item.correct_option_index.expect("multiple-choice item has an index");
                mc_metrics(&sums, correct, &lengths)?
                    .get(mc)
                    .ok_or_else(|| Error::Config(format!("unknown metric {mc}")))?
            }
        };
        Ok(Some(value))
    }
}

fn score_item(ctx: &RunContext, proxy: &ProviderHandle, job: &ItemJob<'_>) -> Result<Vec<Option<f64>>> {
    let scorer = ItemScorer {
        ctx,
        proxy,
        job,
        context: ctx.config.context_for(job.item),
        answer_nlls: OnceCell::new(),
        generated: OnceCell::new(),
    };
    ctx.config
        .metrics
        .iter()
        .map(|m| scorer.metric(m))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| match e {
            Error::InvalidInput(msg) => Error::Data(format!("item {}: {msg}", job.item.id)),
            other => other,
        })
}

fn checkpoint_provider(ctx: &RunContext, checkpoint: &Checkpoint) -> Result<ProviderHandle> {
    let mut cfg = ctx.config.resolved_provider(&ctx.config.proxy);
    if let Some(model_id) = &checkpoint.model_id {
        cfg.model_id = model_id.clone();
    }
    ProviderHandle::open(cfg, Role::Proxy)
}

/// Scores every benchmark under every proxy checkpoint and writes
/// `scores.jsonl`, checkpoint-major in config order.
pub fn cmd_score(ctx: &RunContext) -> Result<Vec<ScoreRecord>> {
    let cfg = &ctx.config;
    let wants_traces = cfg.metrics.iter().any(|m| needs_trace(m));
    let mut benchmarks = Vec::with_capacity(cfg.benchmarks.len());
    let mut inputs: Vec<PathBuf> = Vec::new();
    for bench in &cfg.benchmarks {
        let path = cfg.resolve(&bench.path);
        let items: Vec<BenchmarkItem> = store::read_jsonl(&path)?;
        rbridge_core::trace::validate_benchmark(&items)?;
        inputs.push(path);
        let traces: Vec<TracedExample> = if wants_traces {
            let trace_path = ctx.out_path(&trace_rel(&bench.name));
            if !trace_path.exists() {
                return Err(Error::Config(format!(
                    "no traces for benchmark {}; run `rbridge trace` first",
                    bench.name
                )));
            }
            let traces = store::read_jsonl(&trace_path)?;
            inputs.push(trace_path);
            traces
        } else {
            Vec::new()
        };
        benchmarks.push((bench, items, traces));
    }

    let mut records = Vec::new();
    for checkpoint in cfg.effective_checkpoints() {
        let proxy = checkpoint_provider(ctx, &checkpoint)?;
        for (bench, items, traces) in &benchmarks {
            let by_id: BTreeMap<&str, &TracedExample> = traces.iter().map(|t| (t.item_id.as_str(), t)).collect();
            let jobs: Vec<ItemJob<'_>> = items
                .iter()
                .map(|item| ItemJob {
                    item,
                    trace: by_id.get(item.id.as_str()).copied(),
                })
                .collect();
            let per_item = ordered_map(&jobs, proxy.max_inflight(), |job| score_item(ctx, &proxy, job))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            for (m, metric) in cfg.metrics.iter().enumerate() {
                let values: Vec<f64> = per_item.iter().filter_map(|v| v[m]).collect();
                if values.is_empty() {
                    return Err(Error::Data(format!(
                        "metric {metric} has no applicable items in benchmark {}",
                        bench.name
                    )));
                }
                let orientation = Orientation::for_metric(metric)
                    .ok_or_else(|| Error::Config(format!("metric {metric} has no known orientation")))?;
                records.push(ScoreRecord {
                    benchmark: bench.name.clone(),
                    dataset: checkpoint.dataset.clone(),
                    checkpoint_tokens: checkpoint.tokens,
                    metric: metric.clone(),
                    value: benchmark_aggregate(&values, cfg.aggregate)?,
                    orientation,
                });
            }
        }
        log::info!(
            "{}@{}: {} proxy calls",
            checkpoint.dataset,
            checkpoint.tokens,
            proxy.backend_calls()
        );
    }
    store::write_jsonl(&ctx.out_path(SCORES), &records)?;
    ctx.finish_step("score", &inputs, &[SCORES.to_owned()])?;
    Ok(records)
}
