use std::fmt;
use std::path::PathBuf;

use rbridge_core::ranking::zero_shot_transfer;
use rbridge_core::store;
use rbridge_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::fit::FitReportFile;
use crate::{mean, read_scores, target_index, RunContext, FIT_REPORT, TRANSFER_REPORT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub benchmark: String,
    pub dataset: String,
    pub checkpoint_tokens: u64,
    pub metric: String,
    pub proxy_value: f64,
    pub predicted: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abs_error: Option<f64>,
    /// Whether the prediction orders this dataset against every training
    /// dataset at the same checkpoint the way the truth does.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSummaryRow {
    pub metric: String,
    pub predictions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mae: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_correct: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_total: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub target_metric: String,
    pub rows: Vec<TransferRow>,
    pub summary: Vec<TransferSummaryRow>,
}

impl fmt::Display for TransferReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.rows {
            write!(
                f,
                "{}/{}@{} {}: predicted {:.4}",
                r.benchmark, r.dataset, r.checkpoint_tokens, r.metric, r.predicted
            )?;
            if let (Some(t), Some(e)) = (r.truth, r.abs_error) {
                write!(f, " truth {t:.4} |err| {e:.4}")?;
            }
            if let Some(ok) = r.rank_correct {
                write!(f, " rank {}", if ok { "✓" } else { "✗" })?;
            }
            writeln!(f)?;
        }
        for s in &self.summary {
            write!(f, "{}: {} predictions", s.metric, s.predictions)?;
            if let Some(mae) = s.mae {
                write!(f, ", MAE {mae:.4}")?;
            }
            if let (Some(c), Some(t)) = (s.rank_correct, s.rank_total) {
                write!(f, ", rank {c}/{t}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Applies the full-data curves of `fit_report.json` to proxy scores from new
/// pre-training datasets and writes `transfer_report.json`.
pub fn cmd_transfer(ctx: &RunContext) -> Result<TransferReport> {
    let cfg = &ctx.config;
    let fit_path = ctx.out_path(FIT_REPORT);
    if !fit_path.exists() {
        return Err(Error::Config(format!(
            "{} not found; run `rbridge fit` first",
            fit_path.display()
        )));
    }
    let fit: FitReportFile = store::read_json(&fit_path)?;
    let new_path = ctx
        .inputs
        .new_scores
        .clone()
        .or_else(|| cfg.transfer.as_ref().map(|t| cfg.resolve(&t.new_scores)))
        .ok_or_else(|| Error::Config("no new scores: set transfer.new_scores or pass --new-scores".into()))?;
    let truth_path = ctx.inputs.truth.clone().or_else(|| {
        cfg.transfer
            .as_ref()
            .and_then(|t| t.truth.as_deref())
            .map(|p| cfg.resolve(p))
    });
    let new_scores = read_scores(&new_path)?;
    let truth = match &truth_path {
        Some(p) => Some(target_index(&read_scores(p)?, &fit.target_metric, p)?),
        None => None,
    };
    let reference = match (&truth, ctx.targets_path()) {
        (Some(_), Ok(p)) => Some(target_index(&read_scores(&p)?, &fit.target_metric, &p)?),
        _ => None,
    };

    let mut rows = Vec::new();
    for r in &new_scores {
        let Some(curve) = fit.curve(&r.benchmark, &r.metric) else {
            log::warn!("no fitted curve for {}/{}; skipping", r.benchmark, r.metric);
            continue;
        };
        let p = zero_shot_transfer(curve, r.value)?;
        let key = (r.benchmark.clone(), r.dataset.clone(), r.checkpoint_tokens);
        let t = truth.as_ref().and_then(|t| t.get(&key).copied());
        let rank_correct = t.zip(reference.as_ref()).and_then(|(t, refs)| {
            let others: Vec<f64> = refs
                .iter()
                .filter(|((b, d, tok), _)| *b == r.benchmark && *d != r.dataset && *tok == r.checkpoint_tokens)
                .map(|(_, v)| *v)
                .collect();
            (!others.is_empty()).then(|| others.iter().all(|o| sign(p.predicted - o) == sign(t - o)))
        });
        rows.push(TransferRow {
            benchmark: r.benchmark.clone(),
            dataset: r.dataset.clone(),
            checkpoint_tokens: r.checkpoint_tokens,
            metric: r.metric.clone(),
            proxy_value: r.value,
            predicted: p.predicted,
            truth: t,
            abs_error: t.map(|t| (p.predicted - t).abs()),
            rank_correct,
            warning: p.warning,
        });
    }
    if rows.is_empty() {
        return Err(Error::Data(format!(
            "{}: no scores match a fitted (benchmark, metric) curve",
            new_path.display()
        )));
    }

    let summary = cfg
        .metrics
        .iter()
        .filter_map(|metric| {
            let group: Vec<&TransferRow> = rows.iter().filter(|r| &r.metric == metric).collect();
            if group.is_empty() {
                return None;
            }
            let errors: Vec<f64> = group.iter().filter_map(|r| r.abs_error).collect();
            let ranks: Vec<bool> = group.iter().filter_map(|r| r.rank_correct).collect();
            Some(TransferSummaryRow {
                metric: metric.clone(),
                predictions: group.len(),
                mae: (!errors.is_empty()).then(|| mean(&errors)),
                rank_correct: (!ranks.is_empty()).then(|| ranks.iter().filter(|&&c| c).count()),
                rank_total: (!ranks.is_empty()).then_some(ranks.len()),
            })
        })
        .collect();

    let report = TransferReport {
        target_metric: fit.target_metric.clone(),
        rows,
        summary,
    };
    store::write_json(&ctx.out_path(TRANSFER_REPORT), &report)?;
    let mut inputs: Vec<PathBuf> = vec![fit_path, new_path];
    inputs.extend(truth_path);
    ctx.finish_step("transfer", &inputs, &[TRANSFER_REPORT.to_owned()])?;
    Ok(report)
}
