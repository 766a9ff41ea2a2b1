use std::collections::BTreeMap;
use std::fmt;

use rbridge_core::ranking::{decision_accuracy, kendall_tau, pair_decisions, pareto_indices, PairDecision};
use rbridge_core::store;
use rbridge_core::{ComputePoint, DatasetScore, Error, Orientation, Result};
use serde::{Deserialize, Serialize};

use crate::{mean, read_scores, target_index, RunContext, RANKING_REPORT};

/// Ranking agreement for one benchmark, metric and proxy checkpoint size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub benchmark: String,
    pub metric: String,
    pub checkpoint_tokens: u64,
    pub orientation: Orientation,
    pub datasets: usize,
    pub dacc: f64,
    /// Absent when every proxy or every target value is tied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub pairs: Vec<PairDecision>,
}

/// Mean over benchmarks for one metric at one checkpoint size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankAverage {
    pub metric: String,
    pub checkpoint_tokens: u64,
    pub benchmarks: usize,
    pub dacc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputeRow {
    pub metric: String,
    #[serde(flatten)]
    pub point: ComputePoint,
    pub pareto: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub target_metric: String,
    pub rows: Vec<RankRow>,
    pub averages: Vec<RankAverage>,
    /// Average DAcc against proxy training compute, per metric.
    pub compute: Vec<ComputeRow>,
}

impl fmt::Display for RankingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<20} {:>12} {:>10} {:>8} {:>8}",
            "metric", "tokens", "benchmarks", "DAcc", "tau"
        )?;
        for a in &self.averages {
            writeln!(
                f,
                "{:<20} {:>12} {:>10} {:>8.4} {:>8}",
                a.metric,
                a.checkpoint_tokens,
                a.benchmarks,
                a.dacc,
                a.tau.map_or_else(|| "-".into(), |t| format!("{t:.4}"))
            )?;
        }
        Ok(())
    }
}

/// Ranks datasets by each proxy metric at every checkpoint size and compares
/// with the target ranking. A dataset's target value is its score at its
/// largest target checkpoint. Writes `ranking_report.json`.
pub fn cmd_rank(ctx: &RunContext) -> Result<RankingReport> {
    let cfg = &ctx.config;
    let scores_path = ctx.scores_path();
    let targets_path = ctx.targets_path()?;
    let proxy = read_scores(&scores_path)?;
    let targets = target_index(&read_scores(&targets_path)?, &cfg.target_metric, &targets_path)?;

    // (benchmark, dataset) -> value at the largest target checkpoint
    let mut final_target: BTreeMap<(&str, &str), (u64, f64)> = BTreeMap::new();
    for ((b, d, t), v) in &targets {
        let e = final_target.entry((b.as_str(), d.as_str())).or_insert((*t, *v));
        if *t >= e.0 {
            *e = (*t, *v);
        }
    }

    let mut rows = Vec::new();
    for bench in &cfg.benchmarks {
        for metric in &cfg.metrics {
            let mut by_tokens: BTreeMap<u64, Vec<DatasetScore>> = BTreeMap::new();
            for r in proxy
                .iter()
                .filter(|r| r.benchmark == bench.name && &r.metric == metric)
            {
                let Some((_, target)) = final_target.get(&(r.benchmark.as_str(), r.dataset.as_str())) else {
                    return Err(Error::Data(format!(
                        "no target score for benchmark {}, dataset {}",
                        r.benchmark, r.dataset
                    )));
                };
                by_tokens
                    .entry(r.checkpoint_tokens)
                    .or_default()
                    .push(DatasetScore::new(r.dataset.clone(), r.value, r.orientation, *target));
            }
            for (tokens, mut scores) in by_tokens {
                if scores.len() < 2 {
                    continue;
                }
                scores.sort_by(|a, b| a.dataset.cmp(&b.dataset));
                let tau = match kendall_tau(&scores) {
                    Ok(t) => Some(t),
                    Err(Error::UndefinedCorrelation(msg)) => {
                        log::warn!("{}/{metric}@{tokens}: {msg}", bench.name);
                        None
                    }
                    Err(e) => return Err(e),
                };
                rows.push(RankRow {
                    benchmark: bench.name.clone(),
                    metric: metric.clone(),
                    checkpoint_tokens: tokens,
                    orientation: scores[0].proxy_orientation,
                    datasets: scores.len(),
                    dacc: decision_accuracy(&scores)?,
                    tau,
                    pairs: pair_decisions(&scores)?,
                });
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Data(
            "no checkpoint size has proxy scores for two or more datasets".into(),
        ));
    }

    let mut averages = Vec::new();
    for metric in &cfg.metrics {
        let mut by_tokens: BTreeMap<u64, Vec<&RankRow>> = BTreeMap::new();
        for r in rows.iter().filter(|r| &r.metric == metric) {
            by_tokens.entry(r.checkpoint_tokens).or_default().push(r);
        }
        for (tokens, group) in by_tokens {
            let taus: Vec<f64> = group.iter().filter_map(|r| r.tau).collect();
            averages.push(RankAverage {
                metric: metric.clone(),
                checkpoint_tokens: tokens,
                benchmarks: group.len(),
                dacc: mean(&group.iter().map(|r| r.dacc).collect::<Vec<_>>()),
                tau: (taus.len() == group.len()).then(|| mean(&taus)),
            });
        }
    }

    let params_at = |tokens: u64| {
        cfg.checkpoints
            .iter()
            .filter(|c| c.tokens == tokens)
            .find_map(|c| c.params)
    };
    let mut compute = Vec::new();
    for metric in &cfg.metrics {
        let points: Vec<ComputePoint> = averages
            .iter()
            .filter(|a| &a.metric == metric)
            .filter_map(|a| params_at(a.checkpoint_tokens).map(|p| ComputePoint::new(p, a.checkpoint_tokens, a.dacc)))
            .collect();
        let frontier = pareto_indices(&points);
        compute.extend(points.into_iter().enumerate().map(|(i, point)| ComputeRow {
            metric: metric.clone(),
            point,
            pareto: frontier.contains(&i),
        }));
    }

    let report = RankingReport {
        target_metric: cfg.target_metric.clone(),
        rows,
        averages,
        compute,
    };
    store::write_json(&ctx.out_path(RANKING_REPORT), &report)?;
    ctx.finish_step("rank", &[scores_path, targets_path], &[RANKING_REPORT.to_owned()])?;
    Ok(report)
}
