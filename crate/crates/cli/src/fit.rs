use std::collections::BTreeMap;
use std::fmt;

use rbridge_core::curvefit::{kfold_cv, select_best};
use rbridge_core::store;
use rbridge_core::{Error, FitPoint, FitReport, FittedCurve, Result, ScoreRecord};
use serde::{Deserialize, Serialize};

use crate::{mean, read_scores, target_index, RunContext, FIT_REPORT};

/// Cross-validated fit of one proxy metric against the target on one benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub benchmark: String,
    pub metric: String,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv: Option<FitReport>,
    /// Best curve on all points; this is what `transfer` applies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<FittedCurve>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Per-metric averages over the benchmarks whose fit succeeded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummaryRow {
    pub metric: String,
    pub benchmarks: usize,
    pub avg_train_r2: Option<f64>,
    pub avg_test_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReportFile {
    pub target_metric: String,
    pub k: usize,
    pub rows: Vec<FitRow>,
    /// In config metric order.
    pub summary: Vec<FitSummaryRow>,
}

impl FitReportFile {
    pub fn curve(&self, benchmark: &str, metric: &str) -> Option<&FittedCurve> {
        self.rows
            .iter()
            .find(|r| r.benchmark == benchmark && r.metric == metric)
            .and_then(|r| r.curve.as_ref())
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

impl fmt::Display for FitReportFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<20} {:>10} {:>14} {:>14}",
            "metric", "benchmarks", "avg train R2", "avg test MAE"
        )?;
        for s in &self.summary {
            writeln!(
                f,
                "{:<20} {:>10} {:>14} {:>14}",
                s.metric,
                s.benchmarks,
                fmt_opt(s.avg_train_r2),
                fmt_opt(s.avg_test_mae)
            )?;
        }
        Ok(())
    }
}

/// Pairs proxy points with target values at the same benchmark, dataset and
/// checkpoint; a proxy point without a target is an error.
pub(crate) fn join_points(
    proxy: &[ScoreRecord],
    targets: &BTreeMap<(String, String, u64), f64>,
    benchmark: &str,
    metric: &str,
) -> Result<Vec<FitPoint>> {
    proxy
        .iter()
        .filter(|r| r.benchmark == benchmark && r.metric == metric)
        .map(|r| {
            let key = (r.benchmark.clone(), r.dataset.clone(), r.checkpoint_tokens);
            let y = targets.get(&key).ok_or_else(|| {
                Error::Data(format!(
                    "no target score for benchmark {benchmark}, dataset {}, checkpoint {}",
                    r.dataset, r.checkpoint_tokens
                ))
            })?;
            Ok(FitPoint {
                x: r.value,
                y: *y,
                checkpoint_tokens: r.checkpoint_tokens,
            })
        })
        .collect()
}

fn fit_row(points: &[FitPoint], k: usize, benchmark: &str, metric: &str) -> FitRow {
    let result = kfold_cv(points, k).and_then(|cv| Ok((cv, select_best(points)?)));
    let (cv, curve, error) = match result {
        Ok((cv, curve)) => (Some(cv), Some(curve), None),
        Err(e) => {
            log::warn!("{benchmark}/{metric}: {e}");
            (None, None, Some(e.to_string()))
        }
    };
    FitRow {
        benchmark: benchmark.to_owned(),
        metric: metric.to_owned(),
        n: points.len(),
        cv,
        curve,
        error,
    }
}

/// Fits every (benchmark, metric) proxy series against the target metric with
/// k-fold cross-validation and writes `fit_report.json`.
pub fn cmd_fit(ctx: &RunContext) -> Result<FitReportFile> {
    let cfg = &ctx.config;
    let scores_path = ctx.scores_path();
    let targets_path = ctx.targets_path()?;
    let proxy = read_scores(&scores_path)?;
    let targets = target_index(&read_scores(&targets_path)?, &cfg.target_metric, &targets_path)?;

    let mut rows = Vec::new();
    for bench in &cfg.benchmarks {
        for metric in &cfg.metrics {
            let points = join_points(&proxy, &targets, &bench.name, metric)?;
            if points.is_empty() {
                continue;
            }
            rows.push(fit_row(&points, cfg.k, &bench.name, metric));
        }
    }
    if rows.is_empty() {
        return Err(Error::Data(format!(
            "{}: no proxy scores for the configured benchmarks and metrics",
            scores_path.display()
        )));
    }

    let summary = cfg
        .metrics
        .iter()
        .map(|metric| {
            let ok: Vec<&FitReport> = rows
                .iter()
                .filter(|r| &r.metric == metric)
                .filter_map(|r| r.cv.as_ref())
                .collect();
            let avg =
                |f: fn(&FitReport) -> f64| (!ok.is_empty()).then(|| mean(&ok.iter().map(|r| f(r)).collect::<Vec<_>>()));
            FitSummaryRow {
                metric: metric.clone(),
                benchmarks: ok.len(),
                avg_train_r2: avg(|r| r.avg_train_r2),
                avg_test_mae: avg(|r| r.avg_test_mae),
            }
        })
        .collect();

    let report = FitReportFile {
        target_metric: cfg.target_metric.clone(),
        k: cfg.k,
        rows,
        summary,
    };
    store::write_json(&ctx.out_path(FIT_REPORT), &report)?;
    ctx.finish_step("fit", &[scores_path, targets_path], &[FIT_REPORT.to_owned()])?;
    Ok(report)
}
