//! CSV bundles for plotting.
//!
//! | file | header |
//! |------|--------|
//! | `report/series/<benchmark>__<metric>.csv` | `dataset,checkpoint_tokens,value` |
//! | `report/fit_summary.csv` | `metric,benchmarks,avg_train_r2,avg_test_mae` |
//! | `report/fit_rows.csv` | `benchmark,metric,n,family,train_r2,avg_train_r2,avg_test_mae,error` |
//! | `report/ranking.csv` | `benchmark,metric,checkpoint_tokens,datasets,dacc,tau` |
//! | `report/dacc_vs_flops.csv` | `metric,model_params,trained_tokens,flops,dacc,pareto` |
//! | `report/transfer.csv` | `benchmark,dataset,checkpoint_tokens,metric,proxy_value,predicted,truth,abs_error,rank_correct` |

use std::collections::BTreeMap;
use std::path::Path;

use rbridge_core::store;
use rbridge_core::{Error, Result};

use crate::fit::FitReportFile;
use crate::rank::RankingReport;
use crate::transfer::TransferReport;
use crate::{read_scores, FIT_REPORT, RANKING_REPORT, SCORES, TRANSFER_REPORT};

fn safe_name(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

struct Bundle<'a> {
    out: &'a Path,
    written: Vec<String>,
}

impl Bundle<'_> {
    fn write(&mut self, rel: String, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
        let path = self.out.join(&rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::Io {
                path: dir.to_owned(),
                source: e,
            })?;
        }
        let csv_err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record(header).map_err(csv_err)?;
        for row in rows {
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        self.written.push(rel);
        Ok(())
    }
}

/// Writes CSVs for every artifact present in `run_dir` and returns their
/// paths relative to it. A run directory with no artifacts is an error.
pub fn cmd_report(run_dir: &Path) -> Result<Vec<String>> {
    let out = run_dir;
    let mut bundle = Bundle {
        out,
        written: Vec::new(),
    };

    let scores_path = out.join(SCORES);
    if scores_path.exists() {
        type Series = Vec<(String, u64, f64)>;
        let mut series: BTreeMap<(String, String), Series> = BTreeMap::new();
        for r in read_scores(&scores_path)? {
            series
                .entry((r.benchmark, r.metric))
                .or_default()
                .push((r.dataset, r.checkpoint_tokens, r.value));
        }
        for ((benchmark, metric), mut points) in series {
            points.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
            let rows = points
                .into_iter()
                .map(|(d, t, v)| vec![d, t.to_string(), v.to_string()])
                .collect();
            bundle.write(
                format!("report/series/{}__{}.csv", safe_name(&benchmark), safe_name(&metric)),
                &["dataset", "checkpoint_tokens", "value"],
                rows,
            )?;
        }
    }

    let fit_path = out.join(FIT_REPORT);
    if fit_path.exists() {
        let fit: FitReportFile = store::read_json(&fit_path)?;
        let rows = fit
            .summary
            .iter()
            .map(|s| {
                vec![
                    s.metric.clone(),
                    s.benchmarks.to_string(),
                    opt(s.avg_train_r2),
                    opt(s.avg_test_mae),
                ]
            })
            .collect();
        bundle.write(
            "report/fit_summary.csv".into(),
            &["metric", "benchmarks", "avg_train_r2", "avg_test_mae"],
            rows,
        )?;
        let rows = fit
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.benchmark.clone(),
                    r.metric.clone(),
                    r.n.to_string(),
                    opt(r.curve.as_ref().map(|c| c.family.name())),
                    opt(r.curve.as_ref().map(|c| c.train_r2)),
                    opt(r.cv.as_ref().map(|c| c.avg_train_r2)),
                    opt(r.cv.as_ref().map(|c| c.avg_test_mae)),
                    r.error.clone().unwrap_or_default(),
                ]
            })
            .collect();
        bundle.write(
            "report/fit_rows.csv".into(),
            &[
                "benchmark",
                "metric",
                "n",
                "family",
                "train_r2",
                "avg_train_r2",
                "avg_test_mae",
                "error",
            ],
            rows,
        )?;
    }

    let rank_path = out.join(RANKING_REPORT);
    if rank_path.exists() {
        let rank: RankingReport = store::read_json(&rank_path)?;
        let rows = rank
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.benchmark.clone(),
                    r.metric.clone(),
                    r.checkpoint_tokens.to_string(),
                    r.datasets.to_string(),
                    r.dacc.to_string(),
                    opt(r.tau),
                ]
            })
            .collect();
        bundle.write(
            "report/ranking.csv".into(),
            &["benchmark", "metric", "checkpoint_tokens", "datasets", "dacc", "tau"],
            rows,
        )?;
        let rows = rank
            .compute
            .iter()
            .map(|c| {
                vec![
                    c.metric.clone(),
                    c.point.model_params.to_string(),
                    c.point.trained_tokens.to_string(),
                    c.point.flops.to_string(),
                    c.point.dacc.to_string(),
                    c.pareto.to_string(),
                ]
            })
            .collect();
        bundle.write(
            "report/dacc_vs_flops.csv".into(),
            &["metric", "model_params", "trained_tokens", "flops", "dacc", "pareto"],
            rows,
        )?;
    }

    let transfer_path = out.join(TRANSFER_REPORT);
    if transfer_path.exists() {
        let transfer: TransferReport = store::read_json(&transfer_path)?;
        let rows = transfer
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.benchmark.clone(),
                    r.dataset.clone(),
                    r.checkpoint_tokens.to_string(),
                    r.metric.clone(),
                    r.proxy_value.to_string(),
                    r.predicted.to_string(),
                    opt(r.truth),
                    opt(r.abs_error),
                    opt(r.rank_correct),
                ]
            })
            .collect();
        bundle.write(
            "report/transfer.csv".into(),
            &[
                "benchmark",
                "dataset",
                "checkpoint_tokens",
                "metric",
                "proxy_value",
                "predicted",
                "truth",
                "abs_error",
                "rank_correct",
            ],
            rows,
        )?;
    }

    if bundle.written.is_empty() {
        return Err(Error::Data(format!("{}: no run artifacts to report on", out.display())));
    }
    Ok(bundle.written)
}
