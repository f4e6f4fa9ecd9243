//! Train-and-evaluate sweeps over generator variants.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::config::{AblationMatrix, RunConfig};
use crate::data::Dataset;
use crate::error::{PonaError, Result};
use crate::metrics::{classifier_by_name, evaluate_model, Backends, MetricReport, NearestAnnotationEstimator, METRIC_NAMES};
use crate::model::count_parameters;
use crate::training::{train, Trainer};

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub axis: &'static str,
    pub setting: String,
    pub is_default: bool,
    pub parameters: usize,
    pub report: MetricReport,
    pub run_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationResult>,
}

impl AblationTable {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let mut metrics = serde_json::Map::new();
            for row in &r.report.rows {
                let v = match row.value {
                    crate::metrics::MetricValue::Number(v) => json!(v),
                    crate::metrics::MetricValue::Infinite => json!("inf"),
                };
                metrics.insert(row.metric.to_string(), v);
            }
            let line = json!({
                "axis": r.axis,
                "setting": r.setting,
                "default": r.is_default,
                "parameters": r.parameters,
                "metrics": metrics,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }

    /// One block per axis; the default setting is marked with `*`.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let mut axis = "";
        for r in &self.rows {
            if r.axis != axis {
                axis = r.axis;
                if !out.is_empty() {
                    out.push('\n');
                }
                let _ = write!(out, "{:<12}{:>10}", axis, "params");
                for m in METRIC_NAMES {
                    let _ = write!(out, "{m:>11}");
                }
                out.push('\n');
            }
            let label = format!("{}{}", r.setting, if r.is_default { " *" } else { "" });
            let _ = write!(out, "{:<12}{:>9.3}M", label, r.parameters as f64 / 1e6);
            for m in METRIC_NAMES {
                let v = r.report.get(m).map(|row| row.value.to_string()).unwrap_or_default();
                let _ = write!(out, "{v:>11}");
            }
            out.push('\n');
        }
        out
    }
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '-' }).collect()
}

/// Trains every row of `matrix` on `dataset` under `out_dir/runs/` and
/// evaluates each trained model on the same dataset. Rows with identical
/// configurations share one run.
pub fn run_ablation(matrix: &AblationMatrix, dataset: &Dataset, out_dir: &Path) -> Result<AblationTable> {
    let rows = matrix.rows()?;
    let mut finished: Vec<(RunConfig, usize, MetricReport, PathBuf)> = Vec::new();
    let mut table = AblationTable::default();
    for (i, row) in rows.iter().enumerate() {
        let cached = finished.iter().find(|(c, ..)| *c == row.config).cloned();
        let (parameters, report, run_dir) = match cached {
            Some((_, p, r, d)) => (p, r, d),
            None => {
                let cfg = &row.config;
                let run_dir = out_dir.join("runs").join(format!("{i:02}_{}_{}", row.axis, slug(&row.setting)));
                let mut trainer = Trainer::new(&cfg.generator, &cfg.discriminator, &cfg.training)?;
                train(&mut trainer, dataset, &run_dir)?;
                let classifier = classifier_by_name(&cfg.evaluation.classifier)?;
                if cfg.evaluation.pose_estimator != "nearest" {
                    return Err(PonaError::config(
                        "evaluation.pose_estimator",
                        format!("unknown pose estimator `{}`", cfg.evaluation.pose_estimator),
                    ));
                }
                let estimator = NearestAnnotationEstimator::from_dataset(dataset)?;
                let backends = Backends {
                    classifier: classifier.as_ref(),
                    pose_estimator: &estimator,
                };
                let report = evaluate_model(
                    trainer.model(),
                    trainer.store(),
                    dataset,
                    &backends,
                    cfg.training.sigma,
                    cfg.evaluation.is_splits,
                )?;
                let parameters = count_parameters(&cfg.generator, &cfg.discriminator)?;
                finished.push((cfg.clone(), parameters, report.clone(), run_dir.clone()));
                (parameters, report, run_dir)
            }
        };
        table.rows.push(AblationResult {
            axis: row.axis,
            setting: row.setting.clone(),
            is_default: row.is_default,
            parameters,
            report,
            run_dir,
        });
    }
    Ok(table)
}
