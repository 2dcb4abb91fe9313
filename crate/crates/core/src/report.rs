//! Metrics reports: JSON documents and plain-text tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::LossBreakdown;
use crate::model::ModelConfig;
use crate::trainer::{TrainConfig, Variant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over the epoch's batches.
    pub train: LossBreakdown,
    pub valid_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub test_accuracy: Option<f64>,
    pub best_epoch: usize,
    pub best_valid_accuracy: f64,
    pub epochs: Vec<EpochRecord>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

/// Report of a multi-seed training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub kind: String,
    pub variant: Option<Variant>,
    pub model: ModelConfig,
    pub config: TrainConfig,
    pub seeds: Vec<SeedResult>,
    pub mean_test_accuracy: Option<f64>,
    pub std_test_accuracy: Option<f64>,
}

impl RunReport {
    pub fn new(kind: &str, variant: Option<Variant>, model: ModelConfig, config: TrainConfig, seeds: Vec<SeedResult>) -> Self {
        let accs: Option<Vec<f64>> = seeds.iter().map(|s| s.test_accuracy).collect();
        let stats = accs.as_deref().and_then(mean_std);
        Self {
            kind: kind.into(),
            variant,
            model,
            config,
            seeds,
            mean_test_accuracy: stats.map(|s| s.0),
            std_test_accuracy: stats.map(|s| s.1),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub accuracies: Vec<f64>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub runs: Vec<SeedResult>,
    /// `(seed, error)` of runs that did not finish.
    pub failures: Vec<(u64, String)>,
}

impl AblationCell {
    pub fn new(runs: Vec<SeedResult>, failures: Vec<(u64, String)>) -> Self {
        let accuracies: Vec<f64> = runs.iter().filter_map(|r| r.test_accuracy).collect();
        let stats = mean_std(&accuracies);
        Self {
            accuracies,
            mean: stats.map(|s| s.0),
            std: stats.map(|s| s.1),
            runs,
            failures,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub label: String,
    /// One cell per student configuration.
    pub cells: Vec<AblationCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub teacher_accuracy: f64,
    pub teacher_config: ModelConfig,
    pub columns: Vec<String>,
    pub student_configs: Vec<ModelConfig>,
    pub train_config: TrainConfig,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    /// Mean test accuracy of `variant` for student column `col`.
    pub fn mean(&self, v: Variant, col: usize) -> Option<f64> {
        self.row(v).and_then(|r| r.cells.get(col)).and_then(|c| c.mean)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Accuracy table: one row per variant plus the teacher, one column per
    /// student configuration.
    pub fn to_table(&self) -> String {
        let label_w = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .chain(["teacher (common)".len()])
            .max()
            .unwrap_or(0);
        let col_w = self.columns.iter().map(String::len).max().unwrap_or(0).max(16);
        let mut out = String::new();
        let _ = write!(out, "{:label_w$}", "");
        for c in &self.columns {
            let _ = write!(out, "  {c:>col_w$}");
        }
        out.push('\n');
        let _ = write!(out, "{:label_w$}", "teacher (common)");
        for _ in &self.columns {
            let _ = write!(out, "  {:>col_w$}", format!("{:.2}", self.teacher_accuracy));
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{:label_w$}", row.label);
            for cell in &row.cells {
                let text = match (cell.mean, cell.std) {
                    (Some(m), Some(s)) => format!("{m:.2} ± {s:.2}"),
                    _ => "failed".into(),
                };
                let text = if cell.failures.is_empty() || cell.mean.is_none() {
                    text
                } else {
                    format!("{text} ({} failed)", cell.failures.len())
                };
                let _ = write!(out, "  {text:>col_w$}");
            }
            out.push('\n');
        }
        out
    }
}
