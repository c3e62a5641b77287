//! Cross-validation tables: one block per metric, one column per method, one
//! row per fold plus an `Avg. (Std)` row (sample standard deviation).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::metrics::FairnessReport;

pub const METRIC_NAMES: [&str; 6] = ["Accuracy", "F1-Score", "TPP", "FPP", "PPV", "NPV"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub name: String,
    /// `folds[f][m]` is the value of method `m` on fold `f`.
    pub folds: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub methods: Vec<String>,
    pub metrics: Vec<MetricBlock>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl MetricBlock {
    pub fn column(&self, method: usize) -> Vec<f64> {
        self.folds.iter().map(|row| row[method]).collect()
    }
}

impl ReportTable {
    /// Arranges per-(method, fold) reports into a table. `methods` pairs the
    /// report's method key with the column title; folds are ordered by id.
    pub fn from_reports(reports: &[FairnessReport], methods: &[(&str, &str)]) -> Self {
        let mut folds: Vec<usize> = reports.iter().filter_map(|r| r.fold).collect();
        folds.sort_unstable();
        folds.dedup();
        let lookup = |key: &str, fold: usize| reports.iter().find(|r| r.method == key && r.fold == Some(fold));
        let metrics = METRIC_NAMES
            .iter()
            .map(|&name| MetricBlock {
                name: name.to_string(),
                folds: folds
                    .iter()
                    .map(|&f| {
                        methods
                            .iter()
                            .map(|(key, _)| lookup(key, f).map_or(f64::NAN, |r| metric_value(r, name)))
                            .collect()
                    })
                    .collect(),
            })
            .collect();
        Self {
            methods: methods.iter().map(|(_, title)| title.to_string()).collect(),
            metrics,
        }
    }

    pub fn metric(&self, name: &str) -> Option<&MetricBlock> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn method_index(&self, title: &str) -> Option<usize> {
        self.methods.iter().position(|m| m == title)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "| Metric | Fold | {} |", self.methods.join(" | "));
        let _ = writeln!(out, "|---|---|{}", "---:|".repeat(self.methods.len()));
        for block in &self.metrics {
            for (f, row) in block.folds.iter().enumerate() {
                let label = if f == 0 { block.name.as_str() } else { "" };
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
                let _ = writeln!(out, "| {label} | {} | {} |", f + 1, cells.join(" | "));
            }
            let summary: Vec<String> = (0..self.methods.len())
                .map(|m| {
                    let (mean, std) = mean_std(&block.column(m));
                    format!("**{mean:.4} ({std:.4})**")
                })
                .collect();
            let label = if block.folds.is_empty() {
                block.name.as_str()
            } else {
                ""
            };
            let _ = writeln!(out, "| {label} | **Avg. (Std)** | {} |", summary.join(" | "));
        }
        out
    }
}

fn metric_value(r: &FairnessReport, name: &str) -> f64 {
    match name {
        "Accuracy" => r.accuracy,
        "F1-Score" => r.f1,
        "TPP" => r.tpp_parity,
        "FPP" => r.fpp_parity,
        "PPV" => r.ppv_parity,
        "NPV" => r.npv_parity,
        _ => f64::NAN,
    }
}
