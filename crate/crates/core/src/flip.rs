//! Fair-FLIP: final-layer input reweighting.
//!
//! Activations of an annotated calibration set are averaged per group; each
//! feature's spread across those group means is min-max normalised to a score
//! `s_i` in `[0, 1]`, and every outgoing weight of feature `i` is multiplied
//! by `1 + alpha - s_i`. Features that vary across groups are demoted, stable
//! ones promoted. The adjusted head needs no group information at inference.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{ActivationDataset, GroupCodes};
use crate::error::{Error, Result};
use crate::fsio;
use crate::head::FinalLayer;
use crate::metrics;

pub const DEFAULT_ALPHA: f64 = 0.25;

/// Per-group mean activations, before any variability is measured.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMeans {
    pub groups: Vec<String>,
    pub counts: Vec<usize>,
    /// `groups.len() x d`.
    pub means: Vec<Vec<f64>>,
}

/// Accumulates group means in one pass over `(row, group_code)` pairs.
pub fn accumulate_group_means<'a, I>(d: usize, n_groups: usize, rows: I) -> (Vec<usize>, Vec<Vec<f64>>)
where
    I: IntoIterator<Item = (&'a [f32], usize)>,
{
    let mut sums = vec![vec![0.0f64; d]; n_groups];
    let mut counts = vec![0usize; n_groups];
    for (row, g) in rows {
        counts[g] += 1;
        for (s, &v) in sums[g].iter_mut().zip(row) {
            *s += v as f64;
        }
    }
    for (sum, &c) in sums.iter_mut().zip(&counts) {
        let c = c as f64;
        sum.iter_mut().for_each(|s| *s /= c);
    }
    (counts, sums)
}

pub fn group_feature_means(ds: &ActivationDataset) -> Result<GroupMeans> {
    if ds.n() == 0 {
        return Err(Error::InvalidDataset("empty dataset".into()));
    }
    let codes = GroupCodes::encode(ds.groups());
    let (counts, means) = accumulate_group_means(ds.d(), codes.len(), ds.rows().zip(codes.codes.iter().copied()));
    Ok(GroupMeans {
        groups: codes.tokens,
        counts,
        means,
    })
}

/// Population standard deviation of each feature's group means, every group
/// weighted equally. Values are sorted before summation so the result does
/// not depend on group order; identical means give exactly 0.
pub fn between_group_std(means: &GroupMeans) -> Vec<f64> {
    let d = means.means.first().map_or(0, Vec::len);
    let g = means.means.len() as f64;
    let mut column = Vec::with_capacity(means.means.len());
    (0..d)
        .map(|i| {
            column.clear();
            column.extend(means.means.iter().map(|m| m[i]));
            column.sort_by(f64::total_cmp);
            if column.first() == column.last() {
                return 0.0;
            }
            let mean = column.iter().sum::<f64>() / g;
            let var = column.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / g;
            var.sqrt()
        })
        .collect()
}

/// Min-max normalisation to `[0, 1]`; a constant vector maps to all zeros.
pub fn normalize_variability(sigma: &[f64]) -> Vec<f64> {
    let min = sigma.iter().copied().fold(f64::INFINITY, f64::min);
    let max = sigma.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= min {
        return vec![0.0; sigma.len()];
    }
    let range = max - min;
    sigma.iter().map(|s| (s - min) / range).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFeatureStats {
    pub groups: Vec<String>,
    pub counts: Vec<usize>,
    pub group_means: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    pub sigma_hat: Vec<f64>,
}

impl GroupFeatureStats {
    pub fn compute(ds: &ActivationDataset) -> Result<Self> {
        let means = group_feature_means(ds)?;
        let sigma = between_group_std(&means);
        let sigma_hat = normalize_variability(&sigma);
        Ok(Self {
            groups: means.groups,
            counts: means.counts,
            group_means: means.means,
            sigma,
            sigma_hat,
        })
    }

    pub fn d(&self) -> usize {
        self.sigma_hat.len()
    }

    /// Short content hash recorded in the metadata of heads derived from
    /// these statistics.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("stats serialize");
        fsio::sha256_hex(&json)[..16].to_string()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsio::write_atomic(path, self.to_json()?.as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipConfig {
    pub alpha: f64,
}

impl Default for FlipConfig {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA }
    }
}

impl FlipConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be finite and >= 0, got {alpha}"
            )));
        }
        Ok(Self { alpha })
    }
}

/// Per-feature multipliers `1 + alpha - s_i`.
pub fn flip_factors(stats: &GroupFeatureStats, cfg: &FlipConfig) -> Vec<f64> {
    stats.sigma_hat.iter().map(|s| 1.0 + cfg.alpha - s).collect()
}

pub fn apply_flip(head: &FinalLayer, stats: &GroupFeatureStats, cfg: &FlipConfig) -> Result<FinalLayer> {
    FlipConfig::new(cfg.alpha)?;
    head.check_dim(stats.d(), "statistics feature count")?;
    let mut out = head.scale_columns(&flip_factors(stats, cfg))?;
    out.metadata.insert("method".into(), Value::from("fair-flip"));
    out.metadata.insert("alpha".into(), Value::from(cfg.alpha));
    out.metadata.insert("stats_digest".into(), Value::from(stats.digest()));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub accuracy: f64,
    pub tpp_parity: f64,
    pub fpp_parity: f64,
    pub ppv_parity: f64,
    pub npv_parity: f64,
}

/// `{0, step, 2 step, ..., max}` with `max` included.
pub fn alpha_grid(step: f64, max: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) || !(max >= 0.0 && max.is_finite()) {
        return Err(Error::InvalidArgument(format!("bad alpha grid step={step} max={max}")));
    }
    Ok(crate::grid::inclusive(step, max))
}

pub fn alpha_sweep(
    head: &FinalLayer,
    calib: &ActivationDataset,
    eval: &ActivationDataset,
    grid: &[f64],
) -> Result<Vec<SweepRow>> {
    let stats = GroupFeatureStats::compute(calib)?;
    alpha_sweep_with_stats(head, &stats, eval, grid)
}

/// Evaluates Fair-FLIP at every alpha in `grid` (ascending) on `eval`, at
/// threshold 0.5, reusing one set of statistics.
pub fn alpha_sweep_with_stats(
    head: &FinalLayer,
    stats: &GroupFeatureStats,
    eval: &ActivationDataset,
    grid: &[f64],
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("alpha grid is empty".into()));
    }
    let mut grid = grid.to_vec();
    for &a in &grid {
        FlipConfig::new(a)?;
    }
    grid.sort_by(f64::total_cmp);
    grid.par_iter()
        .map(|&alpha| {
            let flipped = apply_flip(head, stats, &FlipConfig { alpha })?;
            let r = metrics::build_report(&flipped, eval, 0.5, "fair-flip", None)?;
            Ok(SweepRow {
                alpha,
                accuracy: r.accuracy,
                tpp_parity: r.tpp_parity,
                fpp_parity: r.fpp_parity,
                ppv_parity: r.ppv_parity,
                npv_parity: r.npv_parity,
            })
        })
        .collect()
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("alpha,accuracy,tpp_parity,fpp_parity,ppv_parity,npv_parity\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.alpha, r.accuracy, r.tpp_parity, r.fpp_parity, r.ppv_parity, r.npv_parity
        );
    }
    out
}
