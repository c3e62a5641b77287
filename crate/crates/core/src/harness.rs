//! k-fold comparison of the untouched head against five de-biasing methods.
//!
//! For every fold the held-in part is the calibration/training split: it
//! supplies the variability statistics, the tuned threshold and the
//! retraining data. Every method is then scored on the held-out fold.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::{self, PruneConfig, SweepMode, TrainConfig};
use crate::dataset::{self, ActivationDataset};
use crate::error::Result;
use crate::flip::{self, FlipConfig, GroupFeatureStats};
use crate::head::{self, FinalLayer};
use crate::metrics::{self, FairnessReport};
use crate::report::ReportTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Baseline,
    PreProcess,
    InProcess,
    Threshold,
    Bpfa,
    FairFlip,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Baseline,
        Method::PreProcess,
        Method::InProcess,
        Method::Threshold,
        Method::Bpfa,
        Method::FairFlip,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::PreProcess => "pre-process",
            Method::InProcess => "in-process",
            Method::Threshold => "threshold",
            Method::Bpfa => "bpfa",
            Method::FairFlip => "fair-flip",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Method::Baseline => "Baseline",
            Method::PreProcess => "Pre-Process",
            Method::InProcess => "In-Process",
            Method::Threshold => "Post-Process (Threshold)",
            Method::Bpfa => "Pruning (BPFA)",
            Method::FairFlip => "Fair-FLIP",
        }
    }
}

/// Which part of each fold supplies the variability statistics used by
/// Fair-FLIP and pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatsSource {
    #[default]
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluateConfig {
    pub folds: usize,
    pub seed: u64,
    pub alpha: f64,
    pub fraction: f64,
    pub step: f64,
    pub sweep_mode: SweepMode,
    pub stats_source: StatsSource,
    /// Training settings for the retrained heads; `lambda` applies to the
    /// in-process method only, the undersampled retrain always uses 0.
    pub train: TrainConfig,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 0,
            alpha: flip::DEFAULT_ALPHA,
            fraction: 0.1,
            step: baselines::DEFAULT_STEP,
            sweep_mode: SweepMode::NonDegenerate,
            stats_source: StatsSource::Train,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Ordered by fold, then by [`Method::ALL`].
    pub reports: Vec<FairnessReport>,
    pub warnings: Vec<String>,
}

impl Evaluation {
    pub fn table(&self) -> ReportTable {
        let methods: Vec<(&str, &str)> = Method::ALL.iter().map(|m| (m.key(), m.title())).collect();
        ReportTable::from_reports(&self.reports, &methods)
    }

    pub fn report_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&self.reports)?;
        s.push('\n');
        Ok(s)
    }

    pub fn report_markdown(&self) -> String {
        self.table().to_markdown()
    }
}

/// Runs every method on one fold, with `stats` feeding Fair-FLIP and pruning.
pub fn evaluate_fold(
    head: &FinalLayer,
    train: &ActivationDataset,
    test: &ActivationDataset,
    stats: &GroupFeatureStats,
    fold: usize,
    cfg: &EvaluateConfig,
) -> Result<Vec<FairnessReport>> {
    let fold_seed = cfg.seed.wrapping_add(fold as u64);
    let mut reports = Vec::with_capacity(Method::ALL.len());
    for method in Method::ALL {
        let (scored, threshold) = match method {
            Method::Baseline => (head.clone(), 0.5),
            Method::PreProcess => {
                let balanced = dataset::undersample(train, fold_seed)?;
                let tc = TrainConfig {
                    lambda: 0.0,
                    seed: fold_seed,
                    ..cfg.train
                };
                let mut h = baselines::retrain_head(&balanced, &tc)?;
                h.metadata.insert("method".into(), Value::from(method.key()));
                (h, 0.5)
            }
            Method::InProcess => {
                let tc = TrainConfig {
                    seed: fold_seed,
                    ..cfg.train
                };
                (baselines::retrain_head(train, &tc)?, 0.5)
            }
            Method::Threshold => {
                let probs = head::forward(head, train)?;
                let sweep =
                    baselines::threshold_sweep_with(&probs, train.labels(), train.groups(), cfg.step, cfg.sweep_mode)?;
                (head.clone(), sweep.best_threshold)
            }
            Method::Bpfa => (
                baselines::bpfa_prune(head, stats, &PruneConfig::new(cfg.fraction)?)?,
                0.5,
            ),
            Method::FairFlip => (flip::apply_flip(head, stats, &FlipConfig::new(cfg.alpha)?)?, 0.5),
        };
        reports.push(metrics::build_report(
            &scored,
            test,
            threshold,
            method.key(),
            Some(fold),
        )?);
    }
    Ok(reports)
}

/// Stratified k-fold evaluation of all six methods. Folds run in parallel on
/// the current rayon pool; output order does not depend on scheduling.
pub fn evaluate(head: &FinalLayer, ds: &ActivationDataset, cfg: &EvaluateConfig) -> Result<Evaluation> {
    head.check_dim(ds.d(), "dataset feature count")?;
    let plan = dataset::kfold_split(ds, cfg.folds, cfg.seed)?;
    let mut warnings = plan.warnings.clone();
    let all_stats = match cfg.stats_source {
        StatsSource::All => Some(GroupFeatureStats::compute(ds)?),
        _ => None,
    };

    let per_fold: Vec<Result<(Vec<FairnessReport>, Vec<String>)>> = (0..cfg.folds)
        .into_par_iter()
        .map(|fold| {
            let (train_idx, test_idx) = plan.train_test(fold);
            let train = ds.subset(&train_idx)?;
            let test = ds.subset(&test_idx)?;
            let test_groups = test.group_sizes();
            let missing: Vec<String> = train
                .group_sizes()
                .keys()
                .filter(|g| !test_groups.contains_key(*g))
                .map(|g| format!("fold {fold}: group {g} absent from held-out split; ignored"))
                .collect();
            let stats = match (&all_stats, cfg.stats_source) {
                (Some(s), _) => s.clone(),
                (None, StatsSource::Test) => GroupFeatureStats::compute(&test)?,
                (None, _) => GroupFeatureStats::compute(&train)?,
            };
            Ok((evaluate_fold(head, &train, &test, &stats, fold, cfg)?, missing))
        })
        .collect();

    let mut reports = Vec::with_capacity(cfg.folds * Method::ALL.len());
    for r in per_fold {
        let (fold_reports, fold_warnings) = r?;
        reports.extend(fold_reports);
        warnings.extend(fold_warnings);
    }
    Ok(Evaluation { reports, warnings })
}
