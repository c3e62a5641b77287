//! Per-group confusion counts, the four group rates (TPP, FPP, PPV, NPV),
//! min/max parities, the composite fairness objective, and accuracy/F1.
//!
//! A rate whose denominator is zero is `None` ("undefined") rather than NaN.
//! Parities skip undefined values; if fewer than two values are defined, or
//! every defined value is zero, the parity is 1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{ActivationDataset, GroupCodes};
use crate::error::{Error, Result};
use crate::head::{self, FinalLayer};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    #[inline]
    pub fn record(&mut self, pred: u8, truth: u8) {
        match (pred, truth) {
            (1, 1) => self.tp += 1,
            (1, _) => self.fp += 1,
            (_, 1) => self.fn_ += 1,
            _ => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn add(&mut self, other: &Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    pub fn rates(&self) -> Rates {
        Rates {
            tpp: ratio(self.tp, self.tp + self.fn_),
            fpp: ratio(self.fp, self.fp + self.tn),
            ppv: ratio(self.tp, self.tp + self.fp),
            npv: ratio(self.tn, self.tn + self.fn_),
        }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionByGroup {
    pub groups: BTreeMap<String, Counts>,
    pub overall: Counts,
}

fn check_lengths(pred: &[u8], y: &[u8], g: Option<&[String]>) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::LengthMismatch("no samples".into()));
    }
    if pred.len() != y.len() || g.is_some_and(|g| g.len() != y.len()) {
        return Err(Error::LengthMismatch(format!(
            "predictions {}, labels {}, groups {}",
            pred.len(),
            y.len(),
            g.map_or(y.len(), <[String]>::len)
        )));
    }
    Ok(())
}

/// Counts per dense group code. Used on hot paths where the group tokens have
/// already been encoded once.
pub fn confusion_coded(pred: &[u8], y: &[u8], codes: &[usize], n_groups: usize) -> Vec<Counts> {
    let mut counts = vec![Counts::default(); n_groups];
    for ((&p, &t), &c) in pred.iter().zip(y).zip(codes) {
        counts[c].record(p, t);
    }
    counts
}

pub fn confusion_by_group(pred: &[u8], y: &[u8], g: &[String]) -> Result<ConfusionByGroup> {
    check_lengths(pred, y, Some(g))?;
    let codes = GroupCodes::encode(g);
    Ok(assemble(
        &codes.tokens,
        confusion_coded(pred, y, &codes.codes, codes.len()),
    ))
}

fn assemble(tokens: &[String], counts: Vec<Counts>) -> ConfusionByGroup {
    let mut overall = Counts::default();
    counts.iter().for_each(|c| overall.add(c));
    ConfusionByGroup {
        groups: tokens.iter().cloned().zip(counts).collect(),
        overall,
    }
}

/// TPP, FPP, PPV and NPV of one group; `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub tpp: Option<f64>,
    pub fpp: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
}

pub type GroupMetrics = BTreeMap<String, Rates>;

pub fn group_metrics(c: &ConfusionByGroup) -> GroupMetrics {
    c.groups.iter().map(|(g, k)| (g.clone(), k.rates())).collect()
}

/// How a parity value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParityBasis {
    /// `min / max` over at least two defined values.
    Ratio,
    /// Every defined value is zero; reported as 1.
    AllZero,
    /// Fewer than two defined values; reported as 1.
    TooFewGroups,
}

/// Min/max ratio over the defined values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Parity {
    pub value: f64,
    pub basis: ParityBasis,
}

impl Parity {
    /// The value came from a fallback rule rather than an actual ratio.
    pub fn is_degenerate(&self) -> bool {
        self.basis != ParityBasis::Ratio
    }
}

pub fn parity(values: &[Option<f64>]) -> Parity {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.len() < 2 {
        return Parity {
            value: 1.0,
            basis: ParityBasis::TooFewGroups,
        };
    }
    let min = defined.iter().copied().fold(f64::INFINITY, f64::min);
    let max = defined.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == 0.0 {
        return Parity {
            value: 1.0,
            basis: ParityBasis::AllZero,
        };
    }
    Parity {
        value: min / max,
        basis: ParityBasis::Ratio,
    }
}

/// The four parities plus the worst (largest) group false-positive rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Parities {
    pub tpp: Parity,
    pub fpp: Parity,
    pub ppv: Parity,
    pub npv: Parity,
    pub max_fpp: Option<f64>,
}

impl Parities {
    pub fn from_rates<'a>(rates: impl IntoIterator<Item = &'a Rates>) -> Self {
        let rates: Vec<&Rates> = rates.into_iter().collect();
        let column = |f: fn(&Rates) -> Option<f64>| rates.iter().map(|r| f(r)).collect::<Vec<_>>();
        let fpps = column(|r| r.fpp);
        Self {
            tpp: parity(&column(|r| r.tpp)),
            fpp: parity(&fpps),
            ppv: parity(&column(|r| r.ppv)),
            npv: parity(&column(|r| r.npv)),
            max_fpp: fpps.iter().flatten().copied().reduce(f64::max),
        }
    }

    pub fn any_degenerate(&self) -> bool {
        [self.tpp, self.fpp, self.ppv, self.npv]
            .iter()
            .any(Parity::is_degenerate)
    }

    /// `TPP² · FPP² · (1 - max FPP_a)² · PPV² · NPV²`, with the FPP penalty
    /// factor taken as 1 when no group has a defined false-positive rate.
    pub fn objective(&self) -> f64 {
        let worst = 1.0 - self.max_fpp.unwrap_or(0.0);
        [self.tpp.value, self.fpp.value, worst, self.ppv.value, self.npv.value]
            .iter()
            .map(|v| v * v)
            .product()
    }
}

pub fn fairness_objective(m: &GroupMetrics) -> f64 {
    Parities::from_rates(m.values()).objective()
}

/// Parities straight from per-group counts, skipping empty groups; used by
/// the threshold sweep.
pub fn parities_from_counts(counts: &[Counts]) -> Parities {
    let rates: Vec<Rates> = counts.iter().filter(|c| c.total() > 0).map(Counts::rates).collect();
    Parities::from_rates(&rates)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub accuracy: f64,
    pub f1: f64,
    /// No positive labels and no positive predictions; F1 was set to 0.
    pub f1_degenerate: bool,
}

pub fn scores_from_counts(c: &Counts) -> Scores {
    let accuracy = (c.tp + c.tn) as f64 / c.total() as f64;
    let den = 2 * c.tp + c.fp + c.fn_;
    Scores {
        accuracy,
        f1: if den == 0 { 0.0 } else { (2 * c.tp) as f64 / den as f64 },
        f1_degenerate: den == 0,
    }
}

pub fn overall_scores(pred: &[u8], y: &[u8]) -> Result<Scores> {
    check_lengths(pred, y, None)?;
    let mut c = Counts::default();
    pred.iter().zip(y).for_each(|(&p, &t)| c.record(p, t));
    Ok(scores_from_counts(&c))
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub method: String,
    pub fold: Option<usize>,
    pub threshold: f64,
    pub samples: usize,
    pub accuracy: f64,
    pub f1: f64,
    pub confusion: ConfusionByGroup,
    pub group_metrics: GroupMetrics,
    pub tpp_parity: f64,
    pub fpp_parity: f64,
    pub ppv_parity: f64,
    pub npv_parity: f64,
    pub max_fpp: Option<f64>,
    pub objective: f64,
    pub warnings: Vec<String>,
}

pub fn report_from_predictions(
    pred: &[u8],
    y: &[u8],
    g: &[String],
    threshold: f64,
    method: &str,
    fold: Option<usize>,
) -> Result<FairnessReport> {
    let confusion = confusion_by_group(pred, y, g)?;
    let metrics = group_metrics(&confusion);
    let parities = Parities::from_rates(metrics.values());
    let scores = scores_from_counts(&confusion.overall);

    let mut warnings = Vec::new();
    if scores.f1_degenerate {
        warnings.push("F1 undefined (no positive labels or predictions); reported as 0".to_string());
    }
    for (g, r) in &metrics {
        for (name, v) in [("TPP", r.tpp), ("FPP", r.fpp), ("PPV", r.ppv), ("NPV", r.npv)] {
            if v.is_none() {
                warnings.push(format!("group {g}: {name} undefined (zero denominator)"));
            }
        }
    }
    for (name, p) in [
        ("TPP", parities.tpp),
        ("FPP", parities.fpp),
        ("PPV", parities.ppv),
        ("NPV", parities.npv),
    ] {
        match p.basis {
            ParityBasis::TooFewGroups => {
                warnings.push(format!("{name} parity defined for fewer than 2 groups; reported as 1"))
            }
            ParityBasis::AllZero => warnings.push(format!("{name} is zero in every group; parity reported as 1")),
            ParityBasis::Ratio => {}
        }
    }

    Ok(FairnessReport {
        method: method.to_string(),
        fold,
        threshold,
        samples: pred.len(),
        accuracy: scores.accuracy,
        f1: scores.f1,
        confusion,
        group_metrics: metrics,
        tpp_parity: parities.tpp.value,
        fpp_parity: parities.fpp.value,
        ppv_parity: parities.ppv.value,
        npv_parity: parities.npv.value,
        max_fpp: parities.max_fpp,
        objective: parities.objective(),
        warnings,
    })
}

/// forward -> predict -> confusion -> rates -> parities -> objective.
pub fn build_report(
    head: &FinalLayer,
    ds: &ActivationDataset,
    threshold: f64,
    method: &str,
    fold: Option<usize>,
) -> Result<FairnessReport> {
    let probs = head::forward(head, ds)?;
    let pred = head::predict(&probs, threshold)?;
    report_from_predictions(&pred, ds.labels(), ds.groups(), threshold, method, fold)
}
