//! Comparison methods: global decision-threshold tuning, bias pruning over the
//! same variability score Fair-FLIP uses, and retraining the head with a
//! fairness penalty on soft (probability-weighted) confusion counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{ActivationDataset, GroupCodes};
use crate::error::{Error, Result};
use crate::flip::GroupFeatureStats;
use crate::head::{softmax2, FinalLayer, ProbabilityMatrix, CLASSES};
use crate::metrics::{self, Counts};

pub const DEFAULT_STEP: f64 = 0.001;

// ---------------------------------------------------------------------------
// Threshold tuning
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweep {
    pub best_threshold: f64,
    pub best_objective: f64,
    /// `(threshold, objective)` for every grid point, ascending.
    pub trace: Vec<(f64, f64)>,
}

impl ThresholdSweep {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("threshold,objective\n");
        for (t, o) in &self.trace {
            let _ = writeln!(out, "{t},{o}");
        }
        out
    }
}

fn check_inputs(probs: &ProbabilityMatrix, y: &[u8], g: &[String]) -> Result<()> {
    if probs.len() != y.len() || y.len() != g.len() {
        return Err(Error::LengthMismatch(format!(
            "probabilities {}, labels {}, groups {}",
            probs.len(),
            y.len(),
            g.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::LengthMismatch("no samples".into()));
    }
    Ok(())
}

/// `true` if `a` should replace the incumbent `b` among equal objectives:
/// closer to 0.5 wins, then the smaller threshold.
fn preferred_on_tie(a: f64, b: f64) -> bool {
    // Distances are compared on a 1e-9 lattice so that 0.499 and 0.501 on a
    // 0.001 grid count as equally close.
    let dist = |t: f64| ((t - 0.5).abs() * 1e9).round();
    let (da, db) = (dist(a), dist(b));
    da < db || (da == db && a < b)
}

/// Which grid points may be returned as the best threshold. The trace always
/// holds every point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    /// Any grid point.
    #[default]
    Exhaustive,
    /// Only points where all four parities are genuine min/max ratios.
    /// Near-constant predictions otherwise reach objective 1 through the
    /// all-zero and too-few-groups parity rules. Falls back to
    /// [`SweepMode::Exhaustive`] when no point qualifies.
    NonDegenerate,
}

/// Exhaustive search over the inclusive grid `{0, step, ..., 1}` for the
/// global threshold maximising the fairness objective.
pub fn threshold_sweep(probs: &ProbabilityMatrix, y: &[u8], g: &[String], step: f64) -> Result<ThresholdSweep> {
    threshold_sweep_with(probs, y, g, step, SweepMode::Exhaustive)
}

pub fn threshold_sweep_with(
    probs: &ProbabilityMatrix,
    y: &[u8],
    g: &[String],
    step: f64,
    mode: SweepMode,
) -> Result<ThresholdSweep> {
    check_inputs(probs, y, g)?;
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidArgument(format!("step must lie in (0, 1], got {step}")));
    }
    let codes = GroupCodes::encode(g);
    let p: Vec<f64> = probs.positive().collect();
    let grid = crate::grid::inclusive(step, 1.0);

    let evaluated: Vec<(f64, f64, bool)> = grid
        .par_iter()
        .map(|&t| {
            let mut counts = vec![Counts::default(); codes.len()];
            for ((&pi, &yi), &c) in p.iter().zip(y).zip(&codes.codes) {
                counts[c].record(u8::from(pi >= t), yi);
            }
            let parities = metrics::parities_from_counts(&counts);
            (t, parities.objective(), parities.any_degenerate())
        })
        .collect();

    let pick = |admissible: &dyn Fn(bool) -> bool| {
        let mut best: Option<(f64, f64)> = None;
        for &(t, o, degenerate) in &evaluated {
            if !admissible(degenerate) {
                continue;
            }
            best = match best {
                Some(b) if !(o > b.1 || (o == b.1 && preferred_on_tie(t, b.0))) => Some(b),
                _ => Some((t, o)),
            };
        }
        best
    };
    let best = match mode {
        SweepMode::Exhaustive => None,
        SweepMode::NonDegenerate => pick(&|degenerate| !degenerate),
    }
    .or_else(|| pick(&|_| true))
    .expect("grid is never empty");
    let trace = evaluated.into_iter().map(|(t, o, _)| (t, o)).collect();
    Ok(ThresholdSweep {
        best_threshold: best.0,
        best_objective: best.1,
        trace,
    })
}

// ---------------------------------------------------------------------------
// Pruning
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Share of features whose outgoing weights are zeroed.
    pub fraction: f64,
}

impl PruneConfig {
    pub fn new(fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::InvalidConfig(format!(
                "prune fraction {fraction} outside [0, 1]"
            )));
        }
        Ok(Self { fraction })
    }
}

/// `ceil(fraction * d)`, ignoring float noise such as `0.1 * 30 = 3.0000000000000004`.
pub fn prune_count(fraction: f64, d: usize) -> usize {
    ((fraction * d as f64 - 1e-9).ceil().max(0.0) as usize).min(d)
}

/// Features to prune: highest score first, lower index first among ties.
pub fn prune_selection(sigma_hat: &[f64], fraction: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sigma_hat.len()).collect();
    order.sort_by(|&a, &b| sigma_hat[b].total_cmp(&sigma_hat[a]));
    order.truncate(prune_count(fraction, sigma_hat.len()));
    order.sort_unstable();
    order
}

/// Zeroes every outgoing weight of the `ceil(fraction * d)` features with the
/// highest normalised between-group variability. The bias is left as is.
pub fn bpfa_prune(head: &FinalLayer, stats: &GroupFeatureStats, cfg: &PruneConfig) -> Result<FinalLayer> {
    PruneConfig::new(cfg.fraction)?;
    head.check_dim(stats.d(), "statistics feature count")?;
    let pruned = prune_selection(&stats.sigma_hat, cfg.fraction);
    let mut weights = head.weights().clone();
    for row in weights.iter_mut() {
        for &i in &pruned {
            row[i] = 0.0;
        }
    }
    let mut out = FinalLayer::new(weights, *head.bias())?;
    out.metadata = head.metadata.clone();
    out.metadata.insert("method".into(), Value::from("bpfa"));
    out.metadata.insert("fraction".into(), Value::from(cfg.fraction));
    out.metadata.insert("pruned_features".into(), Value::from(pruned));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Soft counts and penalised retraining
// ---------------------------------------------------------------------------

/// Probability-weighted confusion counts of one group.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SoftCounts {
    pub tp: f64,
    pub fp: f64,
    pub tn: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
}

fn soft_counts_coded(p_fake: &[f64], y: &[u8], codes: &[usize], n_groups: usize) -> Vec<SoftCounts> {
    let mut tp = vec![0.0; n_groups];
    let mut fp = vec![0.0; n_groups];
    let mut pos = vec![0u64; n_groups];
    let mut neg = vec![0u64; n_groups];
    for ((&p, &t), &c) in p_fake.iter().zip(y).zip(codes) {
        if t == 1 {
            tp[c] += p;
            pos[c] += 1;
        } else {
            fp[c] += p;
            neg[c] += 1;
        }
    }
    (0..n_groups)
        .map(|a| SoftCounts {
            tp: tp[a],
            fn_: pos[a] as f64 - tp[a],
            fp: fp[a],
            tn: neg[a] as f64 - fp[a],
        })
        .collect()
}

/// Soft TP/FN sum `P(fake)` and `1 - P(fake)` over a group's positives; soft
/// FP/TN likewise over its negatives. Complements are taken by subtraction
/// from the integer counts, so `tp + fn` and `fp + tn` equal them exactly.
pub fn soft_confusion(probs: &ProbabilityMatrix, y: &[u8], g: &[String]) -> Result<BTreeMap<String, SoftCounts>> {
    check_inputs(probs, y, g)?;
    let codes = GroupCodes::encode(g);
    let p: Vec<f64> = probs.positive().collect();
    Ok(codes
        .tokens
        .iter()
        .cloned()
        .zip(soft_counts_coded(&p, y, &codes.codes, codes.len()))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            epochs: 30,
            batch_size: 64,
            learning_rate: 0.1,
            seed: 0,
            l2: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidConfig("lambda must be finite and >= 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be finite and positive".into()));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::InvalidConfig("l2 must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// One mini-batch: borrowed activation rows with labels and dense group codes.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub rows: Vec<&'a [f32]>,
    pub labels: Vec<u8>,
    pub codes: Vec<usize>,
    pub n_groups: usize,
}

impl<'a> Batch<'a> {
    pub fn from_indices(ds: &'a ActivationDataset, codes: &GroupCodes, indices: &[usize]) -> Self {
        Self {
            rows: indices.iter().map(|&i| ds.row(i)).collect(),
            labels: indices.iter().map(|&i| ds.labels()[i]).collect(),
            codes: indices.iter().map(|&i| codes.codes[i]).collect(),
            n_groups: codes.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: [Vec<f64>; CLASSES],
    pub bias: [f64; CLASSES],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub cross_entropy: f64,
    pub penalty: f64,
    pub l2: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.cross_entropy + self.penalty + self.l2
    }
}

/// Min/max ratio of per-group soft rates, with the indices of the extreme
/// groups. `None` if fewer than two groups have a non-empty denominator.
fn soft_parity(rates: &[Option<f64>]) -> Option<(f64, usize, usize)> {
    let defined: Vec<(usize, f64)> = rates
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|r| (i, r)))
        .collect();
    if defined.len() < 2 {
        return None;
    }
    let (mut lo, mut hi) = (defined[0], defined[0]);
    for &(i, r) in &defined[1..] {
        if r < lo.1 {
            lo = (i, r);
        }
        if r > hi.1 {
            hi = (i, r);
        }
    }
    if hi.1 == 0.0 {
        return None;
    }
    Some((lo.1 / hi.1, lo.0, hi.0))
}

struct SoftParityTerm {
    value: f64,
    /// `(group, d value / d group rate)` for the two extreme groups.
    partials: [(usize, f64); 2],
}

fn soft_parity_term(rates: &[Option<f64>]) -> SoftParityTerm {
    match soft_parity(rates) {
        Some((value, lo, hi)) if lo != hi => {
            let (rlo, rhi) = (rates[lo].unwrap(), rates[hi].unwrap());
            SoftParityTerm {
                value,
                partials: [(lo, 1.0 / rhi), (hi, -rlo / (rhi * rhi))],
            }
        }
        Some((value, lo, _)) => SoftParityTerm {
            value,
            partials: [(lo, 0.0), (lo, 0.0)],
        },
        None => SoftParityTerm {
            value: 1.0,
            partials: [(0, 0.0), (0, 0.0)],
        },
    }
}

/// Mean cross-entropy plus `lambda (1 - TPP)^2 (1 - FPP)^2` plus an optional
/// L2 term on the weights, and its gradient with respect to every head
/// parameter.
///
/// TPP and FPP are min/max parities of the batch's per-group soft
/// true-positive and false-positive rates; groups without positives
/// (respectively negatives) in the batch are skipped, and a parity over fewer
/// than two groups is 1.
pub fn loss_and_gradient(head: &FinalLayer, batch: &Batch<'_>, lambda: f64, l2: f64) -> (LossParts, Gradient) {
    let b = batch.len() as f64;
    let g = batch.n_groups;
    let mut p = Vec::with_capacity(batch.len());
    let mut ce = 0.0;
    for (x, &y) in batch.rows.iter().zip(&batch.labels) {
        let z = head.logits(x);
        let m = z[0].max(z[1]);
        let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
        ce += lse - z[y as usize];
        p.push(softmax2(z)[1]);
    }
    ce /= b;

    // Soft per-group rates.
    let mut pos = vec![0usize; g];
    let mut neg = vec![0usize; g];
    for (&y, &c) in batch.labels.iter().zip(&batch.codes) {
        if y == 1 {
            pos[c] += 1
        } else {
            neg[c] += 1
        }
    }
    let soft = soft_counts_coded(&p, &batch.labels, &batch.codes, g);
    let tpr: Vec<Option<f64>> = (0..g)
        .map(|a| (pos[a] > 0).then(|| soft[a].tp / pos[a] as f64))
        .collect();
    let fpr: Vec<Option<f64>> = (0..g)
        .map(|a| (neg[a] > 0).then(|| soft[a].fp / neg[a] as f64))
        .collect();
    let tpp = soft_parity_term(&tpr);
    let fpp = soft_parity_term(&fpr);
    let (gap_t, gap_f) = (1.0 - tpp.value, 1.0 - fpp.value);
    let penalty = lambda * gap_t * gap_t * gap_f * gap_f;
    let d_pen_d_tpp = -2.0 * lambda * gap_t * gap_f * gap_f;
    let d_pen_d_fpp = -2.0 * lambda * gap_t * gap_t * gap_f;

    // d penalty / d rate_a, per group.
    let mut d_tpr = vec![0.0; g];
    let mut d_fpr = vec![0.0; g];
    for (a, dv) in tpp.partials {
        d_tpr[a] += d_pen_d_tpp * dv;
    }
    for (a, dv) in fpp.partials {
        d_fpr[a] += d_pen_d_fpp * dv;
    }

    let d = head.d();
    let mut grad = Gradient {
        weights: [vec![0.0; d], vec![0.0; d]],
        bias: [0.0; CLASSES],
    };
    for (i, x) in batch.rows.iter().enumerate() {
        let (y, c) = (batch.labels[i], batch.codes[i]);
        // d loss / d (z1 - z0)
        let d_rate = if y == 1 {
            d_tpr[c] / pos[c] as f64
        } else {
            d_fpr[c] / neg[c] as f64
        };
        let gi = (p[i] - y as f64) / b + d_rate * p[i] * (1.0 - p[i]);
        for (j, &v) in x.iter().enumerate() {
            grad.weights[1][j] += gi * v as f64;
        }
        grad.bias[1] += gi;
    }
    for j in 0..d {
        grad.weights[0][j] = -grad.weights[1][j];
    }
    grad.bias[0] = -grad.bias[1];

    let mut l2_term = 0.0;
    if l2 > 0.0 {
        for c in 0..CLASSES {
            for (gw, w) in grad.weights[c].iter_mut().zip(&head.weights()[c]) {
                *gw += l2 * w;
                l2_term += 0.5 * l2 * w * w;
            }
        }
    }

    (
        LossParts {
            cross_entropy: ce,
            penalty,
            l2: l2_term,
        },
        grad,
    )
}

/// `head - lr * grad`.
pub fn descend(head: &FinalLayer, grad: &Gradient, lr: f64) -> Result<FinalLayer> {
    let weights = [0, 1].map(|c| {
        head.weights()[c]
            .iter()
            .zip(&grad.weights[c])
            .map(|(w, g)| w - lr * g)
            .collect()
    });
    let bias = [0, 1].map(|c| head.bias()[c] - lr * grad.bias[c]);
    FinalLayer::new(weights, bias)
}

/// Trains a fresh head over frozen activations by mini-batch gradient descent
/// on [`loss_and_gradient`]. Weights start at zero; each epoch visits the
/// samples in an order drawn from a single seeded stream.
pub fn retrain_head(ds: &ActivationDataset, cfg: &TrainConfig) -> Result<FinalLayer> {
    cfg.validate()?;
    let codes = GroupCodes::encode(ds.groups());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..ds.n()).collect();
    let mut head = FinalLayer::zeros(ds.d())?;
    let mut step = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = Batch::from_indices(ds, &codes, chunk);
            let (loss, grad) = loss_and_gradient(&head, &batch, cfg.lambda, cfg.l2);
            if !loss.total().is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            head = descend(&head, &grad, cfg.learning_rate).map_err(|_| Error::NonFiniteLoss { step })?;
            step += 1;
        }
    }
    head.metadata.insert("method".into(), Value::from("in-process"));
    head.metadata.insert("lambda".into(), Value::from(cfg.lambda));
    head.metadata.insert("epochs".into(), Value::from(cfg.epochs));
    head.metadata.insert("batch_size".into(), Value::from(cfg.batch_size));
    head.metadata
        .insert("learning_rate".into(), Value::from(cfg.learning_rate));
    head.metadata.insert("seed".into(), Value::from(cfg.seed));
    Ok(head)
}
