//! Naive reference implementations: per-sample double loops, no shared helpers
//! from the library beyond the input types.

use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NaiveCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

pub struct NaiveMetrics {
    pub groups: Vec<String>,
    pub counts: Vec<NaiveCounts>,
    /// Per group `[tpp, fpp, ppv, npv]`.
    pub rates: Vec<[Option<f64>; 4]>,
    /// `[tpp, fpp, ppv, npv]` parities.
    pub parities: [f64; 4],
    pub max_fpp: Option<f64>,
    pub objective: f64,
    pub accuracy: f64,
    pub f1: f64,
}

fn div(a: u64, b: u64) -> Option<f64> {
    if b == 0 {
        None
    } else {
        Some(a as f64 / b as f64)
    }
}

fn naive_parity(values: &[Option<f64>]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut defined = 0;
    for v in values.iter().flatten() {
        defined += 1;
        if *v < lo {
            lo = *v;
        }
        if *v > hi {
            hi = *v;
        }
    }
    if defined < 2 || hi == 0.0 {
        1.0
    } else {
        lo / hi
    }
}

pub fn naive_metrics(pred: &[u8], y: &[u8], g: &[String]) -> NaiveMetrics {
    let groups: Vec<String> = g.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let mut counts = Vec::new();
    for name in &groups {
        let mut c = NaiveCounts::default();
        for i in 0..pred.len() {
            if &g[i] != name {
                continue;
            }
            if pred[i] == 1 && y[i] == 1 {
                c.tp += 1;
            } else if pred[i] == 1 && y[i] == 0 {
                c.fp += 1;
            } else if pred[i] == 0 && y[i] == 0 {
                c.tn += 1;
            } else {
                c.fn_ += 1;
            }
        }
        counts.push(c);
    }
    let rates: Vec<[Option<f64>; 4]> = counts
        .iter()
        .map(|c| {
            [
                div(c.tp, c.tp + c.fn_),
                div(c.fp, c.fp + c.tn),
                div(c.tp, c.tp + c.fp),
                div(c.tn, c.tn + c.fn_),
            ]
        })
        .collect();
    let column = |k: usize| rates.iter().map(|r| r[k]).collect::<Vec<_>>();
    let parities = [0, 1, 2, 3].map(|k| naive_parity(&column(k)));
    let mut max_fpp: Option<f64> = None;
    for r in &rates {
        if let Some(v) = r[1] {
            max_fpp = Some(match max_fpp {
                Some(m) if m >= v => m,
                _ => v,
            });
        }
    }
    let sq = |v: f64| v * v;
    let objective =
        sq(parities[0]) * sq(parities[1]) * sq(1.0 - max_fpp.unwrap_or(0.0)) * sq(parities[2]) * sq(parities[3]);

    let mut correct = 0u64;
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for i in 0..pred.len() {
        if pred[i] == y[i] {
            correct += 1;
        }
        match (pred[i], y[i]) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    let accuracy = correct as f64 / pred.len() as f64;
    let f1 = if 2 * tp + fp + fn_ == 0 {
        0.0
    } else {
        (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
    };
    NaiveMetrics {
        groups,
        counts,
        rates,
        parities,
        max_fpp,
        objective,
        accuracy,
        f1,
    }
}

/// Objective at every point of the 1001-point grid `k / 1000`, by brute force.
pub fn exhaustive_threshold_grid(p: &[f64], y: &[u8], g: &[String]) -> Vec<(f64, f64)> {
    (0..=1000u32)
        .map(|k| {
            let t = k as f64 / 1000.0;
            let pred: Vec<u8> = p.iter().map(|&v| if v >= t { 1 } else { 0 }).collect();
            (t, naive_metrics(&pred, y, g).objective)
        })
        .collect()
}

/// Group means by a double loop: for each group, for each feature, scan all rows.
pub fn naive_group_means(acts: &[f32], d: usize, g: &[String]) -> (Vec<String>, Vec<Vec<f64>>) {
    let groups: Vec<String> = g.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let mut means = Vec::new();
    for name in &groups {
        let mut row = Vec::with_capacity(d);
        for j in 0..d {
            let mut sum = 0.0f64;
            let mut count = 0usize;
            for i in 0..g.len() {
                if &g[i] == name {
                    sum += acts[i * d + j] as f64;
                    count += 1;
                }
            }
            row.push(sum / count as f64);
        }
        means.push(row);
    }
    (groups, means)
}

/// Positive-class probability of a 2-class linear head, by explicit dot products.
pub fn naive_p_fake(weights: &[Vec<f64>; 2], bias: &[f64; 2], x: &[f32]) -> f64 {
    let mut z = [bias[0], bias[1]];
    for c in 0..2 {
        for j in 0..x.len() {
            z[c] += weights[c][j] * x[j] as f64;
        }
    }
    1.0 / (1.0 + (z[0] - z[1]).exp())
}
