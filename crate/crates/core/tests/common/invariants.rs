//! Property checks over generated inputs. Each function runs `cases` cases
//! through a proptest runner and reports the first failure as a string.

use std::collections::BTreeMap;

use fairhead::baselines::{self, Batch, PruneConfig};
use fairhead::dataset::{self, ActivationDataset, GroupCodes};
use fairhead::flip::{self, FlipConfig, GroupFeatureStats};
use fairhead::head::{self, FinalLayer, ProbabilityMatrix};
use fairhead::metrics::{self, Parities};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::seq::SliceRandom;
use rand::Rng;

use super::{random_dataset, random_groups, random_head, random_labels, random_probs, rng, token};

type Check = fn(u32) -> Result<(), String>;

pub const ALL: &[(&str, Check)] = &[
    ("sigma_hat bounds and extremes", sigma_hat_bounds),
    ("flip sign preservation", flip_sign_preservation),
    ("flip multiplier strictly decreasing in sigma_hat", flip_monotonicity),
    ("group-permutation invariance", group_permutation_invariance),
    ("single-pass group means", single_pass_means),
    ("uniform-scaling prediction invariance", uniform_scaling_invariance),
    ("parities and objective in [0, 1]", parity_objective_bounds),
    ("counting conservation", counting_conservation),
    ("group-relabeling invariance of metrics", relabeling_invariance),
    ("accuracy from totals", accuracy_from_totals),
    ("pruning sparsity", pruning_sparsity),
    ("soft-count conservation", soft_count_conservation),
    ("dataset save/load round trip", dataset_round_trip),
    ("head save/load round trip", head_round_trip),
    ("fold partition", fold_partition),
    ("undersample", undersample_property),
    ("softmax rows and shift invariance", softmax_properties),
    ("threshold sweep optimality and determinism", sweep_optimality),
    ("penalty monotonicity", penalty_monotonicity),
];

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn run<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

/// `(seed, n, d, n_groups)`.
fn dataset_shape() -> impl Strategy<Value = (u64, usize, usize, usize)> {
    (any::<u64>(), 4usize..60, 1usize..8, 1usize..5).prop_map(|(s, n, d, g)| (s, n.max(g), d, g))
}

fn stats_of(ds: &ActivationDataset) -> GroupFeatureStats {
    GroupFeatureStats::compute(ds).unwrap()
}

pub fn sigma_hat_bounds(cases: u32) -> Result<(), String> {
    run(cases, (dataset_shape(), 0.0f32..5.0), |((seed, n, d, g), shift)| {
        let st = stats_of(&random_dataset(seed, n, d, g, shift));
        prop_assert!(st.sigma.iter().all(|&s| s >= 0.0));
        prop_assert!(st.sigma_hat.iter().all(|&s| (0.0..=1.0).contains(&s)));
        let lo = st.sigma.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = st.sigma.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            prop_assert!(st.sigma_hat.contains(&0.0));
            prop_assert!(st.sigma_hat.contains(&1.0));
        } else {
            prop_assert!(st.sigma_hat.iter().all(|&s| s == 0.0));
        }
        Ok(())
    })
}

pub fn flip_sign_preservation(cases: u32) -> Result<(), String> {
    run(
        cases,
        (dataset_shape(), 0.0f64..2.0, any::<bool>()),
        |((seed, n, d, g), alpha, zero)| {
            let alpha = if zero { 0.0 } else { alpha };
            let ds = random_dataset(seed, n, d, g, 2.0);
            let st = stats_of(&ds);
            let h = random_head(seed ^ 1, d, 1.0, true);
            let out = flip::apply_flip(&h, &st, &FlipConfig::new(alpha).unwrap()).unwrap();
            prop_assert_eq!(out.bias(), h.bias());
            for c in 0..2 {
                for i in 0..d {
                    let (w, w2) = (h.weights()[c][i], out.weights()[c][i]);
                    if alpha > 0.0 {
                        prop_assert!(w2.signum() == w.signum() && w2 != 0.0);
                        prop_assert!((w2 / w) >= alpha * (1.0 - 1e-12));
                    } else if st.sigma_hat[i] == 1.0 {
                        prop_assert_eq!(w2, 0.0);
                    } else {
                        prop_assert!(w2 * w > 0.0);
                    }
                }
            }
            Ok(())
        },
    )
}

pub fn flip_monotonicity(cases: u32) -> Result<(), String> {
    run(cases, (dataset_shape(), 0.0f64..2.0), |((seed, n, d, g), alpha)| {
        let st = stats_of(&random_dataset(seed, n, d, g, 1.0));
        let f = flip::flip_factors(&st, &FlipConfig::new(alpha).unwrap());
        for i in 0..d {
            for j in 0..d {
                if st.sigma_hat[i] < st.sigma_hat[j] {
                    prop_assert!(f[i] > f[j]);
                }
            }
        }
        Ok(())
    })
}

/// Renames the groups by a random bijection and interleaves the rows
/// differently, keeping each group's internal row order.
fn permute_groups(ds: &ActivationDataset, seed: u64) -> ActivationDataset {
    let mut r = rng(seed);
    let codes = GroupCodes::encode(ds.groups());
    let mut names: Vec<String> = (0..codes.len()).map(|k| format!("h{k}")).collect();
    names.shuffle(&mut r);
    let mut queues: Vec<Vec<usize>> = vec![Vec::new(); codes.len()];
    for (i, &c) in codes.codes.iter().enumerate() {
        queues[c].push(i);
    }
    queues.iter_mut().for_each(|q| q.reverse());
    let mut order = Vec::with_capacity(ds.n());
    while order.len() < ds.n() {
        let c = r.random_range(0..codes.len());
        if let Some(i) = queues[c].pop() {
            order.push(i);
        }
    }
    let d = ds.d();
    let acts = order.iter().flat_map(|&i| ds.row(i).to_vec()).collect();
    let labels = order.iter().map(|&i| ds.labels()[i]).collect();
    let groups = order.iter().map(|&i| names[codes.codes[i]].clone()).collect();
    ActivationDataset::new(acts, d, labels, groups, None).unwrap()
}

pub fn group_permutation_invariance(cases: u32) -> Result<(), String> {
    run(cases, dataset_shape(), |(seed, n, d, g)| {
        let ds = random_dataset(seed, n, d, g, 3.0);
        let perm = permute_groups(&ds, seed ^ 7);
        let (a, b) = (stats_of(&ds), stats_of(&perm));
        prop_assert_eq!(&a.sigma, &b.sigma);
        prop_assert_eq!(&a.sigma_hat, &b.sigma_hat);
        let h = random_head(seed ^ 2, d, 1.0, true);
        let cfg = FlipConfig::new(0.25).unwrap();
        let (ha, hb) = (
            flip::apply_flip(&h, &a, &cfg).unwrap(),
            flip::apply_flip(&h, &b, &cfg).unwrap(),
        );
        prop_assert_eq!(ha.weights(), hb.weights());
        prop_assert_eq!(ha.bias(), hb.bias());
        Ok(())
    })
}

pub fn single_pass_means(cases: u32) -> Result<(), String> {
    run(cases, dataset_shape(), |(seed, n, d, g)| {
        let ds = random_dataset(seed, n, d, g, 1.0);
        let codes = GroupCodes::encode(ds.groups());
        let reads = std::cell::Cell::new(0usize);
        let rows = ds
            .rows()
            .zip(codes.codes.iter().copied())
            .inspect(|_| reads.set(reads.get() + 1));
        let (counts, means) = flip::accumulate_group_means(d, codes.len(), rows);
        prop_assert_eq!(reads.get(), n);
        prop_assert_eq!(counts.iter().sum::<usize>(), n);
        prop_assert_eq!(means, flip::group_feature_means(&ds).unwrap().means);
        Ok(())
    })
}

pub fn uniform_scaling_invariance(cases: u32) -> Result<(), String> {
    run(cases, (dataset_shape(), 0.0f64..3.0), |((seed, n, d, g), alpha)| {
        // Every group holds the same rows, so sigma is 0 for every feature.
        let base = random_dataset(seed, n, d, 1, 0.0);
        let g = g.max(2);
        let mut acts = Vec::new();
        let mut labels = Vec::new();
        let mut groups = Vec::new();
        for k in 0..g {
            acts.extend_from_slice(base.activations());
            labels.extend_from_slice(base.labels());
            groups.extend(std::iter::repeat_n(token(k), n));
        }
        let ds = ActivationDataset::new(acts, d, labels, groups, None).unwrap();
        let st = stats_of(&ds);
        prop_assert!(st.sigma_hat.iter().all(|&s| s == 0.0));
        let h = random_head(seed ^ 3, d, 1.0, false);
        let out = flip::apply_flip(&h, &st, &FlipConfig::new(alpha).unwrap()).unwrap();
        let before = head::predict(&head::forward(&h, &ds).unwrap(), 0.5).unwrap();
        let after = head::predict(&head::forward(&out, &ds).unwrap(), 0.5).unwrap();
        prop_assert_eq!(before, after);
        Ok(())
    })
}

/// `(seed, n, n_groups)` for label/prediction vectors.
fn label_shape() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 1usize..80, 1usize..5)
}

fn random_instance(seed: u64, n: usize, g: usize) -> (Vec<u8>, Vec<u8>, Vec<String>) {
    let mut r = rng(seed);
    (
        random_labels(&mut r, n),
        random_labels(&mut r, n),
        random_groups(&mut r, n, g),
    )
}

pub fn parity_objective_bounds(cases: u32) -> Result<(), String> {
    run(
        cases,
        (label_shape(), 1e-6f64..1.0, 1usize..6),
        |((seed, n, g), v, k)| {
            let (pred, y, groups) = random_instance(seed, n, g);
            let c = metrics::confusion_by_group(&pred, &y, &groups).unwrap();
            let m = metrics::group_metrics(&c);
            for r in m.values() {
                for v in [r.tpp, r.fpp, r.ppv, r.npv].into_iter().flatten() {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
            let p = Parities::from_rates(m.values());
            for v in [p.tpp.value, p.fpp.value, p.ppv.value, p.npv.value, p.objective()] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert_eq!(metrics::parity(&vec![Some(v); k]).value, 1.0);
            Ok(())
        },
    )
}

pub fn counting_conservation(cases: u32) -> Result<(), String> {
    run(cases, label_shape(), |(seed, n, g)| {
        let (pred, y, groups) = random_instance(seed, n, g);
        let c = metrics::confusion_by_group(&pred, &y, &groups).unwrap();
        prop_assert_eq!(c.groups.values().map(|k| k.total()).sum::<u64>(), n as u64);
        prop_assert_eq!(c.overall.total(), n as u64);
        let mut sizes: BTreeMap<&str, u64> = BTreeMap::new();
        groups.iter().for_each(|t| *sizes.entry(t).or_default() += 1);
        for (t, k) in &c.groups {
            prop_assert_eq!(k.total(), sizes[t.as_str()]);
        }
        let sum = |f: fn(&metrics::Counts) -> u64| c.groups.values().map(f).sum::<u64>();
        prop_assert_eq!(sum(|k| k.tp), c.overall.tp);
        prop_assert_eq!(sum(|k| k.fp), c.overall.fp);
        prop_assert_eq!(sum(|k| k.tn), c.overall.tn);
        prop_assert_eq!(sum(|k| k.fn_), c.overall.fn_);
        Ok(())
    })
}

pub fn relabeling_invariance(cases: u32) -> Result<(), String> {
    run(cases, label_shape(), |(seed, n, g)| {
        let (pred, y, groups) = random_instance(seed, n, g);
        let mut names: Vec<usize> = (0..g).collect();
        names.shuffle(&mut rng(seed ^ 5));
        let renamed: Vec<String> = groups
            .iter()
            .map(|t| format!("z{}", names[t[1..].parse::<usize>().unwrap()]))
            .collect();
        let a = metrics::report_from_predictions(&pred, &y, &groups, 0.5, "m", None).unwrap();
        let b = metrics::report_from_predictions(&pred, &y, &renamed, 0.5, "m", None).unwrap();
        prop_assert_eq!(
            [a.tpp_parity, a.fpp_parity, a.ppv_parity, a.npv_parity, a.objective],
            [b.tpp_parity, b.fpp_parity, b.ppv_parity, b.npv_parity, b.objective]
        );
        Ok(())
    })
}

pub fn accuracy_from_totals(cases: u32) -> Result<(), String> {
    run(cases, label_shape(), |(seed, n, g)| {
        let (pred, y, groups) = random_instance(seed, n, g);
        let c = metrics::confusion_by_group(&pred, &y, &groups).unwrap();
        let tp: u64 = c.groups.values().map(|k| k.tp).sum();
        let tn: u64 = c.groups.values().map(|k| k.tn).sum();
        let total: u64 = c.groups.values().map(|k| k.total()).sum();
        let acc = (tp + tn) as f64 / total as f64;
        prop_assert_eq!(acc, metrics::overall_scores(&pred, &y).unwrap().accuracy);
        Ok(())
    })
}

pub fn pruning_sparsity(cases: u32) -> Result<(), String> {
    run(cases, (dataset_shape(), 0.0f64..=1.0), |((seed, n, d, g), fraction)| {
        let st = stats_of(&random_dataset(seed, n, d, g, 2.0));
        let h = random_head(seed ^ 4, d, 1.0, true);
        prop_assume!(h.weights().iter().flatten().all(|&w| w != 0.0));
        let out = baselines::bpfa_prune(&h, &st, &PruneConfig::new(fraction).unwrap()).unwrap();
        let zero_cols: Vec<usize> = (0..d)
            .filter(|&i| out.weights()[0][i] == 0.0 && out.weights()[1][i] == 0.0)
            .collect();
        prop_assert_eq!(zero_cols.len(), baselines::prune_count(fraction, d));
        prop_assert_eq!(zero_cols.len(), ((fraction * d as f64) - 1e-9).ceil().max(0.0) as usize);
        for i in (0..d).filter(|i| !zero_cols.contains(i)) {
            for c in 0..2 {
                prop_assert_eq!(out.weights()[c][i].to_bits(), h.weights()[c][i].to_bits());
            }
        }
        prop_assert_eq!(out.bias(), h.bias());
        Ok(())
    })
}

pub fn soft_count_conservation(cases: u32) -> Result<(), String> {
    run(cases, label_shape(), |(seed, n, g)| {
        let mut r = rng(seed);
        let p: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let y = random_labels(&mut r, n);
        let groups = random_groups(&mut r, n, g);
        let probs = ProbabilityMatrix::from_positive(&p).unwrap();
        let soft = baselines::soft_confusion(&probs, &y, &groups).unwrap();
        for (t, s) in &soft {
            let pos = (0..n).filter(|&i| &groups[i] == t && y[i] == 1).count() as f64;
            let neg = (0..n).filter(|&i| &groups[i] == t && y[i] == 0).count() as f64;
            prop_assert_eq!(s.tp + s.fn_, pos);
            prop_assert_eq!(s.fp + s.tn, neg);
        }
        Ok(())
    })
}

pub fn dataset_round_trip(cases: u32) -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    run(
        cases,
        (dataset_shape(), any::<bool>()),
        |((seed, n, d, g), with_ids)| {
            let ds = random_dataset(seed, n, d, g, 1.5);
            let ids = with_ids.then(|| (0..n).map(|i| format!("id-{i}")).collect());
            let ds = ActivationDataset::new(
                ds.activations().to_vec(),
                d,
                ds.labels().to_vec(),
                ds.groups().to_vec(),
                ids,
            )
            .unwrap();
            let path = dir.path().join(format!("{seed}"));
            dataset::save_dataset(&ds, &path).unwrap();
            let back = dataset::load_dataset(&path).unwrap();
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(back.activations()), bits(ds.activations()));
            prop_assert_eq!(&back, &ds);
            Ok(())
        },
    )
}

pub fn head_round_trip(cases: u32) -> Result<(), String> {
    run(cases, (any::<u64>(), 1usize..20, -300i32..300), |(seed, d, exp)| {
        let h = random_head(seed, d, 10f64.powi(exp / 10), true);
        let back = head::head_from_json(&head::head_to_json(&h).unwrap()).unwrap();
        let bits = |h: &FinalLayer| {
            h.weights()
                .iter()
                .flatten()
                .chain(h.bias())
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        prop_assert_eq!(bits(&back), bits(&h));
        Ok(())
    })
}

pub fn fold_partition(cases: u32) -> Result<(), String> {
    run(cases, (dataset_shape(), 2usize..8), |((seed, n, d, g), k)| {
        prop_assume!(k <= n);
        let ds = random_dataset(seed, n, d, g, 0.0);
        let plan = dataset::kfold_split(&ds, k, seed).unwrap();
        let mut seen = vec![0u32; n];
        for f in 0..k {
            let idx = plan.fold_indices(f);
            prop_assert!(!idx.is_empty());
            idx.iter().for_each(|&i| seen[i] += 1);
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        prop_assert!(plan.assignments.iter().all(|&a| a < k));
        // Stratification: every label x group cell is spread within one.
        let codes = GroupCodes::encode(ds.groups());
        let mut cells: BTreeMap<(u8, usize), Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            cells
                .entry((ds.labels()[i], codes.codes[i]))
                .or_insert_with(|| vec![0; k])[plan.assignments[i]] += 1;
        }
        for per_fold in cells.values() {
            let lo = per_fold.iter().min().unwrap();
            let hi = per_fold.iter().max().unwrap();
            prop_assert!(hi - lo <= 1, "{:?}", per_fold);
        }
        Ok(())
    })
}

pub fn undersample_property(cases: u32) -> Result<(), String> {
    run(cases, (dataset_shape(), any::<u64>()), |((seed, n, d, g), s2)| {
        let ds = random_dataset(seed, n, d, g, 0.0);
        let out = dataset::undersample(&ds, s2).unwrap();
        let min = *ds.group_sizes().values().min().unwrap();
        prop_assert!(out.group_sizes().values().all(|&c| c == min));
        prop_assert_eq!(out.group_sizes().len(), ds.group_sizes().len());
        // Subset of input rows, in input order.
        let mut j = 0;
        for i in 0..out.n() {
            while j < ds.n() && (ds.row(j) != out.row(i) || ds.labels()[j] != out.labels()[i]) {
                j += 1;
            }
            prop_assert!(j < ds.n(), "row {} not found in order", i);
            prop_assert_eq!(&ds.groups()[j], &out.groups()[i]);
            j += 1;
        }
        Ok(())
    })
}

pub fn softmax_properties(cases: u32) -> Result<(), String> {
    run(
        cases,
        (-800.0f64..800.0, -800.0f64..800.0, -50.0f64..50.0),
        |(z0, z1, c)| {
            let p = head::softmax2([z0, z1]);
            prop_assert!((p[0] + p[1] - 1.0).abs() <= 1e-6);
            prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
            let q = head::softmax2([z0 + c, z1 + c]);
            prop_assert!((p[1] - q[1]).abs() <= 1e-9);
            // Through forward/predict: shifting both bias entries changes nothing.
            let h = FinalLayer::new([vec![1.0], vec![0.0]], [0.0, z1 - z0]).unwrap();
            let hs = FinalLayer::new([vec![1.0], vec![0.0]], [c, z1 - z0 + c]).unwrap();
            let ds = ActivationDataset::new(vec![0.0], 1, vec![0], vec!["A".into()], None).unwrap();
            let (a, b) = (head::forward(&h, &ds).unwrap(), head::forward(&hs, &ds).unwrap());
            prop_assert!((a.rows()[0][1] - b.rows()[0][1]).abs() <= 1e-9);
            let pred = head::predict(&a, 0.5).unwrap()[0];
            prop_assert_eq!(pred, u8::from(z1 - z0 >= 0.0));
            Ok(())
        },
    )
}

pub fn sweep_optimality(cases: u32) -> Result<(), String> {
    run(cases, (any::<u64>(), 1usize..30, 1usize..4), |(seed, n, g)| {
        let mut r = rng(seed);
        let p = random_probs(&mut r, n);
        let y = random_labels(&mut r, n);
        let groups = random_groups(&mut r, n, g);
        let probs = ProbabilityMatrix::from_positive(&p).unwrap();
        let a = baselines::threshold_sweep(&probs, &y, &groups, 0.01).unwrap();
        prop_assert!(a.trace.iter().all(|&(_, o)| a.best_objective >= o));
        prop_assert!(a.trace.contains(&(a.best_threshold, a.best_objective)));
        let b = baselines::threshold_sweep(&probs, &y, &groups, 0.01).unwrap();
        prop_assert_eq!(&a, &b);
        Ok(())
    })
}

pub fn penalty_monotonicity(cases: u32) -> Result<(), String> {
    run(cases, (dataset_shape(), 0.01f64..5.0), |((seed, n, d, g), lambda)| {
        let ds = random_dataset(seed, n, d, g, 1.0);
        let codes = GroupCodes::encode(ds.groups());
        let idx: Vec<usize> = (0..n).collect();
        let batch = Batch::from_indices(&ds, &codes, &idx);
        let h = random_head(seed ^ 6, d, 1.0, true);
        let (loss, _) = baselines::loss_and_gradient(&h, &batch, lambda, 0.0);
        // Soft group rates recomputed here.
        let p: Vec<f64> = ds.rows().map(|x| head::softmax2(h.logits(x))[1]).collect();
        let parity_of = |label: u8| {
            let rates: Vec<Option<f64>> = (0..codes.len())
                .map(|c| {
                    let members: Vec<usize> = (0..n)
                        .filter(|&i| codes.codes[i] == c && ds.labels()[i] == label)
                        .collect();
                    (!members.is_empty()).then(|| members.iter().map(|&i| p[i]).sum::<f64>() / members.len() as f64)
                })
                .collect();
            metrics::parity(&rates).value
        };
        let (tpp, fpp) = (parity_of(1), parity_of(0));
        if tpp == 1.0 || fpp == 1.0 {
            prop_assert_eq!(loss.penalty, 0.0);
        } else {
            prop_assert!(loss.penalty > 0.0);
        }
        prop_assert!(loss.penalty >= 0.0);
        Ok(())
    })
}
