#![allow(dead_code)]

pub mod invariants;
pub mod oracle;

use fairhead::dataset::ActivationDataset;
use fairhead::head::FinalLayer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn token(i: usize) -> String {
    format!("g{i}")
}

/// Random dataset where every one of `n_groups` groups is present (needs
/// `n >= n_groups`). Group `k` gets a mean offset of `k * shift` on feature 0.
pub fn random_dataset(seed: u64, n: usize, d: usize, n_groups: usize, shift: f32) -> ActivationDataset {
    assert!(n >= n_groups && n_groups >= 1);
    let mut r = rng(seed);
    let groups: Vec<usize> = (0..n)
        .map(|i| if i < n_groups { i } else { r.random_range(0..n_groups) })
        .collect();
    let mut acts = Vec::with_capacity(n * d);
    for &g in &groups {
        for j in 0..d {
            let z: f64 = StandardNormal.sample(&mut r);
            let off = if j == 0 { g as f32 * shift } else { 0.0 };
            acts.push(z as f32 + off);
        }
    }
    let labels = (0..n).map(|_| r.random_range(0..2u8)).collect();
    ActivationDataset::new(acts, d, labels, groups.iter().map(|&g| token(g)).collect(), None).unwrap()
}

pub fn random_head(seed: u64, d: usize, scale: f64, with_bias: bool) -> FinalLayer {
    let mut r = rng(seed);
    let mut w = || {
        let z: f64 = StandardNormal.sample(&mut r);
        z * scale
    };
    let weights = [(0..d).map(|_| w()).collect(), (0..d).map(|_| w()).collect()];
    let bias = if with_bias { [w(), w()] } else { [0.0, 0.0] };
    FinalLayer::new(weights, bias).unwrap()
}

pub fn random_labels(r: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| r.random_range(0..2u8)).collect()
}

pub fn random_groups(r: &mut ChaCha8Rng, n: usize, n_groups: usize) -> Vec<String> {
    (0..n).map(|_| token(r.random_range(0..n_groups))).collect()
}

/// Probabilities on a coarse 1/100 lattice so that thresholds hit ties.
pub fn random_probs(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(0..=100u32) as f64 / 100.0).collect()
}
