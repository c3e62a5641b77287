//! Activation datasets: penultimate-layer activations with per-sample labels
//! and protected-group tokens.
//!
//! A dataset bundle on disk is a directory holding
//!
//! * `activations.bin` - 16-byte header (`"FFA1"`, `u32` LE rows, `u32` LE
//!   columns, 4 zero bytes) followed by `rows * cols` little-endian `f32`
//!   values in row-major order;
//! * `samples.csv` - header `id,label,group`, one row per activation row;
//! * `synth.json` - optional copy of the [`SynthConfig`] that generated it.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;

pub const ACTIVATIONS_FILE: &str = "activations.bin";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const SYNTH_FILE: &str = "synth.json";

const MAGIC: &[u8; 4] = b"FFA1";
const HEADER_LEN: usize = 16;

/// Penultimate-layer activations (`n x d`, row-major) with one label and one
/// group token per row. Label 1 is the positive ("fake") class.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDataset {
    activations: Vec<f32>,
    n: usize,
    d: usize,
    labels: Vec<u8>,
    groups: Vec<String>,
    ids: Option<Vec<String>>,
}

impl ActivationDataset {
    pub fn new(
        activations: Vec<f32>,
        d: usize,
        labels: Vec<u8>,
        groups: Vec<String>,
        ids: Option<Vec<String>>,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidDataset("feature count must be at least 1".into()));
        }
        let n = labels.len();
        if n == 0 {
            return Err(Error::InvalidDataset("dataset has no samples".into()));
        }
        if activations.len() != n * d {
            return Err(Error::LengthMismatch(format!(
                "{} activation values for {} samples x {} features",
                activations.len(),
                n,
                d
            )));
        }
        if groups.len() != n {
            return Err(Error::LengthMismatch(format!(
                "{} group tokens for {} labels",
                groups.len(),
                n
            )));
        }
        if let Some(ids) = &ids {
            if ids.len() != n {
                return Err(Error::LengthMismatch(format!("{} ids for {} labels", ids.len(), n)));
            }
        }
        if let Some((row, &l)) = labels.iter().enumerate().find(|(_, &l)| l > 1) {
            return Err(Error::InvalidLabel {
                row,
                value: l.to_string(),
            });
        }
        if let Some(row) = groups.iter().position(|g| g.is_empty()) {
            return Err(Error::InvalidDataset(format!("empty group token at row {row}")));
        }
        if let Some(pos) = activations.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "activation at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        Ok(Self {
            activations,
            n,
            d,
            labels,
            groups,
            ids,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.activations[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.activations.chunks_exact(self.d)
    }

    pub fn activations(&self) -> &[f32] {
        &self.activations
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    /// Sample count per group token, in token order.
    pub fn group_sizes(&self) -> BTreeMap<&str, usize> {
        let mut sizes = BTreeMap::new();
        for g in &self.groups {
            *sizes.entry(g.as_str()).or_insert(0) += 1;
        }
        sizes
    }

    /// Rows selected by `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut activations = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            activations.extend_from_slice(self.row(i));
        }
        Self::new(
            activations,
            self.d,
            indices.iter().map(|&i| self.labels[i]).collect(),
            indices.iter().map(|&i| self.groups[i].clone()).collect(),
            self.ids
                .as_ref()
                .map(|ids| indices.iter().map(|&i| ids[i].clone()).collect()),
        )
    }
}

/// Maps group tokens to dense codes. Tokens are sorted, so codes do not depend
/// on row order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupCodes {
    pub tokens: Vec<String>,
    pub codes: Vec<usize>,
}

impl GroupCodes {
    pub fn encode(groups: &[String]) -> Self {
        let tokens: Vec<String> = groups.iter().collect::<BTreeSet<_>>().into_iter().cloned().collect();
        let lookup: BTreeMap<&str, usize> = tokens.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
        let codes = groups.iter().map(|g| lookup[g.as_str()]).collect();
        Self { tokens, codes }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct SampleRow {
    id: String,
    label: String,
    group: String,
}

pub fn encode_activations(ds: &ActivationDataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + ds.activations.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(ds.n as u32).to_le_bytes());
    out.extend_from_slice(&(ds.d as u32).to_le_bytes());
    out.extend_from_slice(&[0u8; 4]);
    for v in &ds.activations {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn encode_samples(ds: &ActivationDataset) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(["id", "label", "group"])
        .map_err(|e| Error::format(SAMPLES_FILE, e.to_string()))?;
    for i in 0..ds.n {
        let id = ds.ids.as_ref().map(|ids| ids[i].as_str()).unwrap_or("");
        let label = if ds.labels[i] == 1 { "1" } else { "0" };
        w.write_record([id, label, ds.groups[i].as_str()])
            .map_err(|e| Error::format(SAMPLES_FILE, e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::format(SAMPLES_FILE, e.to_string()))
}

/// Writes `activations.bin` and `samples.csv` into `dir`, creating it if needed.
pub fn save_dataset(ds: &ActivationDataset, dir: &Path) -> Result<()> {
    fsio::create_dir_all(dir)?;
    fsio::write_atomic(&dir.join(ACTIVATIONS_FILE), &encode_activations(ds))?;
    fsio::write_atomic(&dir.join(SAMPLES_FILE), &encode_samples(ds)?)?;
    Ok(())
}

fn decode_activations(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(path, "file shorter than 16-byte header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format(path, "magic mismatch: expected \"FFA1\""));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes[12..16] != [0u8; 4] {
        return Err(Error::format(
            path,
            "version mismatch: reserved header bytes must be zero",
        ));
    }
    let expected = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::format(path, "declared shape overflows"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "payload is {} bytes, header declares {}x{} f32 values ({} bytes)",
                payload.len(),
                n,
                d,
                expected
            ),
        ));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((n, d, values))
}

/// Reads a dataset bundle written by [`save_dataset`] (or any tool emitting the
/// same layout).
pub fn load_dataset(dir: &Path) -> Result<ActivationDataset> {
    let bin_path = dir.join(ACTIVATIONS_FILE);
    let csv_path = dir.join(SAMPLES_FILE);
    let (n, d, activations) = decode_activations(&bin_path, &fsio::read(&bin_path)?)?;

    let csv_bytes = fsio::read(&csv_path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(csv_bytes.as_slice());
    let headers = reader.headers().map_err(|e| Error::format(&csv_path, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["id", "label", "group"] {
        return Err(Error::format(&csv_path, "header must be `id,label,group`"));
    }

    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for (row, rec) in reader.deserialize::<SampleRow>().enumerate() {
        let rec = rec.map_err(|e| Error::format(&csv_path, e.to_string()))?;
        let label = match rec.label.as_str() {
            "0" => 0,
            "1" => 1,
            _ => return Err(Error::InvalidLabel { row, value: rec.label }),
        };
        if rec.group.is_empty() {
            return Err(Error::format(&csv_path, format!("empty group token at row {row}")));
        }
        ids.push(rec.id);
        labels.push(label);
        groups.push(rec.group);
    }
    if labels.len() != n {
        return Err(Error::RowCountMismatch {
            declared: n,
            found: labels.len(),
        });
    }
    let ids = if ids.iter().all(|s| s.is_empty()) {
        None
    } else {
        Some(ids)
    };
    ActivationDataset::new(activations, d, labels, groups, ids)
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

/// Recipe for a synthetic dataset with planted group-dependent features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_per_group_per_class: usize,
    pub groups: Vec<String>,
    pub d: usize,
    /// Features whose mean is shifted by `group_index * bias_magnitude`.
    pub biased_features: Vec<usize>,
    /// Features whose mean is `+signal_magnitude` for label 1 and
    /// `-signal_magnitude` for label 0.
    pub signal_features: Vec<usize>,
    pub bias_magnitude: f64,
    pub signal_magnitude: f64,
    pub noise_std: f64,
    pub seed: u64,
    /// Permits a feature to be both biased and signal-carrying.
    #[serde(default)]
    pub allow_overlap: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_per_group_per_class: 1000,
            groups: vec!["A".into(), "B".into()],
            d: 16,
            biased_features: vec![0, 1, 2, 3],
            signal_features: vec![4, 5, 6, 7],
            bias_magnitude: 4.0,
            signal_magnitude: 0.5,
            noise_std: 1.0,
            seed: 0,
            allow_overlap: false,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_group_per_class == 0 {
            return Err(Error::EmptyGroup("n_per_group_per_class must be at least 1".into()));
        }
        if self.groups.len() < 2 {
            return Err(Error::InvalidConfig("at least 2 groups are required".into()));
        }
        if self.groups.iter().any(|g| g.is_empty()) {
            return Err(Error::InvalidConfig("group tokens must be non-empty".into()));
        }
        if self.groups.iter().collect::<BTreeSet<_>>().len() != self.groups.len() {
            return Err(Error::InvalidConfig("group tokens must be distinct".into()));
        }
        if self.d == 0 {
            return Err(Error::InvalidConfig("d must be at least 1".into()));
        }
        if let Some(&i) = self
            .biased_features
            .iter()
            .chain(&self.signal_features)
            .find(|&&i| i >= self.d)
        {
            return Err(Error::InvalidConfig(format!(
                "feature index {i} out of range for d={}",
                self.d
            )));
        }
        if !self.allow_overlap {
            let biased: BTreeSet<_> = self.biased_features.iter().collect();
            if let Some(i) = self.signal_features.iter().find(|i| biased.contains(i)) {
                return Err(Error::InvalidConfig(format!(
                    "feature {i} is both biased and signal; set allow_overlap to permit this"
                )));
            }
        }
        if !(self.noise_std.is_finite() && self.noise_std > 0.0) {
            return Err(Error::InvalidConfig("noise_std must be finite and positive".into()));
        }
        if !self.bias_magnitude.is_finite() || !self.signal_magnitude.is_finite() {
            return Err(Error::InvalidConfig("magnitudes must be finite".into()));
        }
        Ok(())
    }
}

/// Generates a dataset laid out group-major, then class (0 before 1). The
/// result depends only on `cfg`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<ActivationDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let mut base = vec![0.0f64; cfg.d];
    let n_total = cfg.groups.len() * 2 * cfg.n_per_group_per_class;
    let mut activations = Vec::with_capacity(n_total * cfg.d);
    let mut labels = Vec::with_capacity(n_total);
    let mut groups = Vec::with_capacity(n_total);
    let mut ids = Vec::with_capacity(n_total);

    for (gi, group) in cfg.groups.iter().enumerate() {
        for label in [0u8, 1] {
            base.iter_mut().for_each(|v| *v = 0.0);
            let sign = if label == 1 { 1.0 } else { -1.0 };
            for &j in &cfg.signal_features {
                base[j] += sign * cfg.signal_magnitude;
            }
            for &j in &cfg.biased_features {
                base[j] += gi as f64 * cfg.bias_magnitude;
            }
            for _ in 0..cfg.n_per_group_per_class {
                ids.push(format!("s{}", labels.len()));
                for &mean in &base {
                    activations.push((mean + noise.sample(&mut rng)) as f32);
                }
                labels.push(label);
                groups.push(group.clone());
            }
        }
    }
    ActivationDataset::new(activations, cfg.d, labels, groups, Some(ids))
}

pub fn save_synth_config(cfg: &SynthConfig, dir: &Path) -> Result<()> {
    fsio::create_dir_all(dir)?;
    let mut json = serde_json::to_vec_pretty(cfg)?;
    json.push(b'\n');
    fsio::write_atomic(&dir.join(SYNTH_FILE), &json)
}

// ---------------------------------------------------------------------------
// Rebalancing and splitting
// ---------------------------------------------------------------------------

/// Keeps a uniformly random subset of `min group size` rows from every group.
/// Retained rows keep their original relative order.
pub fn undersample(ds: &ActivationDataset, seed: u64) -> Result<ActivationDataset> {
    let codes = GroupCodes::encode(ds.groups());
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); codes.len()];
    for (i, &c) in codes.codes.iter().enumerate() {
        members[c].push(i);
    }
    let target = members.iter().map(Vec::len).min().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::with_capacity(target * members.len());
    for rows in &members {
        if rows.len() == target {
            keep.extend_from_slice(rows);
        } else {
            keep.extend(index::sample(&mut rng, rows.len(), target).iter().map(|k| rows[k]));
        }
    }
    keep.sort_unstable();
    ds.subset(&keep)
}

/// Assignment of every sample to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
    /// Label x group cells holding fewer than `k` samples.
    pub warnings: Vec<String>,
}

impl FoldPlan {
    pub fn fold_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    /// `(train, test)` indices with `fold` held out.
    pub fn train_test(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.assignments.len()).partition(|&i| self.assignments[i] != fold)
    }

    pub fn is_degenerate(&self) -> bool {
        !self.warnings.is_empty()
    }
}

/// Stratified k-fold plan: each (label, group) cell is shuffled under `seed`
/// and dealt round-robin, continuing the deal across cells so that fold sizes
/// differ by at most one.
pub fn kfold_split(ds: &ActivationDataset, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "fold count must be at least 2, got {k}"
        )));
    }
    if k > ds.n() {
        return Err(Error::InvalidArgument(format!(
            "fold count {k} exceeds sample count {}",
            ds.n()
        )));
    }
    let mut cells: BTreeMap<(u8, &str), Vec<usize>> = BTreeMap::new();
    for i in 0..ds.n() {
        cells.entry((ds.labels[i], ds.groups[i].as_str())).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![0usize; ds.n()];
    let mut warnings = Vec::new();
    let mut dealt = 0usize;
    for ((label, group), mut rows) in cells {
        if rows.len() < k {
            warnings.push(format!(
                "cell (label={label}, group={group}) has {} samples, fewer than k={k}",
                rows.len()
            ));
        }
        rows.shuffle(&mut rng);
        for i in rows {
            assignments[i] = dealt % k;
            dealt += 1;
        }
    }
    Ok(FoldPlan {
        k,
        assignments,
        seed,
        warnings,
    })
}
