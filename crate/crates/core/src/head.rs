//! The final dense layer of a binary detector: `logits = W x + b`, followed by
//! a softmax. Class 0 is authentic, class 1 is fake (the positive class).

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::dataset::ActivationDataset;
use crate::error::{Error, Result};
use crate::fsio;

pub const CLASSES: usize = 2;
pub const POSITIVE_CLASS: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FinalLayer {
    weights: [Vec<f64>; CLASSES],
    bias: [f64; CLASSES],
    pub metadata: Map<String, Value>,
}

impl FinalLayer {
    pub fn new(weights: [Vec<f64>; CLASSES], bias: [f64; CLASSES]) -> Result<Self> {
        let d = weights[0].len();
        if d == 0 {
            return Err(Error::InvalidArgument("head must have at least one feature".into()));
        }
        if weights[1].len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: weights[1].len(),
                context: "weight row length",
            });
        }
        if weights.iter().flatten().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("head weights or bias".into()));
        }
        Ok(Self {
            weights,
            bias,
            metadata: Map::new(),
        })
    }

    pub fn zeros(d: usize) -> Result<Self> {
        Self::new([vec![0.0; d], vec![0.0; d]], [0.0; CLASSES])
    }

    pub fn d(&self) -> usize {
        self.weights[0].len()
    }

    pub fn weights(&self) -> &[Vec<f64>; CLASSES] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64; CLASSES] {
        &self.bias
    }

    /// Returns a copy with each feature column `i` multiplied by `factors[i]`
    /// in every class row. The bias and metadata are carried over.
    pub fn scale_columns(&self, factors: &[f64]) -> Result<Self> {
        self.check_dim(factors.len(), "column factor count")?;
        let weights = self
            .weights
            .clone()
            .map(|row| row.iter().zip(factors).map(|(w, f)| w * f).collect());
        let mut out = Self::new(weights, self.bias)?;
        out.metadata = self.metadata.clone();
        Ok(out)
    }

    pub(crate) fn check_dim(&self, d: usize, context: &'static str) -> Result<()> {
        if d != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                found: d,
                context,
            });
        }
        Ok(())
    }

    pub fn logits(&self, x: &[f32]) -> [f64; CLASSES] {
        let mut z = self.bias;
        for (c, row) in self.weights.iter().enumerate() {
            z[c] += row.iter().zip(x).map(|(w, &v)| w * v as f64).sum::<f64>();
        }
        z
    }
}

/// Per-sample class probabilities, one `[p_authentic, p_fake]` row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    rows: Vec<[f64; CLASSES]>,
}

impl ProbabilityMatrix {
    pub fn new(rows: Vec<[f64; CLASSES]>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.iter().any(|p| !(0.0..=1.0).contains(p)) || (r[0] + r[1] - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "row {i} is not a probability distribution: {r:?}"
                )));
            }
        }
        Ok(Self { rows })
    }

    /// Builds a matrix from positive-class probabilities alone.
    pub fn from_positive(p_fake: &[f64]) -> Result<Self> {
        Self::new(p_fake.iter().map(|&p| [1.0 - p, p]).collect())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[[f64; CLASSES]] {
        &self.rows
    }

    pub fn positive(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|r| r[POSITIVE_CLASS])
    }
}

pub fn softmax2(z: [f64; CLASSES]) -> [f64; CLASSES] {
    let m = z[0].max(z[1]);
    let e = [(z[0] - m).exp(), (z[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

pub fn forward(head: &FinalLayer, ds: &ActivationDataset) -> Result<ProbabilityMatrix> {
    head.check_dim(ds.d(), "dataset feature count")?;
    Ok(ProbabilityMatrix {
        rows: ds.rows().map(|x| softmax2(head.logits(x))).collect(),
    })
}

/// Label 1 iff `P(fake) >= threshold`.
pub fn predict(probs: &ProbabilityMatrix, threshold: f64) -> Result<Vec<u8>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside [0, 1]")));
    }
    Ok(probs.positive().map(|p| u8::from(p >= threshold)).collect())
}

// ---------------------------------------------------------------------------
// head.json
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct HeadFile {
    classes: usize,
    features: usize,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    metadata: Map<String, Value>,
}

pub fn head_to_json(head: &FinalLayer) -> Result<String> {
    let file = HeadFile {
        classes: CLASSES,
        features: head.d(),
        weights: head.weights.to_vec(),
        bias: head.bias.to_vec(),
        metadata: head.metadata.clone(),
    };
    let mut s = serde_json::to_string_pretty(&file)?;
    s.push('\n');
    Ok(s)
}

pub fn head_from_json(text: &str) -> Result<FinalLayer> {
    let file: HeadFile = serde_json::from_str(text)?;
    if file.classes != CLASSES {
        return Err(Error::InvalidArgument(format!(
            "head declares {} classes, only {CLASSES} are supported",
            file.classes
        )));
    }
    if file.weights.len() != CLASSES {
        return Err(Error::DimensionMismatch {
            expected: CLASSES,
            found: file.weights.len(),
            context: "weight rows",
        });
    }
    if file.bias.len() != CLASSES {
        return Err(Error::DimensionMismatch {
            expected: CLASSES,
            found: file.bias.len(),
            context: "bias length",
        });
    }
    for row in &file.weights {
        if row.len() != file.features {
            return Err(Error::DimensionMismatch {
                expected: file.features,
                found: row.len(),
                context: "weight row length vs declared features",
            });
        }
    }
    let [w0, w1]: [Vec<f64>; CLASSES] = file.weights.try_into().unwrap();
    let mut head = FinalLayer::new([w0, w1], [file.bias[0], file.bias[1]])?;
    head.metadata = file.metadata;
    Ok(head)
}

pub fn save_head(head: &FinalLayer, path: &Path) -> Result<()> {
    fsio::write_atomic(path, head_to_json(head)?.as_bytes())
}

pub fn load_head(path: &Path) -> Result<FinalLayer> {
    let bytes = fsio::read(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::format(path, e.to_string()))?;
    head_from_json(&text).map_err(|e| match e {
        Error::Json(j) => Error::format(path, j.to_string()),
        other => other,
    })
}
