//! Published five-fold results for the six compared methods, shipped
//! read-only, and the arithmetic check of the headline claims derived from
//! their averages: roughly 30% relative FPP-parity gain for Fair-FLIP over the
//! baseline at a 0.25% relative accuracy cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::{MetricBlock, ReportTable};

pub const TABLE1_JSON: &str = include_str!("../fixtures/table1.json");

pub const BASELINE: &str = "Baseline";
pub const FAIR_FLIP: &str = "Fair-FLIP";

pub const FPP_GAIN_CLAIM: f64 = 0.30;
pub const FPP_GAIN_TOL: f64 = 0.015;
pub const ACCURACY_DROP_CLAIM: f64 = 0.0025;
pub const ACCURACY_DROP_TOL: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureMetric {
    pub name: String,
    pub folds: Vec<Vec<f64>>,
    pub avg: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub description: String,
    pub values: String,
    pub methods: Vec<String>,
    pub metrics: Vec<FixtureMetric>,
}

impl Fixture {
    pub fn builtin() -> Self {
        Self::parse(TABLE1_JSON).expect("built-in fixture parses")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let fx: Fixture = serde_json::from_str(text)?;
        let m = fx.methods.len();
        for metric in &fx.metrics {
            if metric.avg.len() != m || metric.std.len() != m || metric.folds.iter().any(|f| f.len() != m) {
                return Err(Error::InvalidArgument(format!(
                    "fixture metric {} does not have {m} method columns",
                    metric.name
                )));
            }
        }
        Ok(fx)
    }

    /// Stored `Avg.` value of `metric` for `method`.
    pub fn average(&self, metric: &str, method: &str) -> Result<f64> {
        let col = self
            .methods
            .iter()
            .position(|m| m == method)
            .ok_or_else(|| Error::InvalidArgument(format!("fixture has no method {method:?}")))?;
        let row = self
            .metrics
            .iter()
            .find(|m| m.name == metric)
            .ok_or_else(|| Error::InvalidArgument(format!("fixture has no metric {metric:?}")))?;
        Ok(row.avg[col])
    }

    pub fn to_table(&self) -> ReportTable {
        ReportTable {
            methods: self.methods.clone(),
            metrics: self
                .metrics
                .iter()
                .map(|m| MetricBlock {
                    name: m.name.clone(),
                    folds: m.folds.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureCheck {
    pub fpp_baseline: f64,
    pub fpp_fair_flip: f64,
    /// `fpp_fair_flip / fpp_baseline - 1`.
    pub fpp_gain: f64,
    pub accuracy_baseline: f64,
    pub accuracy_fair_flip: f64,
    /// `1 - accuracy_fair_flip / accuracy_baseline`.
    pub accuracy_drop: f64,
    pub fpp_gain_ok: bool,
    pub accuracy_drop_ok: bool,
}

impl FixtureCheck {
    pub fn passed(&self) -> bool {
        self.fpp_gain_ok && self.accuracy_drop_ok
    }

    pub fn summary(&self) -> String {
        let mark = |ok: bool| if ok { "ok" } else { "FAIL" };
        format!(
            "FPP parity {:.4} -> {:.4}: relative gain {:.2}% (expected {:.1}% +/- {:.1} pp) {}\n\
             accuracy {:.4} -> {:.4}: relative drop {:.3}% (expected {:.2}% +/- {:.2} pp) {}\n",
            self.fpp_baseline,
            self.fpp_fair_flip,
            100.0 * self.fpp_gain,
            100.0 * FPP_GAIN_CLAIM,
            100.0 * FPP_GAIN_TOL,
            mark(self.fpp_gain_ok),
            self.accuracy_baseline,
            self.accuracy_fair_flip,
            100.0 * self.accuracy_drop,
            100.0 * ACCURACY_DROP_CLAIM,
            100.0 * ACCURACY_DROP_TOL,
            mark(self.accuracy_drop_ok),
        )
    }
}

pub fn check(fx: &Fixture) -> Result<FixtureCheck> {
    let fpp_baseline = fx.average("FPP", BASELINE)?;
    let fpp_fair_flip = fx.average("FPP", FAIR_FLIP)?;
    let accuracy_baseline = fx.average("Accuracy", BASELINE)?;
    let accuracy_fair_flip = fx.average("Accuracy", FAIR_FLIP)?;
    let fpp_gain = fpp_fair_flip / fpp_baseline - 1.0;
    let accuracy_drop = 1.0 - accuracy_fair_flip / accuracy_baseline;
    Ok(FixtureCheck {
        fpp_baseline,
        fpp_fair_flip,
        fpp_gain,
        accuracy_baseline,
        accuracy_fair_flip,
        accuracy_drop,
        fpp_gain_ok: (fpp_gain - FPP_GAIN_CLAIM).abs() <= FPP_GAIN_TOL,
        accuracy_drop_ok: (accuracy_drop - ACCURACY_DROP_CLAIM).abs() <= ACCURACY_DROP_TOL,
    })
}
