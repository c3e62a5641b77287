//! Post-processing fairness tools for the final dense layer of a binary
//! classifier, working on exported penultimate-layer activations.
//!
//! * [`dataset`] - activation bundles, synthetic data, undersampling, folds
//! * [`head`] - the dense head, softmax forward pass and thresholding
//! * [`metrics`] - per-group rates, parities, fairness objective, reports
//! * [`flip`] - Fair-FLIP reweighting and its alpha sweep
//! * [`baselines`] - threshold tuning, bias pruning, penalised retraining
//! * [`harness`] - k-fold comparison of all methods
//! * [`report`] - cross-validation tables rendered as Markdown
//! * [`fixture`] - published cross-validation averages and their checks
//! * [`cli`] - the `fairhead` command line

pub mod baselines;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod fixture;
pub mod flip;
pub mod fsio;
pub mod grid;
pub mod harness;
pub mod head;
pub mod metrics;
pub mod report;

pub use error::{Error, Result};
