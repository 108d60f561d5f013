//! Accuracy metrics for simulation studies.

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};

/// `100 · mean((θ̂ − θ) / θ)`.
pub fn percent_relative_bias(estimates: &[f64], truth: f64) -> Result<f64> {
    if truth == 0.0 || !truth.is_finite() {
        return Err(GeoError::Domain(format!(
            "relative bias needs a finite non-zero true value, got {truth}"
        )));
    }
    if estimates.is_empty() {
        return Err(GeoError::Domain("relative bias of zero estimates".into()));
    }
    let sum: f64 = estimates.iter().map(|e| (e - truth) / truth).sum();
    Ok(100.0 * sum / estimates.len() as f64)
}

/// Fraction of closed intervals `[lower, upper]` that contain `truth`.
pub fn parameter_coverage(intervals: &[(f64, f64)], truth: f64) -> f64 {
    if intervals.is_empty() {
        return f64::NAN;
    }
    let hits = intervals
        .iter()
        .filter(|(lo, hi)| *lo <= truth && truth <= *hi)
        .count();
    hits as f64 / intervals.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionMetrics {
    pub bias: f64,
    pub rmse: f64,
    pub cp: f64,
    pub count: usize,
}

/// Bias, root-mean-squared error and interval coverage over matched
/// `(prediction, observed)` pairs.
pub fn prediction_metrics(pairs: &[(f64, f64)], intervals: &[(f64, f64)]) -> Result<PredictionMetrics> {
    if pairs.is_empty() {
        return Err(GeoError::Domain("prediction metrics need at least one pair".into()));
    }
    if pairs.len() != intervals.len() {
        return Err(GeoError::Schema(format!(
            "{} prediction pairs but {} intervals",
            pairs.len(),
            intervals.len()
        )));
    }
    let n = pairs.len() as f64;
    let bias = pairs.iter().map(|(p, y)| p - y).sum::<f64>() / n;
    let mse = pairs.iter().map(|(p, y)| (p - y).powi(2)).sum::<f64>() / n;
    let covered = pairs
        .iter()
        .zip(intervals)
        .filter(|((_, y), (lo, hi))| lo <= y && y <= hi)
        .count();
    Ok(PredictionMetrics {
        bias,
        rmse: mse.sqrt(),
        cp: covered as f64 / n,
        count: pairs.len(),
    })
}

/// One row of the parameter table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterCell {
    pub scenario: String,
    pub model: String,
    pub parameter: String,
    pub truth: f64,
    pub prb: f64,
    pub cp: f64,
    /// Replicates contributing an estimate.
    pub estimates: usize,
    /// Replicates contributing a Wald interval.
    pub intervals: usize,
}

/// One row of the prediction table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionCell {
    pub scenario: String,
    pub model: String,
    pub bias: f64,
    pub rmse: f64,
    pub cp: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureCell {
    pub scenario: String,
    pub model: String,
    pub replicates: usize,
    /// Fits that errored or did not converge; excluded from all metrics.
    pub failed: usize,
    /// Converged fits lacking a Wald interval for at least one parameter.
    pub wald_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StudyReport {
    pub parameter_table: Vec<ParameterCell>,
    pub prediction_table: Vec<PredictionCell>,
    pub failure_counts: Vec<FailureCell>,
}

impl StudyReport {
    pub fn parameter(&self, scenario: &str, model: &str, parameter: &str) -> Option<&ParameterCell> {
        self.parameter_table
            .iter()
            .find(|c| c.scenario == scenario && c.model == model && c.parameter == parameter)
    }

    pub fn prediction(&self, scenario: &str, model: &str) -> Option<&PredictionCell> {
        self.prediction_table
            .iter()
            .find(|c| c.scenario == scenario && c.model == model)
    }

    pub fn failures(&self, scenario: &str, model: &str) -> Option<&FailureCell> {
        self.failure_counts
            .iter()
            .find(|c| c.scenario == scenario && c.model == model)
    }
}
