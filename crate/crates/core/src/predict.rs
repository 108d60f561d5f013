//! Plug-in kriging of the outcome at new locations.
//!
//! Parameters are treated as known at their estimates; parameter
//! uncertainty is not propagated into the prediction intervals.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::kernels::{cross_covariance_row, CovarianceSpec, InputPoint, PairwiseDistances, PointSet};
use crate::likelihood::{normal_quantile, FitResult};
use crate::linalg::{factorize, Factor};
use crate::model::{ObservationSet, ParameterVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub points: Vec<InputPoint>,
    pub mean: Vec<f64>,
    /// Predictive sd of a new outcome (nugget included).
    pub sd_y: Vec<f64>,
    /// Sd of the latent surface (nugget excluded).
    pub sd_s: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
}

impl PredictionResult {
    fn empty(level: f64) -> Self {
        Self {
            points: Vec::new(),
            mean: Vec::new(),
            sd_y: Vec::new(),
            sd_s: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            level,
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    fn extend(&mut self, other: PredictionResult) {
        self.points.extend(other.points);
        self.mean.extend(other.mean);
        self.sd_y.extend(other.sd_y);
        self.sd_s.extend(other.sd_s);
        self.lower.extend(other.lower);
        self.upper.extend(other.upper);
    }
}

/// Conditioning state shared by every target: the factor of `Σ(θ̂)` and
/// `Σ⁻¹(y − Dβ̂)`.
pub struct Kriger {
    spec: CovarianceSpec,
    theta: ParameterVector,
    sources: PointSet,
    factor: Factor,
    alpha: DVector<f64>,
    z: f64,
    level: f64,
}

impl Kriger {
    pub fn new(fit: &FitResult, data: &ObservationSet, level: f64) -> Result<Self> {
        Self::from_parameters(&fit.spec, &fit.theta_hat, data, level)
    }

    /// Conditioning on `data` with parameters supplied directly.
    pub fn from_parameters(
        spec: &CovarianceSpec,
        theta: &ParameterVector,
        data: &ObservationSet,
        level: f64,
    ) -> Result<Self> {
        theta.validate()?;
        let spec = spec.with_parameters(theta.sigma2, &theta.phis)?;
        if data.design().ncols() != theta.beta.len() {
            return Err(GeoError::Schema(format!(
                "observation design has {} columns, model has {} coefficients",
                data.design().ncols(),
                theta.beta.len()
            )));
        }
        let sources = data.point_set(&spec)?;
        let sigma = PairwiseDistances::new(&sources, spec.distance).covariance(&spec, theta.tau2);
        let factor = factorize(sigma).ok_or_else(|| GeoError::SingularCovariance {
            theta: format!("{theta:?}"),
        })?;
        let beta = DVector::from_column_slice(&theta.beta);
        let resid = data.outcome() - data.design() * &beta;
        let alpha = factor.solve(&resid);
        Ok(Self {
            spec,
            theta: theta.clone(),
            sources,
            factor,
            alpha,
            z: normal_quantile(level)?,
            level,
        })
    }

    /// Predictions at `targets`; row `i` of `target_design` belongs to target `i`.
    pub fn predict(&self, targets: &[InputPoint], target_design: &DMatrix<f64>) -> Result<PredictionResult> {
        if target_design.nrows() != targets.len() {
            return Err(GeoError::Schema(format!(
                "{} targets but {} design rows",
                targets.len(),
                target_design.nrows()
            )));
        }
        if !targets.is_empty() && target_design.ncols() != self.theta.beta.len() {
            return Err(GeoError::Schema(format!(
                "target design has {} columns, model has {} coefficients",
                target_design.ncols(),
                self.theta.beta.len()
            )));
        }
        let resolved = PointSet::resolve(targets, &self.spec)?;
        let v_star = self.spec.marginal_variance();
        let n = self.sources.len();
        let mut out = PredictionResult::empty(self.level);
        out.points = targets.to_vec();
        let mut c = vec![0.0; n];
        for i in 0..targets.len() {
            cross_covariance_row(resolved.coords[i], resolved.row(i), &self.sources, &self.spec, &mut c);
            let trend: f64 = (0..self.theta.beta.len())
                .map(|j| target_design[(i, j)] * self.theta.beta[j])
                .sum();
            let mean = trend + c.iter().zip(self.alpha.iter()).map(|(a, b)| a * b).sum::<f64>();
            self.factor.solve_lower_slice(&mut c);
            let reduction: f64 = c.iter().map(|v| v * v).sum();
            let var_s = (v_star - reduction).max(0.0);
            let sd_s = var_s.sqrt();
            let sd_y = (var_s + self.theta.tau2).sqrt();
            out.mean.push(mean);
            out.sd_s.push(sd_s);
            out.sd_y.push(sd_y);
            out.lower.push(mean - self.z * sd_y);
            out.upper.push(mean + self.z * sd_y);
        }
        Ok(out)
    }
}

/// Kriging predictions at `targets` from a fitted model.
pub fn krige(
    fit: &FitResult,
    data: &ObservationSet,
    targets: &[InputPoint],
    target_design: &DMatrix<f64>,
) -> Result<PredictionResult> {
    Kriger::new(fit, data, 0.95)?.predict(targets, target_design)
}

/// Prediction grid: coordinates plus named covariate columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridTable {
    pub coords: Vec<[f64; 2]>,
    pub columns: BTreeMap<String, Vec<f64>>,
}

impl GridTable {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| GeoError::Schema(format!("grid is missing column '{name}'")))
    }

    /// Target points and mean design rows for `fit`, rows `range`.
    fn targets(&self, fit: &FitResult, range: std::ops::Range<usize>) -> Result<(Vec<InputPoint>, DMatrix<f64>)> {
        let cov_cols = fit
            .spec
            .covariate_names()
            .into_iter()
            .map(|name| Ok((name.to_string(), self.column(name)?)))
            .collect::<Result<Vec<_>>>()?;
        let mean_cols = fit
            .config
            .mean_covariates
            .iter()
            .map(|name| self.column(name))
            .collect::<Result<Vec<_>>>()?;
        let m = range.len();
        let q = 1 + mean_cols.len();
        let mut design = DMatrix::zeros(m, q);
        let mut points = Vec::with_capacity(m);
        for (r, i) in range.enumerate() {
            design[(r, 0)] = 1.0;
            for (j, col) in mean_cols.iter().enumerate() {
                design[(r, j + 1)] = col[i];
            }
            let mut pt = InputPoint::new(self.coords[i]);
            for (name, col) in &cov_cols {
                pt.covariates.insert(name.clone(), col[i]);
            }
            points.push(pt);
        }
        Ok((points, design))
    }
}

/// Predicts every grid row in batches of `batch_size` rows, optionally
/// spread over `threads` workers. Results are in grid order.
pub fn predict_grid(
    fit: &FitResult,
    data: &ObservationSet,
    grid: &GridTable,
    batch_size: usize,
    level: f64,
    threads: Option<usize>,
) -> Result<PredictionResult> {
    // Surface schema problems even for an empty grid.
    grid.targets(fit, 0..0)?;
    if grid.is_empty() {
        return Ok(PredictionResult::empty(level));
    }
    let kriger = Kriger::new(fit, data, level)?;
    let batch = batch_size.max(1);
    let starts: Vec<usize> = (0..grid.len()).step_by(batch).collect();
    let run = |start: &usize| -> Result<PredictionResult> {
        let (points, design) = grid.targets(fit, *start..(*start + batch).min(grid.len()))?;
        kriger.predict(&points, &design)
    };
    let parts: Vec<Result<PredictionResult>> = match threads {
        Some(1) => starts.iter().map(run).collect(),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| GeoError::Config(format!("thread pool: {e}")))?
            .install(|| starts.par_iter().map(run).collect()),
        None => starts.par_iter().map(run).collect(),
    };
    let mut out = PredictionResult::empty(level);
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}
