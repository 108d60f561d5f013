//! Observation containers, the parameter vector and model configuration.
//!
//! Parameters are laid out as `(β_0 … β_{q-1}, σ², φ_s, φ_1 … φ_p, τ²)`.
//! The optimizer works on the unconstrained image of that vector: `β` is
//! passed through and every variance or scale goes through `ln`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::kernels::{
    CovarianceForm, CovarianceSpec, CovariateKernel, DistanceMetric, InputPoint, MaternKernel,
    PointSet,
};

/// `τ² = 0` maps to `ln(TAU2_FLOOR)` on the unconstrained scale.
pub const TAU2_FLOOR: f64 = 1e-10;

/// Outcomes with their locations, mean-structure design and covariance covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    coords: Vec<[f64; 2]>,
    design: DMatrix<f64>,
    design_names: Vec<String>,
    covariate_names: Vec<String>,
    /// Row-major `n × p`.
    covariates: Vec<f64>,
    outcome: DVector<f64>,
}

impl ObservationSet {
    pub fn new(
        coords: Vec<[f64; 2]>,
        design: DMatrix<f64>,
        design_names: Vec<String>,
        covariate_names: Vec<String>,
        covariates: Vec<f64>,
        outcome: DVector<f64>,
    ) -> Result<Self> {
        let n = coords.len();
        if n == 0 {
            return Err(GeoError::Schema("observation set is empty".into()));
        }
        if design.nrows() != n || outcome.len() != n {
            return Err(GeoError::Schema(format!(
                "row counts differ: {n} locations, {} design rows, {} outcomes",
                design.nrows(),
                outcome.len()
            )));
        }
        if design.ncols() != design_names.len() {
            return Err(GeoError::Schema(format!(
                "design has {} columns but {} names",
                design.ncols(),
                design_names.len()
            )));
        }
        let p = covariate_names.len();
        if covariates.len() != n * p {
            return Err(GeoError::Schema(format!(
                "expected {} covariate values, got {}",
                n * p,
                covariates.len()
            )));
        }
        for (i, c) in coords.iter().enumerate() {
            if !(c[0].is_finite() && c[1].is_finite()) {
                return Err(GeoError::Domain(format!("non-finite coordinate in row {i}")));
            }
        }
        if let Some(i) = outcome.iter().position(|v| !v.is_finite()) {
            return Err(GeoError::Domain(format!("non-finite outcome in row {i}")));
        }
        if let Some(k) = design.iter().position(|v| !v.is_finite()) {
            return Err(GeoError::Domain(format!("non-finite design entry in row {}", k % n)));
        }
        if let Some(k) = covariates.iter().position(|v| !v.is_finite()) {
            return Err(GeoError::Domain(format!(
                "non-finite covariate '{}' in row {}",
                covariate_names[k % p],
                k / p
            )));
        }
        Ok(Self {
            coords,
            design,
            design_names,
            covariate_names,
            covariates,
            outcome,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn design_names(&self) -> &[String] {
        &self.design_names
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn outcome(&self) -> &DVector<f64> {
        &self.outcome
    }

    pub fn covariate(&self, name: &str) -> Option<Vec<f64>> {
        let p = self.covariate_names.len();
        let k = self.covariate_names.iter().position(|c| c == name)?;
        Some((0..self.len()).map(|i| self.covariates[i * p + k]).collect())
    }

    /// Locations with covariates in the kernel order of `spec`.
    pub fn point_set(&self, spec: &CovarianceSpec) -> Result<PointSet> {
        let p = self.covariate_names.len();
        let cols = spec
            .covariate_names()
            .into_iter()
            .map(|name| {
                self.covariate_names
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| GeoError::Schema(format!("missing covariance covariate '{name}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut values = Vec::with_capacity(self.len() * cols.len());
        for i in 0..self.len() {
            values.extend(cols.iter().map(|&k| self.covariates[i * p + k]));
        }
        PointSet::new(self.coords.clone(), values, cols.len())
    }

    pub fn input_points(&self) -> Vec<InputPoint> {
        let p = self.covariate_names.len();
        (0..self.len())
            .map(|i| {
                let mut pt = InputPoint::new(self.coords[i]);
                for (k, name) in self.covariate_names.iter().enumerate() {
                    pt.covariates.insert(name.clone(), self.covariates[i * p + k]);
                }
                pt
            })
            .collect()
    }

    /// Rows reordered so that row `i` of the result is row `order[i]` here.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let p = self.covariate_names.len();
        Self::new(
            order.iter().map(|&i| self.coords[i]).collect(),
            self.design.select_rows(order),
            self.design_names.clone(),
            self.covariate_names.clone(),
            order
                .iter()
                .flat_map(|&i| self.covariates[i * p..(i + 1) * p].iter().copied())
                .collect(),
            DVector::from_iterator(order.len(), order.iter().map(|&i| self.outcome[i])),
        )
    }

    /// Same observations with a different outcome vector.
    pub fn with_outcome(&self, outcome: DVector<f64>) -> Result<Self> {
        Self::new(
            self.coords.clone(),
            self.design.clone(),
            self.design_names.clone(),
            self.covariate_names.clone(),
            self.covariates.clone(),
            outcome,
        )
    }

    /// Sample standard deviation of a covariance covariate.
    pub fn covariate_sd(&self, name: &str) -> Option<f64> {
        let col = self.covariate(name)?;
        let n = col.len() as f64;
        if col.len() < 2 {
            return None;
        }
        let mean = col.iter().sum::<f64>() / n;
        Some((col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
    }
}

/// `θ = (β, σ², φ_s, φ_1 … φ_p, τ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub phis: Vec<f64>,
    pub tau2: f64,
}

/// Sizes of the parameter blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParameterLayout {
    /// Number of regression coefficients.
    pub q: usize,
    /// Number of covariate kernels.
    pub p: usize,
}

impl ParameterLayout {
    pub fn len(&self) -> usize {
        self.q + 2 + (1 + self.p)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sigma2_index(&self) -> usize {
        self.q
    }

    pub fn phi_index(&self, k: usize) -> usize {
        self.q + 1 + k
    }

    pub fn tau2_index(&self) -> usize {
        self.q + 2 + self.p
    }

    pub fn is_log_scale(&self, idx: usize) -> bool {
        idx >= self.q
    }
}

impl ParameterVector {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(GeoError::Domain(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if let Some(phi) = self.phis.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(GeoError::Domain(format!("scale parameters must be positive, got {phi}")));
        }
        if self.phis.is_empty() {
            return Err(GeoError::Domain("at least the spatial scale is required".into()));
        }
        if !(self.tau2.is_finite() && self.tau2 >= 0.0) {
            return Err(GeoError::Domain(format!("tau2 must be non-negative, got {}", self.tau2)));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(GeoError::Domain("regression coefficients must be finite".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> ParameterLayout {
        ParameterLayout {
            q: self.beta.len(),
            p: self.phis.len().saturating_sub(1),
        }
    }

    /// Natural-scale values in layout order.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        v.push(self.sigma2);
        v.extend(&self.phis);
        v.push(self.tau2);
        v
    }

    pub fn from_vec(v: &[f64], layout: ParameterLayout) -> Result<Self> {
        if v.len() != layout.len() {
            return Err(GeoError::Layout {
                expected: layout.len(),
                got: v.len(),
            });
        }
        let q = layout.q;
        Ok(Self {
            beta: v[..q].to_vec(),
            sigma2: v[q],
            phis: v[q + 1..q + 2 + layout.p].to_vec(),
            tau2: v[q + 2 + layout.p],
        })
    }

    pub fn to_unconstrained(&self) -> Vec<f64> {
        self.to_unconstrained_with_floor(TAU2_FLOOR)
    }

    pub fn to_unconstrained_with_floor(&self, tau2_floor: f64) -> Vec<f64> {
        let mut v = self.beta.clone();
        v.push(self.sigma2.ln());
        v.extend(self.phis.iter().map(|p| p.ln()));
        v.push(self.tau2.max(tau2_floor).ln());
        v
    }

    pub fn from_unconstrained_layout(v: &[f64], layout: ParameterLayout) -> Result<Self> {
        if v.len() != layout.len() {
            return Err(GeoError::Layout {
                expected: layout.len(),
                got: v.len(),
            });
        }
        let natural: Vec<f64> = v
            .iter()
            .enumerate()
            .map(|(i, &x)| if layout.is_log_scale(i) { x.exp() } else { x })
            .collect();
        Self::from_vec(&natural, layout)
    }
}

/// Inverse of [`ParameterVector::to_unconstrained`] for the layout of `config`.
pub fn from_unconstrained(v: &[f64], config: &ModelConfig) -> Result<ParameterVector> {
    ParameterVector::from_unconstrained_layout(v, config.layout())
}

pub fn to_unconstrained(theta: &ParameterVector) -> Vec<f64> {
    theta.to_unconstrained()
}

fn default_kappa() -> f64 {
    1.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateConfig {
    pub name: String,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Divide covariate differences by the observation-set standard deviation.
    #[serde(default)]
    pub standardize: bool,
}

impl CovariateConfig {
    pub fn new(name: impl Into<String>, kappa: f64) -> Self {
        Self {
            name: name.into(),
            kappa,
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NuggetConfig {
    #[default]
    Estimate,
    Fixed { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaldScale {
    /// Intervals formed for `ln` of positive parameters, then exponentiated.
    #[default]
    Log,
    /// Delta-method intervals on the natural scale.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub restarts: usize,
    /// Max-norm of the log-likelihood gradient on the unconstrained scale.
    pub gradient_tolerance: f64,
    /// Relative change in the log-likelihood between iterations.
    pub relative_tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
    /// Standard deviation of the log-normal jitter applied to restart points.
    pub restart_jitter_sd: f64,
    /// Replace `β` by its generalized least-squares value during the search.
    pub profile_beta: bool,
    pub wald_scale: WaldScale,
    pub tau2_floor: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 5,
            gradient_tolerance: 1e-4,
            relative_tolerance: 1e-10,
            max_iterations: 500,
            seed: 0,
            restart_jitter_sd: 0.25,
            profile_beta: true,
            wald_scale: WaldScale::Log,
            tau2_floor: TAU2_FLOOR,
        }
    }
}

fn default_label() -> String {
    "model".into()
}

/// Everything needed to fit one model to an [`ObservationSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_label")]
    pub label: String,
    pub form: CovarianceForm,
    #[serde(default = "default_kappa")]
    pub spatial_kappa: f64,
    #[serde(default)]
    pub covariance_covariates: Vec<CovariateConfig>,
    /// Mean-structure covariates; an intercept is always included.
    #[serde(default)]
    pub mean_covariates: Vec<String>,
    #[serde(default)]
    pub distance: DistanceMetric,
    #[serde(default)]
    pub nugget: NuggetConfig,
    #[serde(default)]
    pub fit: FitOptions,
}

impl ModelConfig {
    pub fn new(form: CovarianceForm) -> Self {
        Self {
            label: form.label().to_string(),
            form,
            spatial_kappa: 1.5,
            covariance_covariates: Vec::new(),
            mean_covariates: Vec::new(),
            distance: DistanceMetric::Euclidean,
            nugget: NuggetConfig::Estimate,
            fit: FitOptions::default(),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_covariance_covariate(mut self, name: impl Into<String>, kappa: f64) -> Self {
        self.covariance_covariates.push(CovariateConfig::new(name, kappa));
        self
    }

    pub fn with_mean_covariates<S: Into<String>>(mut self, names: impl IntoIterator<Item = S>) -> Self {
        self.mean_covariates = names.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_nugget(mut self, nugget: NuggetConfig) -> Self {
        self.nugget = nugget;
        self
    }

    pub fn with_fit_options(mut self, fit: FitOptions) -> Self {
        self.fit = fit;
        self
    }

    pub fn layout(&self) -> ParameterLayout {
        ParameterLayout {
            q: 1 + self.mean_covariates.len(),
            p: self.covariance_covariates.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.covariance_covariates.len();
        match self.form {
            CovarianceForm::Stationary if p > 0 => {
                return Err(GeoError::Config(format!(
                    "model '{}': stationary form takes no covariance covariates",
                    self.label
                )))
            }
            CovarianceForm::Product | CovarianceForm::PartialSum | CovarianceForm::FullSum
                if p == 0 =>
            {
                return Err(GeoError::Config(format!(
                    "model '{}': {:?} form needs covariance covariates",
                    self.label, self.form
                )))
            }
            _ => {}
        }
        MaternKernel::new(1.0, self.spatial_kappa)?;
        for c in &self.covariance_covariates {
            MaternKernel::new(1.0, c.kappa)?;
        }
        let mut seen = std::collections::HashSet::new();
        for n in &self.mean_covariates {
            if !seen.insert(n) {
                return Err(GeoError::Config(format!("mean covariate '{n}' listed twice")));
            }
        }
        if let NuggetConfig::Fixed { value } = self.nugget {
            if !(value.is_finite() && value >= 0.0) {
                return Err(GeoError::Config(format!("fixed nugget must be >= 0, got {value}")));
            }
        }
        let f = &self.fit;
        if f.restarts == 0 {
            return Err(GeoError::Config("restarts must be at least 1".into()));
        }
        if !(f.gradient_tolerance > 0.0 && f.relative_tolerance >= 0.0 && f.tau2_floor > 0.0) {
            return Err(GeoError::Config("tolerances must be positive".into()));
        }
        Ok(())
    }

    /// Covariance template with unit parameters; actual values come from θ.
    pub fn covariance_template(&self) -> Result<CovarianceSpec> {
        let covs = self
            .covariance_covariates
            .iter()
            .map(|c| Ok(CovariateKernel::new(c.name.clone(), MaternKernel::new(1.0, c.kappa)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(
            CovarianceSpec::new(self.form, MaternKernel::new(1.0, self.spatial_kappa)?, covs, 1.0)?
                .with_distance(self.distance),
        )
    }

    /// Parameter names in layout order.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..=self.mean_covariates.len())
            .map(|i| format!("beta{i}"))
            .collect();
        names.push("sigma2".into());
        names.push("phi_s".into());
        names.extend(self.covariance_covariates.iter().map(|c| format!("phi_{}", c.name)));
        names.push("tau2".into());
        names
    }

    /// Which layout entries the optimizer moves.
    pub fn free_mask(&self) -> Vec<bool> {
        let layout = self.layout();
        let mut mask = vec![true; layout.len()];
        if matches!(self.nugget, NuggetConfig::Fixed { .. }) {
            mask[layout.tau2_index()] = false;
        }
        mask
    }

    /// Number of estimated parameters.
    pub fn n_estimated(&self) -> usize {
        self.free_mask().iter().filter(|&&f| f).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn config(p: usize, q_extra: usize) -> ModelConfig {
        let mut c = ModelConfig::new(if p == 0 {
            CovarianceForm::Stationary
        } else {
            CovarianceForm::Product
        });
        for j in 0..p {
            c = c.with_covariance_covariate(format!("c{j}"), 1.5);
        }
        c.with_mean_covariates((0..q_extra).map(|j| format!("m{j}")))
    }

    #[test]
    fn log_components() {
        let theta = ParameterVector {
            beta: vec![1.0],
            sigma2: 1.0,
            phis: vec![0.3],
            tau2: 0.0,
        };
        let v = theta.to_unconstrained();
        assert_eq!(v[1], 0.0);
        assert!((v[2] - (-1.203_972_804_325_935_9)).abs() < 1e-12);
        assert!((v[3] - 1e-10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_tail_maps_to_ones() {
        let cfg = config(2, 2);
        let mut v = vec![0.0; cfg.layout().len()];
        v[0] = 0.7;
        let theta = from_unconstrained(&v, &cfg).unwrap();
        assert_eq!(theta.beta, vec![0.7, 0.0, 0.0]);
        assert_eq!(theta.sigma2, 1.0);
        assert_eq!(theta.phis, vec![1.0; 3]);
        assert_eq!(theta.tau2, 1.0);
    }

    #[test]
    fn length_mismatch_is_layout_error() {
        let cfg = config(2, 2);
        assert_eq!(cfg.layout().len(), 3 + 2 + 3);
        assert!(matches!(
            from_unconstrained(&[0.0; 4], &cfg),
            Err(GeoError::Layout { expected: 8, got: 4 })
        ));
    }

    #[test]
    fn names_follow_layout() {
        let cfg = config(2, 4);
        assert_eq!(
            cfg.parameter_names(),
            ["beta0", "beta1", "beta2", "beta3", "beta4", "sigma2", "phi_s", "phi_c0", "phi_c1", "tau2"]
        );
        assert_eq!(cfg.n_estimated(), 10);
        let fixed = cfg.with_nugget(NuggetConfig::Fixed { value: 0.0 });
        assert_eq!(fixed.n_estimated(), 9);
    }

    #[test]
    fn observation_set_rejects_bad_input() {
        let design = DMatrix::from_element(2, 1, 1.0);
        let ok = ObservationSet::new(
            vec![[0.0, 0.0], [1.0, 1.0]],
            design.clone(),
            vec!["intercept".into()],
            vec![],
            vec![],
            DVector::from_vec(vec![0.0, 1.0]),
        );
        assert!(ok.is_ok());
        let nan = ObservationSet::new(
            vec![[0.0, f64::NAN], [1.0, 1.0]],
            design.clone(),
            vec!["intercept".into()],
            vec![],
            vec![],
            DVector::from_vec(vec![0.0, 1.0]),
        );
        assert!(matches!(nan, Err(GeoError::Domain(_))));
        let short = ObservationSet::new(
            vec![[0.0, 0.0], [1.0, 1.0]],
            design,
            vec!["intercept".into()],
            vec![],
            vec![],
            DVector::from_vec(vec![0.0]),
        );
        assert!(matches!(short, Err(GeoError::Schema(_))));
    }

    #[test]
    fn parameter_vector_json_round_trip_is_exact() {
        let theta = ParameterVector {
            beta: vec![0.1, -1.0 / 3.0],
            sigma2: std::f64::consts::PI,
            phis: vec![1e-7, 12_345.678_9],
            tau2: 0.0,
        };
        let s = serde_json::to_string(&theta).unwrap();
        let back: ParameterVector = serde_json::from_str(&s).unwrap();
        assert_eq!(theta, back);
    }

    proptest! {
        #[test]
        fn unconstrained_round_trip(
            beta in proptest::collection::vec(-50.0f64..50.0, 1..4),
            sigma2 in 1e-6f64..1e3,
            phis in proptest::collection::vec(1e-4f64..1e4, 1..4),
            tau2 in 1e-8f64..1e2,
        ) {
            let theta = ParameterVector { beta, sigma2, phis, tau2 };
            let back = ParameterVector::from_unconstrained_layout(&theta.to_unconstrained(), theta.layout()).unwrap();
            for (a, b) in theta.to_vec().iter().zip(back.to_vec()) {
                prop_assert!(((a - b) / a.abs().max(1e-300)).abs() < 1e-12 || a == &b);
            }
        }

        #[test]
        fn random_unconstrained_is_valid(v in proptest::collection::vec(-30.0f64..30.0, 8)) {
            let cfg = config(2, 2);
            let theta = from_unconstrained(&v, &cfg).unwrap();
            prop_assert!(theta.validate().is_ok());
        }
    }
}
