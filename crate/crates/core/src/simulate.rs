//! Dataset generation from the four covariance constructions and the
//! simulation-study runner.
//!
//! # Random streams
//!
//! Replicate `r` of the scenario with index `s` draws from
//! `ChaCha20Rng::seed_from_u64(master_seed)` switched to stream
//! `(s << 32) | r` (rand_chacha 0.9, word position 0). Draw order within
//! a replicate, for `N = n + m` points:
//!
//! 1. `2N` uniforms: `x₁, x₂` of point 0, then point 1, ...
//! 2. `N·p` uniforms mapped to `[-1, 1)` by `2u − 1`, point-major, covariate order.
//! 3. `N` standard normals for the latent surface, `S = L z`.
//! 4. `N` standard normals for the nugget, `Z = τ z′` (drawn even when `τ² = 0`).
//!
//! Uniforms are `rand`'s 53-bit `f64` in `[0, 1)`; normals are
//! `rand_distr::StandardNormal`. Points `0..n` are observed, `n..N` held out.
//! Every fit in replicate `r` uses seed [`fit_seed`]`(master_seed, s, r)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::kernels::{CovarianceForm, CovarianceSpec, CovariateKernel, MaternKernel, PairwiseDistances, PointSet};
use crate::likelihood::{fit, FitResult};
use crate::linalg::factorize;
use crate::metrics::{
    parameter_coverage, percent_relative_bias, prediction_metrics, FailureCell, ParameterCell,
    PredictionCell, StudyReport,
};
use crate::model::{FitOptions, ModelConfig, NuggetConfig, ObservationSet, ParameterVector};
use crate::predict::Kriger;

fn default_kappa() -> f64 {
    1.5
}
fn default_names() -> Vec<String> {
    vec!["e".into(), "t".into()]
}
fn default_n() -> usize {
    200
}
fn default_m() -> usize {
    50
}
fn default_b() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub generator: CovarianceForm,
    /// Smoothness of every kernel.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Covariates drawn iid Unif[-1, 1]; all enter the mean, and the
    /// covariance for non-stationary generators.
    #[serde(default = "default_names")]
    pub covariate_names: Vec<String>,
    /// `phis` holds the spatial scale then one per covariate; a stationary
    /// generator only uses the first.
    pub theta_true: ParameterVector,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_m")]
    pub heldout_m: usize,
    #[serde(default = "default_b")]
    pub replicates: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Scenario index used in stream derivation.
    #[serde(default)]
    pub index: u32,
    /// Estimate τ² in the fits; otherwise it is held at its true value.
    #[serde(default)]
    pub estimate_nugget: bool,
}

impl ScenarioConfig {
    /// Replication design: θ = (1, 0.5, −0.5, 0.5, 0.3, 0.2, 0.1), τ² = 0,
    /// κ = 1.5, covariates `e` and `t`.
    pub fn replica(index: u32, generator: CovarianceForm, master_seed: u64) -> Self {
        let name = match generator {
            CovarianceForm::Stationary => "stationary".to_string(),
            CovarianceForm::Product => "scenario1".into(),
            CovarianceForm::PartialSum => "scenario2".into(),
            CovarianceForm::FullSum => "scenario3".into(),
        };
        Self {
            name,
            generator,
            kappa: 1.5,
            covariate_names: default_names(),
            theta_true: ParameterVector {
                beta: vec![1.0, 0.5, -0.5],
                sigma2: 0.5,
                phis: vec![0.3, 0.2, 0.1],
                tau2: 0.0,
            },
            n: default_n(),
            heldout_m: default_m(),
            replicates: default_b(),
            master_seed,
            index,
            estimate_nugget: false,
        }
    }

    /// The three non-stationary scenarios.
    pub fn replica_set(master_seed: u64) -> Vec<Self> {
        CovarianceForm::NON_STATIONARY
            .iter()
            .enumerate()
            .map(|(i, f)| Self::replica(i as u32, *f, master_seed))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.replicates == 0 {
            return Err(GeoError::Config(format!(
                "scenario '{}': n and replicates must be at least 1",
                self.name
            )));
        }
        self.theta_true.validate()?;
        let p = self.covariate_names.len();
        if self.theta_true.beta.len() != p + 1 {
            return Err(GeoError::Config(format!(
                "scenario '{}': expected {} regression coefficients, got {}",
                self.name,
                p + 1,
                self.theta_true.beta.len()
            )));
        }
        let needed = if self.generator == CovarianceForm::Stationary { 1 } else { p + 1 };
        if self.theta_true.phis.len() < needed {
            return Err(GeoError::Config(format!(
                "scenario '{}': expected {needed} scale parameters, got {}",
                self.name,
                self.theta_true.phis.len()
            )));
        }
        if self.generator != CovarianceForm::Stationary && p == 0 {
            return Err(GeoError::Config(format!(
                "scenario '{}': non-stationary generator needs covariates",
                self.name
            )));
        }
        Ok(())
    }

    /// Model configuration of form `form` in this scenario's setting.
    pub fn model_config(&self, form: CovarianceForm, fit_options: &FitOptions) -> ModelConfig {
        let mut cfg = ModelConfig::new(form).with_mean_covariates(self.covariate_names.clone());
        cfg.spatial_kappa = self.kappa;
        if form != CovarianceForm::Stationary {
            for name in &self.covariate_names {
                cfg = cfg.with_covariance_covariate(name.clone(), self.kappa);
            }
        }
        cfg.nugget = if self.estimate_nugget {
            NuggetConfig::Estimate
        } else {
            NuggetConfig::Fixed {
                value: self.theta_true.tau2,
            }
        };
        cfg.fit = fit_options.clone();
        cfg
    }

    /// The generating parameters by name, in the generator's layout.
    pub fn truth(&self) -> Vec<(String, f64)> {
        let cfg = self.model_config(self.generator, &FitOptions::default());
        let mut theta = self.theta_true.clone();
        theta.phis.truncate(cfg.layout().p + 1);
        cfg.parameter_names().into_iter().zip(theta.to_vec()).collect()
    }

    fn generator_spec(&self) -> Result<CovarianceSpec> {
        let theta = &self.theta_true;
        let spatial = MaternKernel::new(theta.phis[0], self.kappa)?;
        if self.generator == CovarianceForm::Stationary {
            return CovarianceSpec::stationary(spatial, theta.sigma2);
        }
        let covs = self
            .covariate_names
            .iter()
            .zip(&theta.phis[1..])
            .map(|(name, &phi)| Ok(CovariateKernel::new(name.clone(), MaternKernel::new(phi, self.kappa)?)))
            .collect::<Result<Vec<_>>>()?;
        CovarianceSpec::new(self.generator, spatial, covs, theta.sigma2)
    }
}

/// Random stream of one replicate.
pub fn replicate_rng(master_seed: u64, scenario_index: u32, replicate_id: u32) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream((u64::from(scenario_index) << 32) | u64::from(replicate_id));
    rng
}

/// Optimizer seed for the fits of one replicate.
pub fn fit_seed(master_seed: u64, scenario_index: u32, replicate_id: u32) -> u64 {
    master_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ ((u64::from(scenario_index) << 32) | u64::from(replicate_id))
}

/// `L z` with `L L' = Σ(points)`, jittered as in likelihood evaluation.
fn correlate(spec: &CovarianceSpec, points: &PointSet, z: Vec<f64>) -> Result<DVector<f64>> {
    let sigma = PairwiseDistances::new(points, spec.distance).covariance(spec, 0.0);
    let factor = factorize(sigma).ok_or_else(|| GeoError::SingularCovariance {
        theta: format!("sigma2 = {}, phis = {:?}", spec.sigma2, spec.phis()),
    })?;
    Ok(factor.chol.l_dirty().lower_triangle() * DVector::from_vec(z))
}

/// Draws the latent surface `S` at `points`, one standard normal per point.
pub fn sample_gaussian_field<R: Rng + ?Sized>(spec: &CovarianceSpec, points: &PointSet, rng: &mut R) -> Result<Vec<f64>> {
    let z: Vec<f64> = (0..points.len()).map(|_| rng.sample(StandardNormal)).collect();
    Ok(correlate(spec, points, z)?.as_slice().to_vec())
}

/// A sampled replicate: observed rows, held-out rows and the latent surface.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub observed: ObservationSet,
    pub heldout: ObservationSet,
    /// Latent `S` at observed then held-out points.
    pub latent: Vec<f64>,
}

/// Draws one dataset. Identical `(master_seed, index, replicate_id)` give
/// bitwise-identical output.
pub fn sample_dataset(cfg: &ScenarioConfig, replicate_id: u32) -> Result<(ObservationSet, ObservationSet)> {
    let sim = simulate_replicate(cfg, replicate_id)?;
    Ok((sim.observed, sim.heldout))
}

pub fn simulate_replicate(cfg: &ScenarioConfig, replicate_id: u32) -> Result<SimulatedData> {
    cfg.validate()?;
    let n = cfg.n;
    let total = n + cfg.heldout_m;
    let p = cfg.covariate_names.len();
    let mut rng = replicate_rng(cfg.master_seed, cfg.index, replicate_id);

    let coords: Vec<[f64; 2]> = (0..total).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    let covariates: Vec<f64> = (0..total * p).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
    let z: Vec<f64> = (0..total).map(|_| rng.sample(StandardNormal)).collect();
    let z_nugget: Vec<f64> = (0..total).map(|_| rng.sample(StandardNormal)).collect();

    let spec = cfg.generator_spec()?;
    let covariance_cols = if cfg.generator == CovarianceForm::Stationary {
        Vec::new()
    } else {
        covariates.clone()
    };
    let points = PointSet::new(coords.clone(), covariance_cols, spec.p())?;
    let latent = correlate(&spec, &points, z)?;

    let mut design = DMatrix::zeros(total, p + 1);
    for i in 0..total {
        design[(i, 0)] = 1.0;
        for j in 0..p {
            design[(i, j + 1)] = covariates[i * p + j];
        }
    }
    let beta = DVector::from_column_slice(&cfg.theta_true.beta);
    let tau = cfg.theta_true.tau2.sqrt();
    let trend = &design * beta;
    let y: Vec<f64> = (0..total).map(|i| trend[i] + latent[i] + tau * z_nugget[i]).collect();

    let mut design_names = vec!["intercept".to_string()];
    design_names.extend(cfg.covariate_names.iter().cloned());
    let split = |range: std::ops::Range<usize>| {
        ObservationSet::new(
            coords[range.clone()].to_vec(),
            design.rows(range.start, range.len()).into_owned(),
            design_names.clone(),
            cfg.covariate_names.clone(),
            covariates[range.start * p..range.end * p].to_vec(),
            DVector::from_column_slice(&y[range]),
        )
    };
    let observed = split(0..n)?;
    let heldout = if cfg.heldout_m > 0 {
        split(n..total)?
    } else {
        // An empty held-out set cannot be an ObservationSet; reuse one row as a placeholder.
        return Ok(SimulatedData {
            heldout: observed.clone(),
            observed,
            latent: latent.as_slice().to_vec(),
        });
    };
    Ok(SimulatedData {
        observed,
        heldout,
        latent: latent.as_slice().to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyOptions {
    /// Worker threads; `None` uses every available core.
    pub threads: Option<usize>,
    pub fit: FitOptions,
}

/// Result of one model fitted to one replicate.
#[derive(Debug, Clone)]
pub struct ReplicateFit {
    pub replicate: u32,
    pub form: CovarianceForm,
    pub fit: std::result::Result<FitResult, String>,
    /// `(prediction, observed)` and interval for every held-out point.
    pub predictions: Vec<((f64, f64), (f64, f64))>,
}

impl ReplicateFit {
    pub fn usable(&self) -> Option<&FitResult> {
        self.fit.as_ref().ok().filter(|f| f.converged)
    }
}

/// Fits every form to replicate `replicate_id` and predicts its held-out rows.
pub fn run_replicate(
    cfg: &ScenarioConfig,
    replicate_id: u32,
    fit_forms: &[CovarianceForm],
    fit_options: &FitOptions,
) -> Result<Vec<ReplicateFit>> {
    let sim = simulate_replicate(cfg, replicate_id)?;
    let mut opts = fit_options.clone();
    opts.seed = fit_seed(cfg.master_seed, cfg.index, replicate_id);
    let heldout_points = sim.heldout.input_points();
    Ok(fit_forms
        .iter()
        .map(|&form| {
            let model = cfg.model_config(form, &opts);
            let fitted = fit(&sim.observed, &model).map_err(|e| e.to_string());
            let predictions = match (&fitted, cfg.heldout_m) {
                (Ok(f), m) if f.converged && m > 0 => Kriger::new(f, &sim.observed, 0.95)
                    .and_then(|k| k.predict(&heldout_points, sim.heldout.design()))
                    .map(|pred| {
                        (0..pred.len())
                            .map(|i| ((pred.mean[i], sim.heldout.outcome()[i]), (pred.lower[i], pred.upper[i])))
                            .collect()
                    })
                    .unwrap_or_default(),
                _ => Vec::new(),
            };
            ReplicateFit {
                replicate: replicate_id,
                form,
                fit: fitted,
                predictions,
            }
        })
        .collect())
}

/// Aggregates replicate fits of one scenario into report rows.
pub fn aggregate(
    cfg: &ScenarioConfig,
    fit_forms: &[CovarianceForm],
    fits: &[ReplicateFit],
    report: &mut StudyReport,
) {
    let truth = cfg.truth();
    for &form in fit_forms {
        let cell: Vec<&ReplicateFit> = fits.iter().filter(|f| f.form == form).collect();
        let usable: Vec<&FitResult> = cell.iter().filter_map(|f| f.usable()).collect();
        let model = form.label().to_string();
        let names = cfg.model_config(form, &FitOptions::default()).parameter_names();
        for (name, true_value) in &truth {
            if *true_value == 0.0 {
                continue;
            }
            let Some(idx) = names.iter().position(|n| n == name) else {
                continue;
            };
            if usable.iter().any(|f| !f.free[idx]) {
                continue;
            }
            let estimates: Vec<f64> = usable.iter().map(|f| f.theta_hat.to_vec()[idx]).collect();
            let intervals: Vec<(f64, f64)> = usable
                .iter()
                .filter_map(|f| f.intervals.as_ref().map(|iv| (iv[idx].lower, iv[idx].upper)))
                .filter(|(lo, hi)| !lo.is_nan() && !hi.is_nan())
                .collect();
            report.parameter_table.push(ParameterCell {
                scenario: cfg.name.clone(),
                model: model.clone(),
                parameter: name.clone(),
                truth: *true_value,
                prb: percent_relative_bias(&estimates, *true_value).unwrap_or(f64::NAN),
                cp: parameter_coverage(&intervals, *true_value),
                estimates: estimates.len(),
                intervals: intervals.len(),
            });
        }
        let (pairs, intervals): (Vec<(f64, f64)>, Vec<(f64, f64)>) = cell
            .iter()
            .filter(|f| f.usable().is_some())
            .flat_map(|f| f.predictions.iter().copied())
            .unzip();
        let pm = prediction_metrics(&pairs, &intervals).ok();
        report.prediction_table.push(PredictionCell {
            scenario: cfg.name.clone(),
            model: model.clone(),
            bias: pm.map_or(f64::NAN, |m| m.bias),
            rmse: pm.map_or(f64::NAN, |m| m.rmse),
            cp: pm.map_or(f64::NAN, |m| m.cp),
            points: pairs.len(),
        });
        report.failure_counts.push(FailureCell {
            scenario: cfg.name.clone(),
            model,
            replicates: cell.len(),
            failed: cell.len() - usable.len(),
            wald_failed: usable
                .iter()
                .filter(|f| match &f.intervals {
                    None => true,
                    Some(iv) => iv.iter().any(|r| r.lower.is_nan() || r.upper.is_nan()),
                })
                .count(),
        });
    }
}

/// Runs every scenario against every fit form.
pub fn run_study(
    scenarios: &[ScenarioConfig],
    fit_forms: &[CovarianceForm],
    options: &StudyOptions,
) -> Result<StudyReport> {
    run_study_with_progress(scenarios, fit_forms, options, |_| {})
}

/// As [`run_study`], calling `progress` with a line per completed cell.
pub fn run_study_with_progress(
    scenarios: &[ScenarioConfig],
    fit_forms: &[CovarianceForm],
    options: &StudyOptions,
    progress: impl Fn(&str) + Sync,
) -> Result<StudyReport> {
    if scenarios.is_empty() || fit_forms.is_empty() {
        return Err(GeoError::Config("a study needs at least one scenario and one fit form".into()));
    }
    for s in scenarios {
        s.validate()?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.threads.unwrap_or(0))
        .build()
        .map_err(|e| GeoError::Config(format!("thread pool: {e}")))?;
    let mut report = StudyReport::default();
    for cfg in scenarios {
        let per_replicate: Vec<Result<Vec<ReplicateFit>>> = pool.install(|| {
            (0..cfg.replicates as u32)
                .into_par_iter()
                .map(|r| run_replicate(cfg, r, fit_forms, &options.fit))
                .collect()
        });
        let mut fits = Vec::with_capacity(cfg.replicates * fit_forms.len());
        for (r, res) in per_replicate.into_iter().enumerate() {
            match res {
                Ok(f) => fits.extend(f),
                // Sampling failures count against every model of the replicate.
                Err(e) => fits.extend(fit_forms.iter().map(|&form| ReplicateFit {
                    replicate: r as u32,
                    form,
                    fit: Err(e.to_string()),
                    predictions: Vec::new(),
                })),
            }
        }
        let before = report.failure_counts.len();
        aggregate(cfg, fit_forms, &fits, &mut report);
        for f in &report.failure_counts[before..] {
            progress(&format!(
                "{} / {}: {} replicates, {} excluded",
                f.scenario, f.model, f.replicates, f.failed
            ));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(generator: CovarianceForm) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::replica(0, generator, 42);
        cfg.n = 30;
        cfg.heldout_m = 5;
        cfg.replicates = 1;
        cfg
    }

    #[test]
    fn same_seed_same_dataset() {
        let cfg = small(CovarianceForm::Product);
        let (a, ha) = sample_dataset(&cfg, 3).unwrap();
        let (b, hb) = sample_dataset(&cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        let (c, _) = sample_dataset(&cfg, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn vanishing_variance_leaves_the_trend() {
        let mut cfg = small(CovarianceForm::FullSum);
        cfg.theta_true.sigma2 = 1e-300;
        cfg.theta_true.tau2 = 0.0;
        let (obs, _) = sample_dataset(&cfg, 0).unwrap();
        let trend = obs.design() * DVector::from_column_slice(&cfg.theta_true.beta);
        assert!((obs.outcome() - trend).abs().max() < 1e-140);
    }

    #[test]
    fn draws_lie_in_their_domains() {
        let cfg = small(CovarianceForm::PartialSum);
        let (obs, held) = sample_dataset(&cfg, 1).unwrap();
        assert_eq!((obs.len(), held.len()), (30, 5));
        for c in obs.coords() {
            assert!((0.0..1.0).contains(&c[0]) && (0.0..1.0).contains(&c[1]));
        }
        for v in obs.covariate("e").unwrap() {
            assert!((-1.0..1.0).contains(&v));
        }
    }

    #[test]
    fn truth_follows_generator_layout() {
        let cfg = ScenarioConfig::replica(0, CovarianceForm::Product, 1);
        let names: Vec<String> = cfg.truth().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["beta0", "beta1", "beta2", "sigma2", "phi_s", "phi_e", "phi_t", "tau2"]);
        let stat = ScenarioConfig::replica(0, CovarianceForm::Stationary, 1);
        assert_eq!(stat.truth().len(), 6);
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        let mut cfg = small(CovarianceForm::Product);
        cfg.replicates = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = small(CovarianceForm::Product);
        cfg.theta_true.phis.truncate(2);
        assert!(cfg.validate().is_err());
    }
}
