//! Gaussian log-likelihood, maximum-likelihood fitting, Wald intervals and
//! information criteria.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::error::{GeoError, Result};
use crate::kernels::{CovarianceSpec, PairwiseDistances};
use crate::linalg::{factorize, Factor};
use crate::model::{ModelConfig, NuggetConfig, ObservationSet, ParameterLayout, ParameterVector, WaldScale};
use crate::optim::{minimize, numeric_gradient, numeric_hessian, BfgsOptions};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative finite-difference step for the observed information.
pub const HESSIAN_STEP: f64 = 1e-4;

/// Log-scale parameters are confined to `[-B, B]`; the objective is flat outside.
const UNCONSTRAINED_BOUND: f64 = 40.0;

/// Two-sided standard normal quantile for a central `level` interval.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(GeoError::Domain(format!("interval level must lie in (0, 1), got {level}")));
    }
    let n = StdNormal::new(0.0, 1.0).expect("standard normal");
    Ok(n.inverse_cdf(0.5 + level / 2.0))
}

/// AIC and BIC for log-likelihood `loglik` with `k` parameters and `n` observations.
pub fn information_criteria(loglik: f64, k: usize, n: usize) -> (f64, f64) {
    let k = k as f64;
    (-2.0 * loglik + 2.0 * k, -2.0 * loglik + k * (n as f64).ln())
}

/// Log-likelihood pieces that do not change with θ.
pub struct LikelihoodProblem {
    template: CovarianceSpec,
    distances: PairwiseDistances,
    design: DMatrix<f64>,
    outcome: DVector<f64>,
}

impl LikelihoodProblem {
    pub fn new(data: &ObservationSet, template: &CovarianceSpec) -> Result<Self> {
        template.validate()?;
        let points = data.point_set(template)?;
        Ok(Self {
            template: template.clone(),
            distances: PairwiseDistances::new(&points, template.distance),
            design: data.design().clone(),
            outcome: data.outcome().clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    pub fn q(&self) -> usize {
        self.design.ncols()
    }

    pub fn distances(&self) -> &PairwiseDistances {
        &self.distances
    }

    fn check_theta(&self, theta: &ParameterVector) -> Result<()> {
        theta.validate()?;
        if theta.beta.len() != self.q() {
            return Err(GeoError::Layout {
                expected: self.q(),
                got: theta.beta.len(),
            });
        }
        if theta.phis.len() != self.template.p() + 1 {
            return Err(GeoError::Layout {
                expected: self.template.p() + 1,
                got: theta.phis.len(),
            });
        }
        Ok(())
    }

    fn factor(&self, sigma2: f64, phis: &[f64], tau2: f64) -> Result<Factor> {
        let spec = self.template.with_parameters(sigma2, phis)?;
        let sigma = self.distances.covariance(&spec, tau2);
        factorize(sigma).ok_or_else(|| GeoError::SingularCovariance {
            theta: format!("sigma2={sigma2}, phis={phis:?}, tau2={tau2}"),
        })
    }

    fn loglik_from_factor(&self, factor: &Factor, beta: &DVector<f64>) -> f64 {
        let resid = &self.outcome - &self.design * beta;
        let z = factor.solve_lower(&resid);
        let n = self.n() as f64;
        -0.5 * n * LN_2PI - 0.5 * factor.log_det() - 0.5 * z.norm_squared()
    }

    /// ℓ(θ) via a Cholesky factor of Σ(θ).
    pub fn log_likelihood(&self, theta: &ParameterVector) -> Result<f64> {
        self.check_theta(theta)?;
        let factor = self.factor(theta.sigma2, &theta.phis, theta.tau2)?;
        Ok(self.loglik_from_factor(&factor, &DVector::from_column_slice(&theta.beta)))
    }

    /// Generalized least-squares `β̂` and the log-likelihood at `(β̂, ψ)`.
    pub fn profile(&self, sigma2: f64, phis: &[f64], tau2: f64) -> Result<(DVector<f64>, f64)> {
        let factor = self.factor(sigma2, phis, tau2)?;
        let beta = gls(&factor, &self.design, &self.outcome)?;
        let ll = self.loglik_from_factor(&factor, &beta);
        Ok((beta, ll))
    }
}

impl LikelihoodProblem {
    /// `(DᵀΣ⁻¹D)⁻¹`, the covariance of the GLS estimator at `θ`.
    pub fn gls_covariance(&self, theta: &ParameterVector) -> Result<DMatrix<f64>> {
        self.check_theta(theta)?;
        let factor = self.factor(theta.sigma2, &theta.phis, theta.tau2)?;
        let dt = factor.solve_lower_matrix(&self.design);
        (dt.transpose() * &dt)
            .try_inverse()
            .ok_or_else(|| GeoError::Domain("design matrix is not of full column rank".into()))
    }
}

fn gls(factor: &Factor, design: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let dt = factor.solve_lower_matrix(design);
    let yt = factor.solve_lower(y);
    let xtx = dt.transpose() * &dt;
    let xty = dt.transpose() * yt;
    xtx.cholesky()
        .map(|c| c.solve(&xty))
        .ok_or_else(|| GeoError::Domain("design matrix is not of full column rank".into()))
}

/// ℓ(θ) = −(n/2)ln(2π) − ½ln|Σ| − ½(y−Dβ)ᵀΣ⁻¹(y−Dβ).
///
/// The scale parameters and `σ²` in `spec` are replaced by those in `theta`.
pub fn log_likelihood(theta: &ParameterVector, data: &ObservationSet, spec: &CovarianceSpec) -> Result<f64> {
    LikelihoodProblem::new(data, spec)?.log_likelihood(theta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamInterval {
    pub name: String,
    #[serde(with = "crate::serde_f64")]
    pub estimate: f64,
    #[serde(with = "crate::serde_f64")]
    pub lower: f64,
    #[serde(with = "crate::serde_f64")]
    pub upper: f64,
    /// Standard error on the unconstrained scale (0 for fixed parameters).
    #[serde(with = "crate::serde_f64")]
    pub se: f64,
    pub fixed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub config: ModelConfig,
    /// Fitted covariance, including any covariate standardization scales.
    pub spec: CovarianceSpec,
    pub theta_hat: ParameterVector,
    pub parameter_names: Vec<String>,
    pub free: Vec<bool>,
    /// Inverse observed information over the free parameters, unconstrained scale.
    #[serde(with = "crate::serde_f64::matrix")]
    pub inverse_information: Option<Vec<Vec<f64>>>,
    /// The full observed information was singular and `inverse_information`
    /// is block-diagonal: the GLS covariance for `β` and the inverted
    /// covariance-parameter block (NaN where that block is singular).
    #[serde(default)]
    pub block_information: bool,
    /// 95% Wald intervals, when the observed information is invertible.
    pub intervals: Option<Vec<ParamInterval>>,
    #[serde(with = "crate::serde_f64")]
    pub loglik: f64,
    #[serde(with = "crate::serde_f64")]
    pub aic: f64,
    #[serde(with = "crate::serde_f64")]
    pub bic: f64,
    pub k: usize,
    pub n: usize,
    pub converged: bool,
    #[serde(with = "crate::serde_f64")]
    pub gradient_max_norm: f64,
    pub n_evals: usize,
    pub iterations: usize,
    /// Index of the restart that produced the returned estimate.
    pub best_of_restarts: usize,
    pub restarts_succeeded: usize,
    pub seed: u64,
}

impl FitResult {
    /// Estimate and interval rows for display, falling back to NaN bounds.
    pub fn table_rows(&self) -> Vec<ParamInterval> {
        if let Some(iv) = &self.intervals {
            return iv.clone();
        }
        let values = self.theta_hat.to_vec();
        self.parameter_names
            .iter()
            .zip(values)
            .zip(&self.free)
            .map(|((name, est), &free)| ParamInterval {
                name: name.clone(),
                estimate: est,
                lower: if free { f64::NAN } else { est },
                upper: if free { f64::NAN } else { est },
                se: if free { f64::NAN } else { 0.0 },
                fixed: !free,
            })
            .collect()
    }

    /// Rows reported in output tables: estimated parameters plus a non-zero fixed nugget.
    pub fn reported_rows(&self) -> Vec<ParamInterval> {
        self.table_rows()
            .into_iter()
            .filter(|r| !r.fixed || r.estimate != 0.0)
            .collect()
    }
}

/// Resolves standardization scales and returns the covariance template.
pub fn fitted_template(data: &ObservationSet, config: &ModelConfig) -> Result<CovarianceSpec> {
    let mut template = config.covariance_template()?;
    for (kernel, cfg) in template.covariates.iter_mut().zip(&config.covariance_covariates) {
        if cfg.standardize {
            let sd = data.covariate_sd(&cfg.name).ok_or_else(|| {
                GeoError::Schema(format!("missing covariance covariate '{}'", cfg.name))
            })?;
            if !(sd > 0.0) {
                return Err(GeoError::Domain(format!(
                    "covariate '{}' is constant and cannot be standardized",
                    cfg.name
                )));
            }
            kernel.scale = sd;
        }
    }
    Ok(template)
}

/// Objective over the free entries of the unconstrained parameter vector.
struct Objective<'a> {
    problem: &'a LikelihoodProblem,
    layout: ParameterLayout,
    free: Vec<usize>,
    base: Vec<f64>,
    fixed_tau2: Option<f64>,
}

impl Objective<'_> {
    fn theta(&self, v: &[f64]) -> Result<ParameterVector> {
        let mut theta = ParameterVector::from_unconstrained_layout(v, self.layout)?;
        if let Some(t) = self.fixed_tau2 {
            theta.tau2 = t;
        }
        Ok(theta)
    }

    /// Full vector from the free entries, projected onto the box.
    fn expand(&self, free_values: &[f64]) -> Vec<f64> {
        let mut v = self.base.clone();
        for (&i, &x) in self.free.iter().zip(free_values) {
            v[i] = if self.layout.is_log_scale(i) {
                x.clamp(-UNCONSTRAINED_BOUND, UNCONSTRAINED_BOUND)
            } else {
                x
            };
        }
        v
    }

    fn in_bounds(&self, v: &[f64]) -> bool {
        v.iter().all(|x| x.is_finite())
    }

    /// ℓ at a full unconstrained vector.
    fn loglik(&self, v: &[f64]) -> f64 {
        if !self.in_bounds(v) {
            return f64::NEG_INFINITY;
        }
        self.theta(v)
            .and_then(|theta| self.problem.log_likelihood(&theta))
            .unwrap_or(f64::NEG_INFINITY)
    }

    fn covariance_part(&self, v: &[f64]) -> (f64, Vec<f64>, f64) {
        let q = self.layout.q;
        let p = self.layout.p;
        (
            v[q].exp(),
            v[q + 1..q + 2 + p].iter().map(|x| x.exp()).collect(),
            self.fixed_tau2.unwrap_or_else(|| v[q + 2 + p].exp()),
        )
    }

    /// Profile log-likelihood with β at its GLS value; also returns β̂.
    fn profile(&self, v: &[f64]) -> Option<(DVector<f64>, f64)> {
        if !self.in_bounds(v) {
            return None;
        }
        let (sigma2, phis, tau2) = self.covariance_part(v);
        self.problem.profile(sigma2, &phis, tau2).ok()
    }
}

/// Maximum-likelihood fit of `config` to `data`.
pub fn fit(data: &ObservationSet, config: &ModelConfig) -> Result<FitResult> {
    fit_with_starts(data, config, &[])
}

/// As [`fit`], additionally running the optimizer from each of `extra_starts`
/// after the jittered restarts. Used to warm-start nested comparisons.
pub fn fit_with_starts(
    data: &ObservationSet,
    config: &ModelConfig,
    extra_starts: &[ParameterVector],
) -> Result<FitResult> {
    fit_impl(data, config, extra_starts, None)
}

/// Maximum-likelihood `β` with `σ²`, the scales and `τ²` held at the values
/// in `covariance` (its `beta` is ignored). With `profile_beta` this is the
/// GLS estimate; otherwise BFGS searches over `β`.
pub fn fit_mean(data: &ObservationSet, config: &ModelConfig, covariance: &ParameterVector) -> Result<FitResult> {
    fit_impl(data, config, &[], Some(covariance))
}

fn fit_impl(
    data: &ObservationSet,
    config: &ModelConfig,
    extra_starts: &[ParameterVector],
    fixed_covariance: Option<&ParameterVector>,
) -> Result<FitResult> {
    config.validate()?;
    if let Some(c) = fixed_covariance {
        if c.phis.len() != config.layout().p + 1 {
            return Err(GeoError::Layout {
                expected: config.layout().p + 1,
                got: c.phis.len(),
            });
        }
    }
    for s in extra_starts {
        s.validate()?;
        if s.layout() != config.layout() {
            return Err(GeoError::Layout {
                expected: config.layout().len(),
                got: s.to_vec().len(),
            });
        }
    }
    let layout = config.layout();
    let n = data.len();
    if data.design().ncols() != layout.q {
        return Err(GeoError::Schema(format!(
            "design has {} columns but the model expects {}",
            data.design().ncols(),
            layout.q
        )));
    }
    if n <= layout.q {
        return Err(GeoError::Domain(format!(
            "need more observations ({n}) than regression coefficients ({})",
            layout.q
        )));
    }
    let template = fitted_template(data, config)?;
    let problem = LikelihoodProblem::new(data, &template)?;
    let opts = &config.fit;

    let mut start = initial_values(data, &problem, config)?;
    let mut free_mask = config.free_mask();
    let mut opts = opts.clone();
    if let Some(c) = fixed_covariance {
        start.sigma2 = c.sigma2;
        start.phis = c.phis.clone();
        start.tau2 = c.tau2;
        free_mask[layout.q..].iter_mut().for_each(|f| *f = false);
        opts.restarts = 1;
    }
    let opts = &opts;
    let cov_free: Vec<usize> = (layout.q..layout.len()).filter(|&i| free_mask[i]).collect();
    let all_free: Vec<usize> = (0..layout.len()).filter(|&i| free_mask[i]).collect();

    let bfgs = BfgsOptions {
        gradient_tolerance: opts.gradient_tolerance,
        relative_tolerance: opts.relative_tolerance,
        max_iterations: opts.max_iterations,
        ..Default::default()
    };

    let fixed_tau2 = match (fixed_covariance, config.nugget) {
        (Some(c), _) => Some(c.tau2),
        (None, NuggetConfig::Fixed { value }) => Some(value),
        (None, NuggetConfig::Estimate) => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let jitter = Normal::new(0.0, opts.restart_jitter_sd)
        .map_err(|e| GeoError::Config(format!("restart jitter: {e}")))?;

    let mut total_evals = 0;
    let mut best: Option<(usize, Vec<f64>, f64, bool, usize)> = None;
    let mut succeeded = 0;
    for restart in 0..opts.restarts + extra_starts.len() {
        let mut v0 = match restart.checked_sub(opts.restarts) {
            Some(j) => {
                let mut s = extra_starts[j].clone();
                if let Some(t) = fixed_tau2 {
                    s.tau2 = t;
                }
                s.to_unconstrained_with_floor(opts.tau2_floor)
            }
            None => start.to_unconstrained_with_floor(opts.tau2_floor),
        };
        if restart > 0 && restart < opts.restarts {
            for &i in &cov_free {
                v0[i] += jitter.sample(&mut rng);
            }
        }
        let (v_hat, ll, converged, iters, evals) = if opts.profile_beta {
            let obj = Objective {
                problem: &problem,
                layout,
                free: cov_free.clone(),
                base: v0.clone(),
                fixed_tau2,
            };
            let x0: Vec<f64> = cov_free.iter().map(|&i| v0[i]).collect();
            let out = minimize(
                |x: &[f64]| match obj.profile(&obj.expand(x)) {
                    Some((_, ll)) => -ll,
                    None => f64::INFINITY,
                },
                &x0,
                &bfgs,
            );
            let mut v = obj.expand(&out.x);
            let ll = match obj.profile(&v) {
                Some((beta, ll)) => {
                    v[..layout.q].copy_from_slice(beta.as_slice());
                    ll
                }
                None => f64::NEG_INFINITY,
            };
            (v, ll, out.converged(), out.iterations, out.evaluations + 1)
        } else {
            let obj = Objective {
                problem: &problem,
                layout,
                free: all_free.clone(),
                base: v0.clone(),
                fixed_tau2,
            };
            let x0: Vec<f64> = all_free.iter().map(|&i| v0[i]).collect();
            let out = minimize(|x: &[f64]| -obj.loglik(&obj.expand(x)), &x0, &bfgs);
            let v = obj.expand(&out.x);
            (v, -out.fx, out.converged(), out.iterations, out.evaluations)
        };
        total_evals += evals;
        if !ll.is_finite() {
            continue;
        }
        succeeded += 1;
        let better = match &best {
            None => true,
            Some((_, _, best_ll, _, _)) => ll > *best_ll,
        };
        if better {
            best = Some((restart, v_hat, ll, converged, iters));
        }
    }

    let Some((best_restart, v_hat, _, converged, iterations)) = best else {
        return Err(GeoError::Optimization(format!(
            "all {} restarts failed to reach a finite log-likelihood (start: {:?}, {} evaluations)",
            opts.restarts, start, total_evals
        )));
    };

    let mut theta_hat = ParameterVector::from_unconstrained_layout(&v_hat, layout)?;
    if let Some(t) = fixed_tau2 {
        theta_hat.tau2 = t;
    }
    if let Some(c) = fixed_covariance {
        theta_hat.sigma2 = c.sigma2;
        theta_hat.phis = c.phis.clone();
    }
    // Recompute at the reported estimate so loglik matches theta_hat exactly.
    let loglik = problem.log_likelihood(&theta_hat)?;

    let full = Objective {
        problem: &problem,
        layout,
        free: all_free.clone(),
        base: v_hat.clone(),
        fixed_tau2,
    };
    let x_hat: Vec<f64> = all_free.iter().map(|&i| v_hat[i]).collect();
    let mut neg_ll = |x: &[f64]| -full.loglik(&full.expand(x));
    let grad = numeric_gradient(&mut neg_ll, &x_hat, BfgsOptions::default().grad_step);
    let gradient_max_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let hess = numeric_hessian(&mut neg_ll, &x_hat, HESSIAN_STEP);
    total_evals += 2 * x_hat.len() + 1 + 2 * x_hat.len() * x_hat.len();
    let mut block_information = false;
    let inverse_information = invert_information(&hess).or_else(|| {
        block_information = true;
        block_inverse(&problem, &theta_hat, &hess, &all_free, layout.q)
    });

    let k = all_free.len();
    let (aic, bic) = information_criteria(loglik, k, n);
    let mut result = FitResult {
        config: config.clone(),
        spec: template.with_parameters(theta_hat.sigma2, &theta_hat.phis)?,
        theta_hat,
        parameter_names: config.parameter_names(),
        free: free_mask,
        inverse_information,
        block_information,
        intervals: None,
        loglik,
        aic,
        bic,
        k,
        n,
        converged,
        gradient_max_norm,
        n_evals: total_evals,
        iterations,
        best_of_restarts: best_restart,
        restarts_succeeded: succeeded,
        seed: opts.seed,
    };
    result.intervals = wald_intervals(&result, 0.95).ok();
    Ok(result)
}

/// Starting point: OLS coefficients, half the OLS residual variance for σ²
/// and τ², and half the largest observed distance for each scale.
pub fn initial_values(
    data: &ObservationSet,
    problem: &LikelihoodProblem,
    config: &ModelConfig,
) -> Result<ParameterVector> {
    let d = data.design();
    let y = data.outcome();
    let beta = (d.transpose() * d)
        .cholesky()
        .map(|c| c.solve(&(d.transpose() * y)))
        .ok_or_else(|| GeoError::Domain("design matrix is not of full column rank".into()))?;
    let resid = y - d * &beta;
    let dof = (data.len() - d.ncols()).max(1) as f64;
    let mut half_var = 0.5 * resid.norm_squared() / dof;
    if !(half_var > 0.0) {
        half_var = 0.5;
    }
    let dist = problem.distances();
    let half_range = |r: f64| if r > 0.0 { 0.5 * r } else { 1.0 };
    let template = &problem.template;
    let mut phis = vec![half_range(dist.max_spatial())];
    for (k, c) in template.covariates.iter().enumerate() {
        phis.push(half_range(dist.max_covariate(k) / c.scale));
    }
    let tau2 = match config.nugget {
        NuggetConfig::Estimate => half_var,
        NuggetConfig::Fixed { value } => value,
    };
    Ok(ParameterVector {
        beta: beta.as_slice().to_vec(),
        sigma2: half_var,
        phis,
        tau2,
    })
}

fn invert_information(neg_hessian: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let k = neg_hessian.len();
    if k == 0 {
        return Some(Vec::new());
    }
    let m = DMatrix::from_fn(k, k, |i, j| neg_hessian[i][j]);
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let inv = m.cholesky()?.inverse();
    Some((0..k).map(|i| (0..k).map(|j| inv[(i, j)]).collect()).collect())
}

/// Fallback when the full observed information is singular, typically
/// because a scale has run off to zero or infinity and the likelihood is
/// flat in it.
fn block_inverse(
    problem: &LikelihoodProblem,
    theta_hat: &ParameterVector,
    neg_hessian: &[Vec<f64>],
    free: &[usize],
    q: usize,
) -> Option<Vec<Vec<f64>>> {
    let k = free.len();
    let beta_pos: Vec<usize> = (0..k).filter(|&a| free[a] < q).collect();
    let cov_pos: Vec<usize> = (0..k).filter(|&a| free[a] >= q).collect();
    let mut out = vec![vec![0.0; k]; k];
    if !beta_pos.is_empty() {
        let gls = problem.gls_covariance(theta_hat).ok()?;
        for &a in &beta_pos {
            for &b in &beta_pos {
                out[a][b] = gls[(free[a], free[b])];
            }
        }
    }
    let sub: Vec<Vec<f64>> = cov_pos
        .iter()
        .map(|&a| cov_pos.iter().map(|&b| neg_hessian[a][b]).collect())
        .collect();
    match invert_information(&sub) {
        Some(inv) => {
            for (i, &a) in cov_pos.iter().enumerate() {
                for (j, &b) in cov_pos.iter().enumerate() {
                    out[a][b] = inv[i][j];
                }
            }
        }
        None => {
            for &a in &cov_pos {
                out[a][a] = f64::NAN;
            }
        }
    }
    Some(out)
}

/// Wald intervals at `level` for every parameter, in layout order.
///
/// Parameters without a usable variance get NaN bounds.
///
/// With [`WaldScale::Log`] the intervals of positive parameters are built on
/// the log scale and exponentiated; `β` intervals are always symmetric.
pub fn wald_intervals(fit: &FitResult, level: f64) -> Result<Vec<ParamInterval>> {
    let z = normal_quantile(level)?;
    let cov = fit
        .inverse_information
        .as_ref()
        .ok_or(GeoError::InformationSingular)?;
    let layout = fit.config.layout();
    let values = fit.theta_hat.to_vec();
    let mut free_pos = 0;
    let mut out = Vec::with_capacity(values.len());
    for (i, (&est, name)) in values.iter().zip(&fit.parameter_names).enumerate() {
        if !fit.free[i] {
            out.push(ParamInterval {
                name: name.clone(),
                estimate: est,
                lower: est,
                upper: est,
                se: 0.0,
                fixed: true,
            });
            continue;
        }
        let var = cov[free_pos][free_pos];
        free_pos += 1;
        if !(var.is_finite() && var >= 0.0) {
            out.push(ParamInterval {
                name: name.clone(),
                estimate: est,
                lower: f64::NAN,
                upper: f64::NAN,
                se: f64::NAN,
                fixed: false,
            });
            continue;
        }
        let se = var.sqrt();
        let (lower, upper) = if !layout.is_log_scale(i) {
            (est - z * se, est + z * se)
        } else {
            match fit.config.fit.wald_scale {
                WaldScale::Log => ((est.ln() - z * se).exp(), (est.ln() + z * se).exp()),
                WaldScale::Raw => (est - z * se * est, est + z * se * est),
            }
        };
        out.push(ParamInterval {
            name: name.clone(),
            estimate: est,
            lower: lower.min(est),
            upper: upper.max(est),
            se,
            fixed: false,
        });
    }
    Ok(out)
}
