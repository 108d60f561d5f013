mod common;

use common::*;
use nalgebra::DVector;
use nonstat_geo::kernels::{covariance_matrix, CovarianceForm, CovarianceSpec, MaternKernel};
use nonstat_geo::likelihood::{fit, fit_mean, information_criteria, log_likelihood, LikelihoodProblem};
use nonstat_geo::model::{FitOptions, ModelConfig, NuggetConfig, ParameterVector};
use nonstat_geo::simulate::{simulate_replicate, ScenarioConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn cholesky_loglik_matches_explicit_inverse() {
    for seed in 0..40 {
        let (pts, spec, theta, y) = instance(seed, 5 + seed as usize);
        let p = spec.p().max(1);
        let data = observations(&pts, p, &y);
        let ll = log_likelihood(&theta, &data, &spec).unwrap();
        let sigma = covariance_matrix(&pts, &spec, theta.tau2).unwrap();
        let mean = data.design() * DVector::from_column_slice(&theta.beta);
        let want = explicit_loglik(&sigma, data.outcome(), &mean);
        assert!(rel_close(ll, want, 1e-8), "seed {seed}: {ll} vs {want}");
    }
}

#[test]
fn single_standard_normal_observation() {
    let pts = random_points(&mut ChaCha8Rng::seed_from_u64(0), 1, 0);
    let data = observations(&pts, 0, &[0.0]);
    let spec = CovarianceSpec::stationary(MaternKernel::new(0.2, 1.5).unwrap(), 0.75).unwrap();
    let theta = ParameterVector {
        beta: vec![0.0],
        sigma2: 0.75,
        phis: vec![0.2],
        tau2: 0.25,
    };
    let ll = log_likelihood(&theta, &data, &spec).unwrap();
    assert!((ll + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
}

#[test]
fn beta_search_reaches_gls() {
    for seed in 0..5 {
        let (pts, spec, theta, y) = instance(100 + seed, 30);
        let p = spec.p().max(1);
        let data = observations(&pts, p, &y);
        let mut cfg = ModelConfig::new(spec.form).with_mean_covariates(["c0"]);
        for k in &spec.covariates {
            cfg = cfg.with_covariance_covariate(k.name.clone(), k.kernel.kappa());
        }
        cfg.spatial_kappa = spec.spatial.kappa();
        cfg.fit.gradient_tolerance = 1e-10;
        cfg.fit.relative_tolerance = 0.0;
        cfg.fit.profile_beta = false;
        let f = fit_mean(&data, &cfg, &theta).unwrap();
        let sigma = covariance_matrix(&pts, &spec, theta.tau2).unwrap();
        let want = gls(&sigma, data.design(), data.outcome());
        for j in 0..2 {
            assert!((f.theta_hat.beta[j] - want[j]).abs() < 1e-8, "seed {seed}: {:?} vs {want}", f.theta_hat.beta);
        }
        assert_eq!(f.k, 2);
    }
}

#[test]
fn profile_matches_explicit_gls() {
    let (pts, spec, theta, y) = instance(7, 25);
    let data = observations(&pts, spec.p().max(1), &y);
    let problem = LikelihoodProblem::new(&data, &spec).unwrap();
    let (beta, _) = problem.profile(theta.sigma2, &theta.phis, theta.tau2).unwrap();
    let sigma = covariance_matrix(&pts, &spec, theta.tau2).unwrap();
    let want = gls(&sigma, data.design(), data.outcome());
    assert!((beta - want).abs().max() < 1e-10);
}

#[test]
fn criteria_differences_ignore_constant_shifts() {
    let (a1, b1) = information_criteria(-100.0, 8, 300);
    let (a2, b2) = information_criteria(-95.0, 10, 300);
    let c = 123.456;
    let (a1s, b1s) = information_criteria(-100.0 + c, 8, 300);
    let (a2s, b2s) = information_criteria(-95.0 + c, 10, 300);
    assert!(((a2 - a1) - (a2s - a1s)).abs() < 1e-9);
    assert!(((b2 - b1) - (b2s - b1s)).abs() < 1e-9);
}

fn stationary_sample(n: usize, seed: u64) -> nonstat_geo::model::ObservationSet {
    let mut cfg = ScenarioConfig::replica(0, CovarianceForm::Stationary, seed);
    cfg.n = n;
    cfg.heldout_m = 0;
    cfg.theta_true.tau2 = 0.1;
    simulate_replicate(&cfg, 0).unwrap().observed
}

fn stationary_config() -> ModelConfig {
    ModelConfig::new(CovarianceForm::Stationary).with_mean_covariates(["e", "t"])
}

#[test]
fn stationary_fit_recovers_beta() {
    let data = stationary_sample(300, 11);
    let mut cfg = stationary_config();
    cfg.fit.restarts = 2;
    let f = fit(&data, &cfg).unwrap();
    assert!(f.converged);
    let iv = f.intervals.as_ref().expect("invertible information");
    for (j, truth) in [1.0, 0.5, -0.5].into_iter().enumerate() {
        let z = 1.959963984540054;
        let se = (iv[j].upper - iv[j].lower) / (2.0 * z);
        assert!((f.theta_hat.beta[j] - truth).abs() < 3.0 * se, "beta{j}: {} (se {se})", f.theta_hat.beta[j]);
    }
    assert!(f.gradient_max_norm < 1e-3, "gradient {}", f.gradient_max_norm);
    assert_eq!(f.k, 6);
}

#[test]
fn fixed_nugget_is_not_counted() {
    let data = stationary_sample(60, 3);
    let cfg = stationary_config().with_nugget(NuggetConfig::Fixed { value: 0.1 });
    let f = fit(&data, &cfg).unwrap();
    assert_eq!(f.k, 5);
    assert_eq!(f.theta_hat.tau2, 0.1);
    let (aic, bic) = information_criteria(f.loglik, 5, 60);
    assert_eq!((f.aic, f.bic), (aic, bic));
}

#[test]
fn same_seed_same_fit() {
    let data = stationary_sample(60, 4);
    let mut cfg = stationary_config();
    cfg.fit = FitOptions {
        restarts: 3,
        seed: 99,
        ..FitOptions::default()
    };
    let a = serde_json::to_string(&fit(&data, &cfg).unwrap()).unwrap();
    let b = serde_json::to_string(&fit(&data, &cfg).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn returned_loglik_is_the_likelihood_at_the_estimate() {
    let data = stationary_sample(50, 8);
    let f = fit(&data, &stationary_config()).unwrap();
    let ll = log_likelihood(&f.theta_hat, &data, &f.spec).unwrap();
    assert_eq!(ll, f.loglik);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn loglik_is_permutation_invariant(seed in any::<u64>(), n in 2usize..25) {
        let (pts, spec, theta, y) = instance(seed, n);
        let data = observations(&pts, spec.p().max(1), &y);
        let order: Vec<usize> = (0..n).rev().collect();
        let a = log_likelihood(&theta, &data, &spec).unwrap();
        let b = log_likelihood(&theta, &data.permuted(&order).unwrap(), &spec).unwrap();
        prop_assert!(rel_close(a, b, 1e-10), "{} vs {}", a, b);
    }
}

#[test]
fn collapsed_scale_still_converges_with_beta_intervals() {
    // Full-sum fit to product-generated data: the spatial scale runs to zero.
    let sc = ScenarioConfig::replica(0, CovarianceForm::Product, 2024);
    let cfg = sc.model_config(CovarianceForm::FullSum, &FitOptions {
        restarts: 1,
        ..FitOptions::default()
    });
    let sim = simulate_replicate(&sc, 4).unwrap();
    let f = fit(&sim.observed, &cfg).unwrap();
    assert!(f.converged && f.gradient_max_norm.is_finite());
    assert!(f.theta_hat.phis[0] < 1e-10, "{:?}", f.theta_hat.phis);
    let iv = f.intervals.as_ref().unwrap();
    assert!(f.block_information);
    let problem = LikelihoodProblem::new(&sim.observed, &f.spec).unwrap();
    let gls_cov = problem.gls_covariance(&f.theta_hat).unwrap();
    for j in 0..3 {
        assert!(rel_close(iv[j].se, gls_cov[(j, j)].sqrt(), 1e-12), "{j}");
        assert!(iv[j].lower < f.theta_hat.beta[j] && f.theta_hat.beta[j] < iv[j].upper);
    }
}
