use nonstat_geo::kernels::CovarianceForm;
use nonstat_geo::model::FitOptions;
use nonstat_geo::simulate::{run_study, sample_dataset, simulate_replicate, ScenarioConfig, StudyOptions};

fn tiny(index: u32, form: CovarianceForm) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::replica(index, form, 31);
    cfg.n = 25;
    cfg.heldout_m = 5;
    cfg.replicates = 2;
    cfg
}

#[test]
fn latent_variance_matches_marginal_variance() {
    for (form, factor) in [
        (CovarianceForm::Stationary, 1.0),
        (CovarianceForm::Product, 1.0),
        (CovarianceForm::PartialSum, 2.0),
        (CovarianceForm::FullSum, 3.0),
    ] {
        let mut cfg = ScenarioConfig::replica(0, form, 5);
        cfg.n = 4;
        cfg.heldout_m = 0;
        let reps = 3000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for r in 0..reps {
            let s = simulate_replicate(&cfg, r).unwrap().latent[0];
            sum += s;
            sum_sq += s * s;
        }
        let mean = sum / reps as f64;
        let var = sum_sq / reps as f64 - mean * mean;
        let want = factor * cfg.theta_true.sigma2;
        assert!((var / want - 1.0).abs() < 0.1, "{form:?}: {var} vs {want}");
        assert!(mean.abs() < 4.0 * (want / reps as f64).sqrt(), "{form:?}: mean {mean}");
    }
}

#[test]
fn outcome_is_trend_plus_latent_plus_nugget() {
    let mut cfg = tiny(0, CovarianceForm::Product);
    cfg.theta_true.tau2 = 0.0;
    let sim = simulate_replicate(&cfg, 0).unwrap();
    let beta = nalgebra::DVector::from_column_slice(&cfg.theta_true.beta);
    let trend = sim.observed.design() * beta;
    for i in 0..cfg.n {
        assert!((sim.observed.outcome()[i] - trend[i] - sim.latent[i]).abs() < 1e-12);
    }
}

#[test]
fn scenarios_and_replicates_use_distinct_streams() {
    let a = sample_dataset(&tiny(0, CovarianceForm::Product), 0).unwrap().0;
    let b = sample_dataset(&tiny(1, CovarianceForm::Product), 0).unwrap().0;
    let c = sample_dataset(&tiny(0, CovarianceForm::Product), 1).unwrap().0;
    assert_ne!(a.coords(), b.coords());
    assert_ne!(a.coords(), c.coords());
    // The generator form does not enter the location stream.
    let d = sample_dataset(&tiny(0, CovarianceForm::FullSum), 0).unwrap().0;
    assert_eq!(a.coords(), d.coords());
}

#[test]
fn study_is_reproducible_across_thread_counts() {
    let scenarios = vec![tiny(0, CovarianceForm::Product), tiny(1, CovarianceForm::PartialSum)];
    let forms = CovarianceForm::NON_STATIONARY;
    let opts = |threads| StudyOptions {
        threads: Some(threads),
        fit: FitOptions {
            restarts: 1,
            ..FitOptions::default()
        },
    };
    let a = run_study(&scenarios, &forms, &opts(1)).unwrap();
    let b = run_study(&scenarios, &forms, &opts(3)).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.prediction_table.len(), 6);
    assert_eq!(a.failure_counts.len(), 6);
    // 7 parameters per cell: three β, σ² and three scales; τ² = 0 is not reported.
    assert_eq!(a.parameter_table.len(), 42);
}

#[test]
fn invalid_study_input_is_rejected() {
    assert!(run_study(&[], &CovarianceForm::NON_STATIONARY, &StudyOptions::default()).is_err());
    assert!(run_study(&[tiny(0, CovarianceForm::Product)], &[], &StudyOptions::default()).is_err());
}
