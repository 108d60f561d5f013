//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage, configuration or data error,
//! 3 non-convergence (results are still written).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::io::{self, FitDocument};
use crate::kernels::CovarianceForm;
use crate::likelihood::{fit, fit_with_starts, FitResult};
use crate::model::{ModelConfig, NuggetConfig, ObservationSet, ParameterVector};
use crate::predict::predict_grid;
use crate::simulate::{run_study_with_progress, simulate_replicate, StudyOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "nonstat-geo", version, about = "Covariate-driven non-stationary geostatistical models")]
pub struct Cli {
    /// Progress and diagnostics on stderr; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model and write fit.json.
    Fit(FitArgs),
    /// Krige a grid from a saved fit and write predictions.csv.
    Predict(PredictArgs),
    /// Draw one simulated dataset.
    Simulate(RunArgs),
    /// Run a simulation study and write the study tables.
    Study(RunArgs),
    /// Fit several models to the same data and rank them by AIC.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Overrides the optimizer seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// fit.json written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// The observations the model was fitted to.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub grid: PathBuf,
    /// Replaces the configuration stored in the fit (prediction options, threads).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Overrides the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Model configurations; give at least two.
    #[arg(long, required = true, num_args = 1)]
    pub config: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Overrides the optimizer seed of every model.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Parses `args` and runs the subcommand, returning the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                EXIT_USAGE
            } else {
                EXIT_NOT_CONVERGED
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a, cli.verbose),
        Command::Predict(a) => cmd_predict(a, cli.verbose),
        Command::Simulate(a) => cmd_simulate(a, cli.verbose),
        Command::Study(a) => cmd_study(a, cli.verbose),
        Command::Compare(a) => cmd_compare(a, cli.verbose),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| GeoError::io(dir, e))
}

fn fmt_interval(lo: f64, hi: f64) -> String {
    if lo.is_nan() || hi.is_nan() {
        "(not available)".to_string()
    } else {
        format!("({lo:.4}, {hi:.4})")
    }
}

/// Estimate and 95% interval table followed by the likelihood summary.
pub fn parameter_table(fit: &FitResult) -> String {
    let mut out = format!("{:<16} {:>12}  {}\n", "Parameter", "Estimate", "95% CI");
    for r in fit.reported_rows() {
        let ci = if r.fixed {
            "(fixed)".to_string()
        } else {
            fmt_interval(r.lower, r.upper)
        };
        out.push_str(&format!("{:<16} {:>12.4}  {}\n", r.name, r.estimate, ci));
    }
    out.push_str(&format!(
        "log-likelihood {:.4}   k {}   AIC {:.4}   BIC {:.4}   converged {}\n",
        fit.loglik, fit.k, fit.aic, fit.bic, fit.converged
    ));
    out
}

pub fn cmd_fit(args: &FitArgs, verbose: u8) -> Result<i32> {
    let mut doc = io::load_config(&args.config)?;
    let mut model = doc.model()?.clone();
    if let Some(seed) = args.seed {
        model.fit.seed = seed;
    }
    doc.model = Some(model.clone());
    let data = io::load_observations(&args.data, &model, &doc.data)?;
    if verbose > 0 {
        eprintln!("fitting '{}' to {} observations", model.label, data.len());
    }
    let result = fit(&data, &model)?;
    if verbose > 0 {
        eprintln!(
            "{} evaluations, best of {} restarts from restart {}, max |gradient| {:.2e}",
            result.n_evals, result.restarts_succeeded, result.best_of_restarts, result.gradient_max_norm
        );
        if result.intervals.is_none() {
            eprintln!("observed information is not invertible; no intervals");
        }
    }
    print!("{}", parameter_table(&result));
    create_dir(&args.out)?;
    let converged = result.converged;
    io::write_fit(&args.out.join("fit.json"), &FitDocument::new(doc, result))?;
    if converged {
        Ok(EXIT_OK)
    } else {
        eprintln!("warning: optimizer did not converge");
        Ok(EXIT_NOT_CONVERGED)
    }
}

pub fn cmd_predict(args: &PredictArgs, verbose: u8) -> Result<i32> {
    let saved = io::read_fit(&args.fit)?;
    let mut doc = match &args.config {
        Some(p) => io::load_config(p)?,
        None => saved.config.clone(),
    };
    if args.threads.is_some() {
        doc.threads = args.threads;
    }
    doc.validate()?;
    let model = &saved.fit.config;
    let data = io::load_observations(&args.data, model, &doc.data)?;
    let grid = io::load_grid(&args.grid, &io::required_covariates(model))?;
    if verbose > 0 {
        eprintln!("kriging {} grid points from {} observations", grid.len(), data.len());
    }
    let pred = predict_grid(&saved.fit, &data, &grid, doc.predict.batch_size, doc.predict.level, doc.threads)?;
    create_dir(&args.out)?;
    io::write_predictions(&args.out.join("predictions.csv"), &pred)?;
    doc.model = Some(model.clone());
    io::write_json(&args.out.join("config.resolved.json"), &doc)?;
    Ok(EXIT_OK)
}

pub fn cmd_simulate(args: &RunArgs, verbose: u8) -> Result<i32> {
    let mut doc = io::load_config(&args.config)?;
    let sim_cfg = doc
        .simulate
        .as_mut()
        .ok_or_else(|| GeoError::Config("configuration has no 'simulate' section".into()))?;
    if let Some(seed) = args.seed {
        sim_cfg.scenario.master_seed = seed;
    }
    let sim = simulate_replicate(&sim_cfg.scenario, sim_cfg.replicate)?;
    if verbose > 0 {
        eprintln!(
            "simulated '{}' replicate {}: {} observed, {} held out",
            sim_cfg.scenario.name,
            sim_cfg.replicate,
            sim.observed.len(),
            sim_cfg.scenario.heldout_m
        );
    }
    create_dir(&args.out)?;
    io::write_simulation(&args.out, &sim)?;
    io::write_json(&args.out.join("config.resolved.json"), &doc)?;
    Ok(EXIT_OK)
}

pub fn cmd_study(args: &RunArgs, verbose: u8) -> Result<i32> {
    let mut doc = io::load_config(&args.config)?;
    if args.threads.is_some() {
        doc.threads = args.threads;
    }
    let study = doc
        .study
        .as_mut()
        .ok_or_else(|| GeoError::Config("configuration has no 'study' section".into()))?;
    if let Some(seed) = args.seed {
        study.master_seed = seed;
    }
    let scenarios = study.resolved_scenarios();
    study.scenarios = Some(scenarios.clone());
    let options = StudyOptions {
        threads: doc.threads,
        fit: study.fit.clone(),
    };
    let forms = study.fit_forms.clone();
    doc.validate()?;
    if verbose > 0 {
        let reps: usize = scenarios.iter().map(|s| s.replicates).sum();
        eprintln!("{} scenarios, {} replicates, {} models per replicate", scenarios.len(), reps, forms.len());
    }
    let report = run_study_with_progress(&scenarios, &forms, &options, |line| println!("{line}"))?;
    create_dir(&args.out)?;
    io::write_study(&args.out, &report)?;
    io::write_json(&args.out.join("config.resolved.json"), &doc)?;
    Ok(EXIT_OK)
}

/// One row of a model comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub loglik: f64,
    pub k: usize,
    pub aic: f64,
    pub bic: f64,
    pub converged: bool,
    /// Refitted from a nested model's estimate.
    pub warm_started: bool,
    pub error: Option<String>,
}

impl ComparisonRow {
    fn failed(label: &str, error: String) -> Self {
        Self {
            label: label.to_string(),
            loglik: f64::NAN,
            k: 0,
            aic: f64::NAN,
            bic: f64::NAN,
            converged: false,
            warm_started: false,
            error: Some(error),
        }
    }
}

/// Value range of covariate `name` on the scale its kernel sees.
fn covariate_spread(data: &ObservationSet, fit: &FitResult, name: &str) -> f64 {
    let Some(col) = data.covariate(name) else {
        return 1.0;
    };
    let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let scale = fit
        .spec
        .covariates
        .iter()
        .find(|k| k.name == name)
        .map_or(1.0, |k| k.scale);
    (hi - lo) / scale
}

/// Starting point for `big` reproducing the fitted `small` model, when
/// `small` is nested in `big`.
///
/// Covered nestings: larger mean structure with the same covariance;
/// stationary inside Product or PartialSum; Product inside a Product with
/// more covariates. Extra covariate kernels get scales so large that their
/// correlation is 1 to machine precision.
pub fn nested_start(small: &FitResult, big: &ModelConfig, data: &ObservationSet) -> Option<ParameterVector> {
    let s = &small.config;
    if s.distance != big.distance || s.spatial_kappa != big.spatial_kappa {
        return None;
    }
    match (s.nugget, big.nugget) {
        (NuggetConfig::Estimate, NuggetConfig::Estimate) => {}
        (NuggetConfig::Fixed { value: a }, NuggetConfig::Fixed { value: b }) if a == b => {}
        _ => return None,
    }
    if !s.mean_covariates.iter().all(|c| big.mean_covariates.contains(c)) {
        return None;
    }
    let theta = &small.theta_hat;
    let mut beta = vec![theta.beta[0]];
    for name in &big.mean_covariates {
        let pos = s.mean_covariates.iter().position(|c| c == name);
        beta.push(pos.map_or(0.0, |j| theta.beta[j + 1]));
    }
    let flat = |name: &str| 1e8 * (1.0 + covariate_spread(data, small, name));
    let (sigma2, phis) = match (s.form, big.form) {
        (a, b) if a == b && s.covariance_covariates == big.covariance_covariates => {
            (theta.sigma2, theta.phis.clone())
        }
        (CovarianceForm::Stationary, CovarianceForm::Product | CovarianceForm::PartialSum) => {
            let p = big.covariance_covariates.len() as f64;
            let sigma2 = if big.form == CovarianceForm::PartialSum {
                theta.sigma2 / p
            } else {
                theta.sigma2
            };
            let mut phis = vec![theta.phis[0]];
            phis.extend(big.covariance_covariates.iter().map(|c| flat(&c.name)));
            (sigma2, phis)
        }
        (CovarianceForm::Product, CovarianceForm::Product) => {
            let mut phis = vec![theta.phis[0]];
            for c in &big.covariance_covariates {
                match s.covariance_covariates.iter().position(|sc| sc.name == c.name) {
                    Some(j) if s.covariance_covariates[j] == *c => phis.push(theta.phis[j + 1]),
                    Some(_) => return None,
                    None => phis.push(flat(&c.name)),
                }
            }
            let covered = s
                .covariance_covariates
                .iter()
                .all(|sc| big.covariance_covariates.iter().any(|c| c.name == sc.name));
            if !covered {
                return None;
            }
            (theta.sigma2, phis)
        }
        _ => return None,
    };
    let start = ParameterVector {
        beta,
        sigma2,
        phis,
        tau2: theta.tau2,
    };
    (start.layout() == big.layout() && start.validate().is_ok()).then_some(start)
}

/// Fits every configuration to its data and ranks the results.
///
/// When a model has a lower log-likelihood than a model nested inside it, it
/// is refitted with the nested estimate as an extra starting point. Rows are
/// sorted by AIC, then BIC, then label; failed fits go last.
pub fn compare_models(members: &[(ModelConfig, ObservationSet)]) -> Vec<(ComparisonRow, Option<FitResult>)> {
    let mut fits: Vec<Option<FitResult>> = Vec::with_capacity(members.len());
    let mut rows = Vec::with_capacity(members.len());
    for (cfg, data) in members {
        match fit(data, cfg) {
            Ok(f) => {
                fits.push(Some(f));
                rows.push(None);
            }
            Err(e) => {
                fits.push(None);
                rows.push(Some(ComparisonRow::failed(&cfg.label, e.to_string())));
            }
        }
    }
    let mut warm = vec![false; members.len()];
    for (b, (big_cfg, data)) in members.iter().enumerate() {
        let Some(big) = &fits[b] else { continue };
        let starts: Vec<ParameterVector> = fits
            .iter()
            .enumerate()
            .filter(|(s, _)| *s != b)
            .filter_map(|(_, f)| f.as_ref())
            .filter(|small| small.loglik > big.loglik && small.n == big.n)
            .filter_map(|small| nested_start(small, big_cfg, data))
            .collect();
        if starts.is_empty() {
            continue;
        }
        if let Ok(refit) = fit_with_starts(data, big_cfg, &starts) {
            if refit.loglik > big.loglik {
                fits[b] = Some(refit);
                warm[b] = true;
            }
        }
    }
    let mut out: Vec<(ComparisonRow, Option<FitResult>)> = members
        .iter()
        .zip(fits)
        .zip(rows)
        .zip(warm)
        .map(|((((cfg, _), f), row), warm_started)| match (f, row) {
            (Some(f), _) => (
                ComparisonRow {
                    label: cfg.label.clone(),
                    loglik: f.loglik,
                    k: f.k,
                    aic: f.aic,
                    bic: f.bic,
                    converged: f.converged,
                    warm_started,
                    error: None,
                },
                Some(f),
            ),
            (None, row) => (row.expect("failed fits carry a row"), None),
        })
        .collect();
    out.sort_by(|(a, _), (b, _)| {
        let key = |r: &ComparisonRow| if r.aic.is_finite() { 0 } else { 1 };
        key(a)
            .cmp(&key(b))
            .then(a.aic.total_cmp(&b.aic))
            .then(a.bic.total_cmp(&b.bic))
            .then(a.label.cmp(&b.label))
    });
    out
}

pub fn comparison_table(rows: &[ComparisonRow]) -> String {
    let mut out = format!(
        "{:<20} {:>14} {:>4} {:>14} {:>14}  {}\n",
        "Model", "log-lik", "k", "AIC", "BIC", "status"
    );
    for r in rows {
        let status = match &r.error {
            Some(e) => format!("failed: {e}"),
            None if !r.converged => "not converged".into(),
            None => "ok".into(),
        };
        out.push_str(&format!(
            "{:<20} {:>14.4} {:>4} {:>14.4} {:>14.4}  {}\n",
            r.label, r.loglik, r.k, r.aic, r.bic, status
        ));
    }
    out
}

fn write_comparison(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| GeoError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["label", "loglik", "k", "aic", "bic", "converged", "warm_started", "error"])?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            io::fmt_f64(r.loglik),
            r.k.to_string(),
            io::fmt_f64(r.aic),
            io::fmt_f64(r.bic),
            r.converged.to_string(),
            r.warm_started.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| GeoError::io(path, e))
}

pub fn cmd_compare(args: &CompareArgs, verbose: u8) -> Result<i32> {
    if args.config.len() < 2 {
        return Err(GeoError::Config("compare needs at least two --config files".into()));
    }
    let mut docs = Vec::with_capacity(args.config.len());
    for path in &args.config {
        let mut doc = io::load_config(path)?;
        let mut model = doc.model()?.clone();
        if let Some(seed) = args.seed {
            model.fit.seed = seed;
        }
        doc.model = Some(model);
        docs.push(doc);
    }
    let mut members = Vec::with_capacity(docs.len());
    for doc in &docs {
        let model = doc.model()?.clone();
        let data = io::load_observations(&args.data, &model, &doc.data)?;
        if verbose > 0 {
            eprintln!("fitting '{}'", model.label);
        }
        members.push((model, data));
    }
    let results = compare_models(&members);
    let rows: Vec<ComparisonRow> = results.iter().map(|(r, _)| r.clone()).collect();
    print!("{}", comparison_table(&rows));
    create_dir(&args.out)?;
    write_comparison(&args.out.join("comparison.csv"), &rows)?;
    io::write_json(&args.out.join("config.resolved.json"), &docs)?;
    if rows.iter().all(|r| r.error.is_some()) {
        return Ok(EXIT_NOT_CONVERGED);
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_subcommands() {
        let cli = Cli::try_parse_from(["nonstat-geo", "fit", "--config", "c.json", "--data", "d.csv", "--seed", "7"]).unwrap();
        match cli.command {
            Command::Fit(a) => assert_eq!(a.seed, Some(7)),
            other => panic!("unexpected {other:?}"),
        }
        let cli = Cli::try_parse_from([
            "nonstat-geo", "compare", "--config", "a.json", "--config", "b.json", "--data", "d.csv",
        ])
        .unwrap();
        match cli.command {
            Command::Compare(a) => assert_eq!(a.config.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["nonstat-geo", "fit"]), EXIT_USAGE);
        assert_eq!(run(["nonstat-geo", "bogus"]), EXIT_USAGE);
        assert_eq!(
            run(["nonstat-geo", "fit", "--config", "/nonexistent/c.json", "--data", "d.csv"]),
            EXIT_USAGE
        );
    }
}
