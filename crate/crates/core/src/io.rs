//! CSV ingestion, configuration documents and report emission.
//!
//! Tables are RFC-4180 CSV with a header row. Floats are written with 17
//! significant digits (`{:.16e}`), so reading a table back reproduces every
//! value bit for bit. JSON documents use the shortest round-trip form.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::kernels::CovarianceForm;
use crate::likelihood::FitResult;
use crate::metrics::StudyReport;
use crate::model::{FitOptions, ModelConfig, ObservationSet};
use crate::predict::{GridTable, PredictionResult};
use crate::simulate::{ScenarioConfig, SimulatedData};

/// Version tag carried by every configuration and output document.
pub const SCHEMA: &str = "nonstat-geo/v1";

/// `ln((positive + 0.5) / (examined − positive + 0.5))`
pub fn empirical_logit(positive: u64, examined: u64) -> Result<f64> {
    if examined == 0 || positive > examined {
        return Err(GeoError::Domain(format!(
            "need 0 <= positive <= examined and examined >= 1, got {positive}/{examined}"
        )));
    }
    let (p, e) = (positive as f64, examined as f64);
    Ok(((p + 0.5) / (e - p + 0.5)).ln())
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn schema_default() -> String {
    SCHEMA.to_string()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataOptions {
    /// Outcome column. When absent: `y_elogit`, then `y`, then
    /// `positive`/`examined` counts through the empirical logit.
    pub outcome: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictOptions {
    pub batch_size: usize,
    pub level: f64,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            batch_size: 512,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    /// Overrides the seed of every scenario.
    #[serde(default)]
    pub master_seed: u64,
    /// Defaults to the three non-stationary replication scenarios.
    #[serde(default)]
    pub scenarios: Option<Vec<ScenarioConfig>>,
    #[serde(default = "default_fit_forms")]
    pub fit_forms: Vec<CovarianceForm>,
    #[serde(default)]
    pub fit: FitOptions,
}

fn default_fit_forms() -> Vec<CovarianceForm> {
    CovarianceForm::NON_STATIONARY.to_vec()
}

impl StudyConfig {
    /// Scenarios with the study seed applied and indices set by position.
    pub fn resolved_scenarios(&self) -> Vec<ScenarioConfig> {
        let mut scenarios = self
            .scenarios
            .clone()
            .unwrap_or_else(|| ScenarioConfig::replica_set(self.master_seed));
        for (i, s) in scenarios.iter_mut().enumerate() {
            s.master_seed = self.master_seed;
            s.index = i as u32;
        }
        scenarios
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub replicate: u32,
}

/// Top-level configuration document shared by every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    #[serde(default = "schema_default")]
    pub schema: String,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub data: DataOptions,
    #[serde(default)]
    pub predict: PredictOptions,
    #[serde(default)]
    pub study: Option<StudyConfig>,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    /// Worker threads for `study` and `predict`; all cores when absent.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl ConfigDocument {
    pub fn for_model(model: ModelConfig) -> Self {
        Self {
            schema: SCHEMA.into(),
            model: Some(model),
            data: DataOptions::default(),
            predict: PredictOptions::default(),
            study: None,
            simulate: None,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(GeoError::Config(format!(
                "unsupported schema '{}', expected '{SCHEMA}'",
                self.schema
            )));
        }
        if let Some(m) = &self.model {
            m.validate()?;
        }
        if let Some(s) = &self.study {
            if s.fit_forms.is_empty() {
                return Err(GeoError::Config("study.fit_forms is empty".into()));
            }
            for sc in s.resolved_scenarios() {
                sc.validate()?;
            }
        }
        if let Some(s) = &self.simulate {
            s.scenario.validate()?;
        }
        if !(self.predict.level > 0.0 && self.predict.level < 1.0) {
            return Err(GeoError::Config(format!(
                "predict.level must lie in (0, 1), got {}",
                self.predict.level
            )));
        }
        if self.threads == Some(0) {
            return Err(GeoError::Config("threads must be at least 1".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<&ModelConfig> {
        self.model
            .as_ref()
            .ok_or_else(|| GeoError::Config("configuration has no 'model' section".into()))
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| GeoError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| GeoError::Parse {
        location: format!("{}:{}:{}", path.display(), e.line(), e.column()),
        message: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| GeoError::io(path, e))
}

/// Reads and validates a configuration document.
pub fn load_config(path: &Path) -> Result<ConfigDocument> {
    let doc: ConfigDocument = read_json(path)?;
    doc.validate()?;
    Ok(doc)
}

/// Header and rows of a CSV file, with duplicate-column detection.
struct RawTable {
    path: String,
    headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl RawTable {
    fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| GeoError::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let mut seen = HashSet::new();
        for h in &headers {
            if !seen.insert(h.as_str()) {
                return Err(GeoError::Schema(format!(
                    "{}: duplicate column '{h}'",
                    path.display()
                )));
            }
        }
        let rows = reader.records().collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self {
            path: path.display().to_string(),
            headers,
            rows,
        })
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.index(name)
            .ok_or_else(|| GeoError::Schema(format!("{}: missing required column '{name}'", self.path)))
    }

    /// Row numbers in messages are file line numbers (header is line 1).
    fn value(&self, row: usize, col: usize) -> Result<f64> {
        let location = || format!("{}: row {}", self.path, row + 2);
        let field = self.rows[row].get(col).unwrap_or("");
        if field.is_empty() || field.eq_ignore_ascii_case("na") {
            return Err(GeoError::Parse {
                location: location(),
                message: format!("missing value in column '{}'", self.headers[col]),
            });
        }
        let v: f64 = field.parse().map_err(|_| GeoError::Parse {
            location: location(),
            message: format!("column '{}': cannot parse '{field}' as a number", self.headers[col]),
        })?;
        if !v.is_finite() {
            return Err(GeoError::Parse {
                location: location(),
                message: format!("column '{}': non-finite value '{field}'", self.headers[col]),
            });
        }
        Ok(v)
    }

    fn count(&self, row: usize, col: usize) -> Result<u64> {
        let v = self.value(row, col)?;
        if v < 0.0 || v.fract() != 0.0 || v > u64::MAX as f64 {
            return Err(GeoError::Parse {
                location: format!("{}: row {}", self.path, row + 2),
                message: format!("column '{}': expected a non-negative integer count, got {v}", self.headers[col]),
            });
        }
        Ok(v as u64)
    }

    fn coords(&self) -> Result<Vec<[f64; 2]>> {
        let (lon, lat) = (self.require("lon")?, self.require("lat")?);
        (0..self.rows.len())
            .map(|i| Ok([self.value(i, lon)?, self.value(i, lat)?]))
            .collect()
    }
}

/// Covariates a model reads: mean covariates, then covariance covariates
/// not already listed.
pub fn required_covariates(config: &ModelConfig) -> Vec<String> {
    let mut names = config.mean_covariates.clone();
    for c in &config.covariance_covariates {
        if !names.contains(&c.name) {
            names.push(c.name.clone());
        }
    }
    names
}

/// Loads an observation table for `config`.
pub fn load_observations(path: &Path, config: &ModelConfig, options: &DataOptions) -> Result<ObservationSet> {
    let table = RawTable::read(path)?;
    if table.rows.is_empty() {
        return Err(GeoError::Schema(format!("{}: no data rows", table.path)));
    }
    let n = table.rows.len();
    let coords = table.coords()?;

    let outcome: Vec<f64> = match &options.outcome {
        Some(col) => {
            let c = table.require(col)?;
            (0..n).map(|i| table.value(i, c)).collect::<Result<_>>()?
        }
        None => {
            if let Some(c) = table.index("y_elogit").or_else(|| table.index("y")) {
                (0..n).map(|i| table.value(i, c)).collect::<Result<_>>()?
            } else if let (Some(p), Some(e)) = (table.index("positive"), table.index("examined")) {
                (0..n)
                    .map(|i| {
                        empirical_logit(table.count(i, p)?, table.count(i, e)?).map_err(|err| GeoError::Parse {
                            location: format!("{}: row {}", table.path, i + 2),
                            message: err.to_string(),
                        })
                    })
                    .collect::<Result<_>>()?
            } else {
                return Err(GeoError::Schema(format!(
                    "{}: no outcome column (expected 'y_elogit', 'y', or 'positive' and 'examined')",
                    table.path
                )));
            }
        }
    };

    let names = required_covariates(config);
    let cols = names.iter().map(|n| table.require(n)).collect::<Result<Vec<_>>>()?;
    let p = names.len();
    let mut covariates = Vec::with_capacity(n * p);
    for i in 0..n {
        for &c in &cols {
            covariates.push(table.value(i, c)?);
        }
    }
    let q = 1 + config.mean_covariates.len();
    let mut design = DMatrix::zeros(n, q);
    for i in 0..n {
        design[(i, 0)] = 1.0;
        for j in 0..config.mean_covariates.len() {
            // Mean covariates lead `names`, so column j is covariate j.
            design[(i, j + 1)] = covariates[i * p + j];
        }
    }
    let mut design_names = vec!["intercept".to_string()];
    design_names.extend(config.mean_covariates.iter().cloned());
    ObservationSet::new(coords, design, design_names, names, covariates, DVector::from_vec(outcome))
}

/// Loads a prediction grid: `lon`, `lat` and the `required` covariate columns.
pub fn load_grid(path: &Path, required: &[String]) -> Result<GridTable> {
    let table = RawTable::read(path)?;
    let coords = table.coords()?;
    let mut columns = BTreeMap::new();
    for name in required {
        let c = table.require(name)?;
        let values = (0..table.rows.len()).map(|i| table.value(i, c)).collect::<Result<Vec<f64>>>()?;
        columns.insert(name.clone(), values);
    }
    Ok(GridTable { coords, columns })
}

/// Contents of `fit.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub schema: String,
    /// Fully resolved configuration.
    pub config: ConfigDocument,
    pub seed: u64,
    pub fit: FitResult,
}

impl FitDocument {
    pub fn new(config: ConfigDocument, fit: FitResult) -> Self {
        Self {
            schema: SCHEMA.into(),
            seed: fit.seed,
            config,
            fit,
        }
    }
}

pub fn write_fit(path: &Path, doc: &FitDocument) -> Result<()> {
    write_json(path, doc)
}

pub fn read_fit(path: &Path) -> Result<FitDocument> {
    let doc: FitDocument = read_json(path)?;
    if doc.schema != SCHEMA {
        return Err(GeoError::Config(format!(
            "{}: unsupported schema '{}'",
            path.display(),
            doc.schema
        )));
    }
    Ok(doc)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| GeoError::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn finish(path: &Path, w: csv::Writer<BufWriter<File>>) -> Result<()> {
    w.into_inner()
        .map_err(|e| GeoError::io(path, e.into_error()))?
        .flush()
        .map_err(|e| GeoError::io(path, e))
}

fn level_tag(level: f64) -> String {
    let pct = level * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        format!("{pct}")
    }
}

pub const PREDICTION_HEADER: [&str; 7] = ["lon", "lat", "mean", "sd_Y", "sd_S", "lower95", "upper95"];

/// Writes `predictions.csv`. Interval columns are named after the level.
pub fn write_predictions(path: &Path, pred: &PredictionResult) -> Result<()> {
    let mut w = csv_writer(path)?;
    let tag = level_tag(pred.level);
    let mut header: Vec<String> = PREDICTION_HEADER[..5].iter().map(|s| s.to_string()).collect();
    header.push(format!("lower{tag}"));
    header.push(format!("upper{tag}"));
    w.write_record(&header)?;
    for i in 0..pred.len() {
        let c = pred.points[i].coords;
        w.write_record(
            [c[0], c[1], pred.mean[i], pred.sd_y[i], pred.sd_s[i], pred.lower[i], pred.upper[i]].map(fmt_f64),
        )?;
    }
    finish(path, w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub lon: f64,
    pub lat: f64,
    pub mean: f64,
    #[serde(rename = "sd_Y")]
    pub sd_y: f64,
    #[serde(rename = "sd_S")]
    pub sd_s: f64,
    #[serde(rename = "lower95")]
    pub lower: f64,
    #[serde(rename = "upper95")]
    pub upper: f64,
}

/// Reads a 95% `predictions.csv`.
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    read_rows(path)
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| GeoError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    Ok(reader.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRow {
    pub scenario: String,
    pub model: String,
    pub parameter: String,
    pub truth: f64,
    pub prb: f64,
    pub cp: f64,
    pub estimates: usize,
    pub intervals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSummaryRow {
    pub scenario: String,
    pub model: String,
    pub bias: f64,
    pub rmse: f64,
    pub cp: f64,
    pub points: usize,
}

pub const STUDY_PARAMETERS: &str = "study_parameters.csv";
pub const STUDY_PREDICTION: &str = "study_prediction.csv";
pub const STUDY_FAILURES: &str = "study_failures.csv";

/// Writes the parameter, prediction and failure tables of a study into `dir`.
/// Coverage columns are percentages.
pub fn write_study(dir: &Path, report: &StudyReport) -> Result<()> {
    let path = dir.join(STUDY_PARAMETERS);
    let mut w = csv_writer(&path)?;
    w.write_record(["scenario", "model", "parameter", "truth", "prb", "cp", "estimates", "intervals"])?;
    for c in &report.parameter_table {
        w.write_record([
            c.scenario.clone(),
            c.model.clone(),
            c.parameter.clone(),
            fmt_f64(c.truth),
            fmt_f64(c.prb),
            fmt_f64(100.0 * c.cp),
            c.estimates.to_string(),
            c.intervals.to_string(),
        ])?;
    }
    finish(&path, w)?;

    let path = dir.join(STUDY_PREDICTION);
    let mut w = csv_writer(&path)?;
    w.write_record(["scenario", "model", "bias", "rmse", "cp", "points"])?;
    for c in &report.prediction_table {
        w.write_record([
            c.scenario.clone(),
            c.model.clone(),
            fmt_f64(c.bias),
            fmt_f64(c.rmse),
            fmt_f64(100.0 * c.cp),
            c.points.to_string(),
        ])?;
    }
    finish(&path, w)?;

    let path = dir.join(STUDY_FAILURES);
    let mut w = csv_writer(&path)?;
    w.write_record(["scenario", "model", "replicates", "failed", "wald_failed"])?;
    for c in &report.failure_counts {
        w.write_record([
            c.scenario.clone(),
            c.model.clone(),
            c.replicates.to_string(),
            c.failed.to_string(),
            c.wald_failed.to_string(),
        ])?;
    }
    finish(&path, w)
}

pub fn read_study_parameters(path: &Path) -> Result<Vec<ParameterRow>> {
    read_rows(path)
}

pub fn read_study_prediction(path: &Path) -> Result<Vec<PredictionSummaryRow>> {
    read_rows(path)
}

/// Writes one simulated sample as an observation table (`lon`, `lat`, `y`,
/// covariates, latent `s`).
pub fn write_dataset(path: &Path, data: &ObservationSet, latent: Option<&[f64]>) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["lon".to_string(), "lat".into(), "y".into()];
    header.extend(data.covariate_names().iter().cloned());
    if latent.is_some() {
        header.push("s".into());
    }
    w.write_record(&header)?;
    let cols: Vec<Vec<f64>> = data
        .covariate_names()
        .iter()
        .map(|n| data.covariate(n).unwrap_or_default())
        .collect();
    for i in 0..data.len() {
        let c = data.coords()[i];
        let mut rec = vec![fmt_f64(c[0]), fmt_f64(c[1]), fmt_f64(data.outcome()[i])];
        rec.extend(cols.iter().map(|col| fmt_f64(col[i])));
        if let Some(s) = latent {
            rec.push(fmt_f64(s[i]));
        }
        w.write_record(&rec)?;
    }
    finish(path, w)
}

/// Writes the observed and held-out parts of a simulated replicate.
pub fn write_simulation(dir: &Path, sim: &SimulatedData) -> Result<()> {
    let n = sim.observed.len();
    write_dataset(&dir.join("observed.csv"), &sim.observed, Some(&sim.latent[..n]))?;
    if sim.latent.len() > n {
        write_dataset(&dir.join("heldout.csv"), &sim.heldout, Some(&sim.latent[n..]))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empirical_logit_values() {
        assert_eq!(empirical_logit(5, 10).unwrap(), 0.0);
        let lo = empirical_logit(0, 10).unwrap();
        assert!((lo - (0.5f64 / 10.5).ln()).abs() < 1e-15);
        assert!((lo + 3.044522437723423).abs() < 1e-12);
        assert_eq!(empirical_logit(10, 10).unwrap(), -lo);
        assert!(empirical_logit(11, 10).is_err());
        assert!(empirical_logit(0, 0).is_err());
    }

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn config_rejects_unknown_schema() {
        let mut doc = ConfigDocument::for_model(ModelConfig::new(CovarianceForm::Stationary));
        assert!(doc.validate().is_ok());
        doc.schema = "nonstat-geo/v0".into();
        assert!(matches!(doc.validate(), Err(GeoError::Config(_))));
    }

    #[test]
    fn level_tags() {
        assert_eq!(level_tag(0.95), "95");
        assert_eq!(level_tag(0.9), "90");
        assert_eq!(level_tag(0.975), "97.5");
    }
}
