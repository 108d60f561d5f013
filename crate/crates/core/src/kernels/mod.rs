//! Matérn correlations and the covariance constructions built from them.
//!
//! A [`CovarianceSpec`] combines one spatial kernel with `p` covariate
//! kernels in one of four ways:
//!
//! | form          | covariance                                  | variance at a point |
//! |---------------|---------------------------------------------|---------------------|
//! | `Stationary`  | `σ² ρ_s(‖x−x′‖)`                            | `σ²`                |
//! | `Product`     | `σ² ρ_s(‖x−x′‖) ∏ⱼ ρⱼ(|eⱼ−eⱼ′|)`             | `σ²`                |
//! | `PartialSum`  | `σ² ρ_s(‖x−x′‖) Σⱼ ρⱼ(|eⱼ−eⱼ′|)`             | `p σ²`              |
//! | `FullSum`     | `σ² (ρ_s(‖x−x′‖) + Σⱼ ρⱼ(|eⱼ−eⱼ′|))`         | `(p+1) σ²`          |

mod bessel;
mod matern;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};

pub use bessel::{bessel_k, bessel_k_scaled};
pub use matern::{matern_bessel, matern_correlation, MaternKernel, ZERO_DISTANCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceForm {
    Stationary,
    /// Labelled `model1`.
    Product,
    /// Labelled `model2`.
    PartialSum,
    /// Labelled `model3`.
    FullSum,
}

impl CovarianceForm {
    pub const NON_STATIONARY: [CovarianceForm; 3] = [
        CovarianceForm::Product,
        CovarianceForm::PartialSum,
        CovarianceForm::FullSum,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            CovarianceForm::Stationary => "stationary",
            CovarianceForm::Product => "model1",
            CovarianceForm::PartialSum => "model2",
            CovarianceForm::FullSum => "model3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stationary" => Some(CovarianceForm::Stationary),
            "product" | "model1" => Some(CovarianceForm::Product),
            "partial_sum" | "model2" => Some(CovarianceForm::PartialSum),
            "full_sum" | "model3" => Some(CovarianceForm::FullSum),
            _ => None,
        }
    }

    /// Marginal variance multiplier of σ² for `p` covariate kernels.
    pub fn variance_factor(&self, p: usize) -> f64 {
        match self {
            CovarianceForm::Stationary | CovarianceForm::Product => 1.0,
            CovarianceForm::PartialSum => p as f64,
            CovarianceForm::FullSum => (p + 1) as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    /// Planar Euclidean distance in coordinate units.
    #[default]
    Euclidean,
    /// Haversine distance in kilometres; coordinates are (lon, lat) in degrees.
    GreatCircle,
}

const EARTH_RADIUS_KM: f64 = 6371.0;

impl DistanceMetric {
    #[inline]
    pub fn distance(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        match self {
            DistanceMetric::Euclidean => (a[0] - b[0]).hypot(a[1] - b[1]),
            DistanceMetric::GreatCircle => {
                let (lon1, lat1) = (a[0].to_radians(), a[1].to_radians());
                let (lon2, lat2) = (b[0].to_radians(), b[1].to_radians());
                let dlat = 0.5 * (lat2 - lat1);
                let dlon = 0.5 * (lon2 - lon1);
                let h = dlat.sin().powi(2) + lat1.cos() * lat2.cos() * dlon.sin().powi(2);
                2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
            }
        }
    }
}

fn one() -> f64 {
    1.0
}

/// Kernel over one covariate. Differences are divided by `scale` before the
/// kernel sees them (1 unless the covariate is standardized).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateKernel {
    pub name: String,
    pub kernel: MaternKernel,
    #[serde(default = "one")]
    pub scale: f64,
}

impl CovariateKernel {
    pub fn new(name: impl Into<String>, kernel: MaternKernel) -> Self {
        Self {
            name: name.into(),
            kernel,
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub form: CovarianceForm,
    pub spatial: MaternKernel,
    pub covariates: Vec<CovariateKernel>,
    pub sigma2: f64,
    #[serde(default)]
    pub distance: DistanceMetric,
}

impl CovarianceSpec {
    pub fn new(
        form: CovarianceForm,
        spatial: MaternKernel,
        covariates: Vec<CovariateKernel>,
        sigma2: f64,
    ) -> Result<Self> {
        let spec = Self {
            form,
            spatial,
            covariates,
            sigma2,
            distance: DistanceMetric::Euclidean,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn stationary(spatial: MaternKernel, sigma2: f64) -> Result<Self> {
        Self::new(CovarianceForm::Stationary, spatial, Vec::new(), sigma2)
    }

    pub fn with_distance(mut self, distance: DistanceMetric) -> Self {
        self.distance = distance;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.covariates.len();
        match self.form {
            CovarianceForm::Stationary if p != 0 => {
                return Err(GeoError::Config(format!(
                    "stationary covariance takes no covariate kernels, got {p}"
                )))
            }
            CovarianceForm::Product | CovarianceForm::PartialSum | CovarianceForm::FullSum
                if p == 0 =>
            {
                return Err(GeoError::Config(format!(
                    "{:?} covariance needs at least one covariate kernel",
                    self.form
                )))
            }
            _ => {}
        }
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(GeoError::Domain(format!(
                "process variance must be positive, got {}",
                self.sigma2
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.covariates {
            if !seen.insert(c.name.as_str()) {
                return Err(GeoError::Config(format!("covariate '{}' listed twice", c.name)));
            }
            if !(c.scale.is_finite() && c.scale > 0.0) {
                return Err(GeoError::Config(format!(
                    "covariate '{}' has invalid scale {}",
                    c.name, c.scale
                )));
            }
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.covariates.len()
    }

    pub fn covariate_names(&self) -> Vec<&str> {
        self.covariates.iter().map(|c| c.name.as_str()).collect()
    }

    /// Variance of the process at any single input.
    pub fn marginal_variance(&self) -> f64 {
        self.sigma2 * self.form.variance_factor(self.p())
    }

    /// Scale parameters in layout order: spatial first, then covariates.
    pub fn phis(&self) -> Vec<f64> {
        std::iter::once(self.spatial.phi())
            .chain(self.covariates.iter().map(|c| c.kernel.phi()))
            .collect()
    }

    /// Copy of this spec with new `σ²` and scale parameters.
    pub fn with_parameters(&self, sigma2: f64, phis: &[f64]) -> Result<Self> {
        if phis.len() != self.p() + 1 {
            return Err(GeoError::Layout {
                expected: self.p() + 1,
                got: phis.len(),
            });
        }
        let mut out = self.clone();
        out.sigma2 = sigma2;
        out.spatial = self.spatial.with_phi(phis[0])?;
        for (c, &phi) in out.covariates.iter_mut().zip(&phis[1..]) {
            c.kernel = c.kernel.with_phi(phi)?;
        }
        out.validate()?;
        Ok(out)
    }

    /// Covariance from a spatial distance and the raw covariate differences.
    #[inline]
    fn combine(&self, spatial_u: f64, covariate_diff: impl Fn(usize) -> f64) -> f64 {
        let rho_s = self.spatial.corr(spatial_u);
        let cov_rho = |j: usize| {
            let c = &self.covariates[j];
            c.kernel.corr(covariate_diff(j) / c.scale)
        };
        let p = self.p();
        let rho = match self.form {
            CovarianceForm::Stationary => rho_s,
            CovarianceForm::Product => (0..p).fold(rho_s, |acc, j| acc * cov_rho(j)),
            CovarianceForm::PartialSum => rho_s * (0..p).map(cov_rho).sum::<f64>(),
            CovarianceForm::FullSum => rho_s + (0..p).map(cov_rho).sum::<f64>(),
        };
        self.sigma2 * rho
    }

    fn covariance_resolved(&self, xa: [f64; 2], ea: &[f64], xb: [f64; 2], eb: &[f64]) -> f64 {
        let u = self.distance.distance(xa, xb);
        self.combine(u, |j| (ea[j] - eb[j]).abs())
    }
}

/// A location plus named covariate values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputPoint {
    pub coords: [f64; 2],
    pub covariates: BTreeMap<String, f64>,
}

impl InputPoint {
    pub fn new(coords: [f64; 2]) -> Self {
        Self {
            coords,
            covariates: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: impl Into<String>, value: f64) -> Self {
        self.covariates.insert(name.into(), value);
        self
    }
}

/// Points with covariates resolved into the kernel order of one spec.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub coords: Vec<[f64; 2]>,
    /// Row-major `n × p` covariate values in spec order.
    pub covariates: Vec<f64>,
    pub p: usize,
}

impl PointSet {
    pub fn new(coords: Vec<[f64; 2]>, covariates: Vec<f64>, p: usize) -> Result<Self> {
        if covariates.len() != coords.len() * p {
            return Err(GeoError::Schema(format!(
                "expected {} covariate values for {} points, got {}",
                coords.len() * p,
                coords.len(),
                covariates.len()
            )));
        }
        Ok(Self {
            coords,
            covariates,
            p,
        })
    }

    pub fn resolve(points: &[InputPoint], spec: &CovarianceSpec) -> Result<Self> {
        let names = spec.covariate_names();
        let mut covariates = Vec::with_capacity(points.len() * names.len());
        for (i, pt) in points.iter().enumerate() {
            for name in &names {
                let v = pt.covariates.get(*name).ok_or_else(|| {
                    GeoError::Schema(format!("point {i} is missing covariate '{name}'"))
                })?;
                covariates.push(*v);
            }
        }
        Self::new(
            points.iter().map(|p| p.coords).collect(),
            covariates,
            names.len(),
        )
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.p..(i + 1) * self.p]
    }

    fn check(&self, spec: &CovarianceSpec) -> Result<()> {
        if self.p != spec.p() {
            return Err(GeoError::Schema(format!(
                "point set carries {} covariates but the covariance uses {}",
                self.p,
                spec.p()
            )));
        }
        Ok(())
    }
}

/// Pairwise distances of one point set, reusable across parameter values.
/// Packed lower triangle (including the diagonal), row by row.
#[derive(Debug, Clone)]
pub struct PairwiseDistances {
    n: usize,
    spatial: Vec<f64>,
    covariate: Vec<Vec<f64>>,
}

impl PairwiseDistances {
    pub fn new(points: &PointSet, metric: DistanceMetric) -> Self {
        let n = points.len();
        let m = n * (n + 1) / 2;
        let mut spatial = Vec::with_capacity(m);
        let mut covariate = vec![Vec::with_capacity(m); points.p];
        for i in 0..n {
            let (xi, ei) = (points.coords[i], points.row(i));
            for j in 0..=i {
                spatial.push(metric.distance(xi, points.coords[j]));
                let ej = points.row(j);
                for (k, col) in covariate.iter_mut().enumerate() {
                    col.push((ei[k] - ej[k]).abs());
                }
            }
        }
        Self {
            n,
            spatial,
            covariate,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Largest spatial distance.
    pub fn max_spatial(&self) -> f64 {
        self.spatial.iter().copied().fold(0.0, f64::max)
    }

    /// Largest absolute difference of covariate `k`.
    pub fn max_covariate(&self, k: usize) -> f64 {
        self.covariate[k].iter().copied().fold(0.0, f64::max)
    }

    /// `Σ + τ² I` for `spec`.
    pub fn covariance(&self, spec: &CovarianceSpec, tau2: f64) -> DMatrix<f64> {
        debug_assert_eq!(self.covariate.len(), spec.p());
        let n = self.n;
        let mut out = DMatrix::zeros(n, n);
        let mut idx = 0;
        for i in 0..n {
            for j in 0..=i {
                let v = spec.combine(self.spatial[idx], |k| self.covariate[k][idx]);
                out[(i, j)] = v;
                out[(j, i)] = v;
                idx += 1;
            }
            out[(i, i)] += tau2;
        }
        out
    }
}

/// Covariance between two inputs under `spec`.
pub fn pair_covariance(a: &InputPoint, b: &InputPoint, spec: &CovarianceSpec) -> Result<f64> {
    let resolved = PointSet::resolve(&[a.clone(), b.clone()], spec)?;
    Ok(spec.covariance_resolved(
        resolved.coords[0],
        resolved.row(0),
        resolved.coords[1],
        resolved.row(1),
    ))
}

/// `n × n` covariance with nugget `tau2` on the diagonal.
pub fn covariance_matrix(
    points: &[InputPoint],
    spec: &CovarianceSpec,
    tau2: f64,
) -> Result<DMatrix<f64>> {
    let set = PointSet::resolve(points, spec)?;
    covariance_matrix_resolved(&set, spec, tau2)
}

pub fn covariance_matrix_resolved(
    points: &PointSet,
    spec: &CovarianceSpec,
    tau2: f64,
) -> Result<DMatrix<f64>> {
    points.check(spec)?;
    if !(tau2.is_finite() && tau2 >= 0.0) {
        return Err(GeoError::Domain(format!("nugget variance must be non-negative, got {tau2}")));
    }
    Ok(PairwiseDistances::new(points, spec.distance).covariance(spec, tau2))
}

/// `m × n` covariances between targets and sources; no nugget.
pub fn cross_covariance(
    targets: &[InputPoint],
    sources: &[InputPoint],
    spec: &CovarianceSpec,
) -> Result<DMatrix<f64>> {
    let t = PointSet::resolve(targets, spec)?;
    let s = PointSet::resolve(sources, spec)?;
    cross_covariance_resolved(&t, &s, spec)
}

pub fn cross_covariance_resolved(
    targets: &PointSet,
    sources: &PointSet,
    spec: &CovarianceSpec,
) -> Result<DMatrix<f64>> {
    targets.check(spec)?;
    sources.check(spec)?;
    Ok(DMatrix::from_fn(targets.len(), sources.len(), |i, j| {
        spec.covariance_resolved(targets.coords[i], targets.row(i), sources.coords[j], sources.row(j))
    }))
}

/// Covariances between one target and every source.
pub(crate) fn cross_covariance_row(
    target_xy: [f64; 2],
    target_cov: &[f64],
    sources: &PointSet,
    spec: &CovarianceSpec,
    out: &mut [f64],
) {
    for (j, o) in out.iter_mut().enumerate() {
        *o = spec.covariance_resolved(target_xy, target_cov, sources.coords[j], sources.row(j));
    }
}
