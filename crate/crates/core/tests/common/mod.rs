#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use nonstat_geo::kernels::{covariance_matrix, CovarianceForm, CovarianceSpec, CovariateKernel, InputPoint, MaternKernel};
use nonstat_geo::model::{ObservationSet, ParameterVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FORMS: [CovarianceForm; 4] = [
    CovarianceForm::Stationary,
    CovarianceForm::Product,
    CovarianceForm::PartialSum,
    CovarianceForm::FullSum,
];
pub const KAPPAS: [f64; 3] = [0.5, 1.5, 2.5];

pub fn covariate_name(k: usize) -> String {
    format!("c{k}")
}

/// Random spec of `form` with `p` covariates (ignored for stationary).
pub fn random_spec<R: Rng>(rng: &mut R, form: CovarianceForm, p: usize) -> CovarianceSpec {
    let kappa = |rng: &mut R| KAPPAS[rng.random_range(0..3)];
    let spatial = MaternKernel::new(rng.random_range(0.05..1.0), kappa(rng)).unwrap();
    let sigma2 = rng.random_range(0.2..2.0);
    if form == CovarianceForm::Stationary {
        return CovarianceSpec::stationary(spatial, sigma2).unwrap();
    }
    let covs = (0..p)
        .map(|k| {
            let kern = MaternKernel::new(rng.random_range(0.05..1.0), kappa(rng)).unwrap();
            CovariateKernel::new(covariate_name(k), kern)
        })
        .collect();
    CovarianceSpec::new(form, spatial, covs, sigma2).unwrap()
}

/// Random points on the unit square with covariates `c0..c{p-1}` in [-1, 1].
pub fn random_points<R: Rng>(rng: &mut R, n: usize, p: usize) -> Vec<InputPoint> {
    (0..n)
        .map(|_| {
            let mut pt = InputPoint::new([rng.random(), rng.random()]);
            for k in 0..p {
                pt = pt.with(covariate_name(k), rng.random_range(-1.0..1.0));
            }
            pt
        })
        .collect()
}

/// Observation set over `points` with design `[1, c0]` (or `[1]` when p = 0).
pub fn observations(points: &[InputPoint], p: usize, y: &[f64]) -> ObservationSet {
    let n = points.len();
    let q = if p > 0 { 2 } else { 1 };
    let mut design = DMatrix::zeros(n, q);
    let mut covs = Vec::with_capacity(n * p);
    for (i, pt) in points.iter().enumerate() {
        design[(i, 0)] = 1.0;
        for k in 0..p {
            covs.push(pt.covariates[&covariate_name(k)]);
        }
        if p > 0 {
            design[(i, 1)] = covs[i * p];
        }
    }
    let mut names = vec!["intercept".to_string()];
    if p > 0 {
        names.push(covariate_name(0));
    }
    ObservationSet::new(
        points.iter().map(|pt| pt.coords).collect(),
        design,
        names,
        (0..p).map(covariate_name).collect(),
        covs,
        DVector::from_column_slice(y),
    )
    .unwrap()
}

/// Log-density of N(mean, sigma) at y from an explicit inverse and LU determinant.
pub fn explicit_loglik(sigma: &DMatrix<f64>, y: &DVector<f64>, mean: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    let r = y - mean;
    let inv = sigma.clone().try_inverse().expect("invertible");
    let det = sigma.clone().lu().determinant();
    -0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * (r.transpose() * inv * &r)[(0, 0)]
}

/// `(DᵀΣ⁻¹D)⁻¹ DᵀΣ⁻¹y` through explicit inverses.
pub fn gls(sigma: &DMatrix<f64>, d: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let si = sigma.clone().try_inverse().unwrap();
    let a = d.transpose() * &si * d;
    a.try_inverse().unwrap() * d.transpose() * si * y
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

/// Random instance: points, spec, θ and outcome.
pub fn instance(seed: u64, n: usize) -> (Vec<InputPoint>, CovarianceSpec, ParameterVector, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let form = FORMS[rng.random_range(0..4)];
    let p = rng.random_range(1..4);
    let spec = random_spec(&mut rng, form, p);
    let pts = random_points(&mut rng, n, p);
    let theta = ParameterVector {
        beta: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        sigma2: spec.sigma2,
        phis: spec.phis(),
        tau2: rng.random_range(0.01..0.5),
    };
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    (pts, spec, theta, y)
}

pub fn design_for(points: &[InputPoint], p: usize) -> DMatrix<f64> {
    let q = if p > 0 { 2 } else { 1 };
    DMatrix::from_fn(points.len(), q, |i, j| if j == 0 { 1.0 } else { points[i].covariates["c0"] })
}

/// Conditional mean and latent variance from the joint covariance of
/// (targets, data), using explicit inverses.
pub fn joint_oracle(
    data_pts: &[InputPoint],
    targets: &[InputPoint],
    spec: &CovarianceSpec,
    theta: &ParameterVector,
    y: &DVector<f64>,
    p: usize,
) -> (Vec<f64>, Vec<f64>) {
    let n = data_pts.len();
    let m = targets.len();
    let all: Vec<InputPoint> = data_pts.iter().chain(targets).cloned().collect();
    let joint = covariance_matrix(&all, spec, 0.0).unwrap();
    let mut s_dd = joint.view((0, 0), (n, n)).into_owned();
    for i in 0..n {
        s_dd[(i, i)] += theta.tau2;
    }
    let s_td = joint.view((n, 0), (m, n)).into_owned();
    let s_tt = joint.view((n, n), (m, m)).into_owned();
    let beta = DVector::from_column_slice(&theta.beta);
    let mu_d = design_for(data_pts, p) * &beta;
    let mu_t = design_for(targets, p) * &beta;
    let inv = s_dd.try_inverse().unwrap();
    let mean = mu_t + &s_td * &inv * (y - mu_d);
    let cov = s_tt - &s_td * inv * s_td.transpose();
    (mean.as_slice().to_vec(), (0..m).map(|i| cov[(i, i)].max(0.0)).collect())
}
