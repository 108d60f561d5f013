//! Writes the bundled synthetic dataset: 150 observations and a 25 × 25
//! prediction grid with four covariates (smooth trend plus local noise),
//! drawn from a PartialSum model on altitude (κ = 2.5) and temperature (κ = 1.5).
//!
//! cargo run --example make_demo_data -- data/demo

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use nonstat_geo::io::{fmt_f64, write_dataset};
use nonstat_geo::kernels::{CovarianceForm, CovarianceSpec, CovariateKernel, MaternKernel, PointSet};
use nonstat_geo::model::ObservationSet;
use nonstat_geo::simulate::sample_gaussian_field;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

const NAMES: [&str; 4] = ["altitude", "temperature", "humidity", "distance"];

fn covariates<R: Rng>(x: f64, y: f64, rng: &mut R) -> [f64; 4] {
    let smooth = [
        (2.5 * x + 0.3).sin() * (2.0 * y).cos() + 0.3 * x,
        0.8 * (3.0 * y - 1.0).cos() - 0.3 * x,
        (4.0 * x * y + 1.0).sin(),
        2.0 * ((x - 0.3).powi(2) + (y - 0.7).powi(2)).sqrt() - 0.5,
    ];
    smooth.map(|v| v + 0.35 * rng.sample::<f64, _>(StandardNormal))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data/demo".into()));
    std::fs::create_dir_all(&out)?;
    let mut rng = ChaCha20Rng::seed_from_u64(20_260_101);

    let n = 150;
    let coords: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    let covs: Vec<f64> = coords.iter().flat_map(|c| covariates(c[0], c[1], &mut rng)).collect();

    let spec = CovarianceSpec::new(
        CovarianceForm::PartialSum,
        MaternKernel::new(0.25, 1.5)?,
        vec![
            CovariateKernel::new("altitude", MaternKernel::new(0.5, 2.5)?),
            CovariateKernel::new("temperature", MaternKernel::new(0.4, 1.5)?),
        ],
        0.6,
    )?;
    let kernel_cols: Vec<f64> = (0..n).flat_map(|i| [covs[4 * i], covs[4 * i + 1]]).collect();
    let s = sample_gaussian_field(&spec, &PointSet::new(coords.clone(), kernel_cols, 2)?, &mut rng)?;

    let beta = [0.5, 0.8, -0.6, 0.3, -0.2];
    let tau = 0.05f64.sqrt();
    let mut design = DMatrix::zeros(n, 5);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        design[(i, 0)] = 1.0;
        let mut mu = beta[0];
        for j in 0..4 {
            design[(i, j + 1)] = covs[4 * i + j];
            mu += beta[j + 1] * covs[4 * i + j];
        }
        let noise: f64 = rng.sample(StandardNormal);
        y.push(mu + s[i] + tau * noise);
    }
    let mut design_names = vec!["intercept".to_string()];
    design_names.extend(NAMES.iter().map(|s| s.to_string()));
    let names: Vec<String> = NAMES.iter().map(|s| s.to_string()).collect();
    let obs = ObservationSet::new(coords, design, design_names, names, covs, DVector::from_vec(y))?;
    write_dataset(&out.join("observations.csv"), &obs, None)?;

    let mut w = csv::Writer::from_path(out.join("grid.csv"))?;
    let mut header = vec!["lon", "lat"];
    header.extend(NAMES);
    w.write_record(&header)?;
    let side = 25;
    for r in 0..side {
        for c in 0..side {
            let (x, yy) = ((c as f64 + 0.5) / side as f64, (r as f64 + 0.5) / side as f64);
            let mut rec = vec![fmt_f64(x), fmt_f64(yy)];
            rec.extend(covariates(x, yy, &mut rng).map(fmt_f64));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    println!("wrote {} and {}", out.join("observations.csv").display(), out.join("grid.csv").display());
    Ok(())
}
