use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::bessel::bessel_k_scaled;
use crate::error::{GeoError, Result};

/// Distances below this are treated as exact zeros.
pub const ZERO_DISTANCE: f64 = 1e-15;

const SQRT3: f64 = 1.732_050_807_568_877_2;
const SQRT5: f64 = 2.236_067_977_499_79;

/// Matérn correlation with scale `phi` and smoothness `kappa`.
///
/// The argument is scaled by `sqrt(2 kappa)`, so `kappa = 1.5` gives
/// `(1 + sqrt(3) u / phi) exp(-sqrt(3) u / phi)` and `kappa = 0.5` the
/// exponential correlation `exp(-u / phi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternKernel {
    phi: f64,
    kappa: f64,
}

impl MaternKernel {
    pub fn new(phi: f64, kappa: f64) -> Result<Self> {
        if !(phi.is_finite() && phi > 0.0) {
            return Err(GeoError::Domain(format!("Matérn scale must be positive, got {phi}")));
        }
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(GeoError::Domain(format!(
                "Matérn smoothness must be positive, got {kappa}"
            )));
        }
        Ok(Self { phi, kappa })
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn with_phi(&self, phi: f64) -> Result<Self> {
        Self::new(phi, self.kappa)
    }

    /// Correlation at distance `u`; `u` is assumed finite and non-negative.
    #[inline]
    pub(crate) fn corr(&self, u: f64) -> f64 {
        if u < ZERO_DISTANCE {
            return 1.0;
        }
        let x = u / self.phi;
        // exp(-s) underflows long before the polynomial factors overflow.
        if x > 745.0 && self.kappa <= 2.5 {
            return 0.0;
        }
        if self.kappa == 0.5 {
            (-x).exp()
        } else if self.kappa == 1.5 {
            let s = SQRT3 * x;
            (1.0 + s) * (-s).exp()
        } else if self.kappa == 2.5 {
            let s = SQRT5 * x;
            (1.0 + s + s * s / 3.0) * (-s).exp()
        } else {
            matern_bessel(x, self.kappa)
        }
    }

    /// Checked correlation at distance `u`.
    pub fn correlation(&self, u: f64) -> Result<f64> {
        if !u.is_finite() {
            return Err(GeoError::Domain(format!("distance must be finite, got {u}")));
        }
        if u < 0.0 {
            return Err(GeoError::Domain(format!("distance must be non-negative, got {u}")));
        }
        Ok(self.corr(u))
    }
}

/// `rho(u)` for a validated kernel.
pub fn matern_correlation(u: f64, kernel: &MaternKernel) -> Result<f64> {
    kernel.correlation(u)
}

/// General-order Matérn correlation at `x = u / phi` through `K_kappa`,
/// bypassing the closed forms.
pub fn matern_bessel(x: f64, kappa: f64) -> f64 {
    if x < ZERO_DISTANCE {
        return 1.0;
    }
    let s = (2.0 * kappa).sqrt() * x;
    if s > 1e4 {
        return 0.0;
    }
    // log of 2^{1-kappa} / Gamma(kappa) * s^kappa * K_kappa(s)
    let log_rho = (1.0 - kappa) * std::f64::consts::LN_2 - ln_gamma(kappa) + kappa * s.ln()
        + bessel_k_scaled(kappa, s).ln()
        - s;
    log_rho.exp().min(1.0)
}
