use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Relative jitter levels tried after a failed factorization.
const JITTER_LEVELS: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Cholesky factor of a covariance matrix and the diagonal jitter it needed.
pub(crate) struct Factor {
    pub chol: Cholesky<f64, Dyn>,
    #[allow(dead_code)]
    pub jitter: f64,
}

impl Factor {
    /// `L⁻¹ b`
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut x);
        x
    }

    pub fn solve_lower_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut x);
        x
    }

    /// In-place `L⁻¹ b` for a single column held in a slice.
    pub fn solve_lower_slice(&self, b: &mut [f64]) {
        let l = self.chol.l_dirty();
        let n = b.len();
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= l[(i, k)] * b[k];
            }
            b[i] = s / l[(i, i)];
        }
    }

    /// `Σ⁻¹ b`
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Factorizes `sigma`, adding `level · mean(diag)` to the diagonal with
/// escalating levels when the plain factorization fails.
pub(crate) fn factorize(sigma: DMatrix<f64>) -> Option<Factor> {
    if let Some(chol) = Cholesky::new(sigma.clone()) {
        return Some(Factor { chol, jitter: 0.0 });
    }
    let n = sigma.nrows();
    if n == 0 {
        return None;
    }
    let mean_diag = sigma.diagonal().sum() / n as f64;
    if !(mean_diag.is_finite() && mean_diag > 0.0) {
        return None;
    }
    for level in JITTER_LEVELS {
        let jitter = level * mean_diag;
        let mut m = sigma.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            return Some(Factor { chol, jitter });
        }
    }
    None
}
