//! BFGS minimization with central-difference gradients.

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    pub gradient_tolerance: f64,
    pub relative_tolerance: f64,
    pub max_iterations: usize,
    /// Finite-difference step is `grad_step · (1 + |x_i|)`.
    pub grad_step: f64,
    /// Largest max-norm of a single search direction.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            gradient_tolerance: 1e-5,
            relative_tolerance: 1e-12,
            max_iterations: 500,
            grad_step: 1e-5,
            max_step: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    RelativeChange,
    LineSearch,
    MaxIterations,
    NonFiniteStart,
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub fx: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

impl BfgsOutcome {
    pub fn converged(&self) -> bool {
        matches!(
            self.termination,
            Termination::Gradient | Termination::RelativeChange
        )
    }
}

/// Objective wrapper that counts calls and maps NaN to +inf.
struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

pub fn numeric_gradient<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], step: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = step * (1.0 + x[i].abs());
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Central-difference Hessian with per-coordinate step `step · (1 + |x_i|)`.
pub fn numeric_hessian<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], step: f64) -> Vec<Vec<f64>> {
    let k = x.len();
    let h: Vec<f64> = x.iter().map(|v| step * (1.0 + v.abs())).collect();
    let f0 = f(x);
    let mut xp = x.to_vec();
    let mut hess = vec![vec![0.0; k]; k];
    for i in 0..k {
        xp[i] = x[i] + h[i];
        let fp = f(&xp);
        xp[i] = x[i] - h[i];
        let fm = f(&xp);
        xp[i] = x[i];
        hess[i][i] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| {
                xp[i] = x[i] + si * h[i];
                xp[j] = x[j] + sj * h[j];
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0)
                + corner(-1.0, -1.0))
                / (4.0 * h[i] * h[j]);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    hess
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` starting at `x0`.
pub fn minimize<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], opts: &BfgsOptions) -> BfgsOutcome {
    let k = x0.len();
    let mut obj = Counted { f, evals: 0 };
    let mut x = x0.to_vec();
    let mut fx = obj.call(&x);
    if !fx.is_finite() {
        return BfgsOutcome {
            x,
            fx,
            gradient: vec![f64::NAN; k],
            iterations: 0,
            evaluations: obj.evals,
            termination: Termination::NonFiniteStart,
        };
    }
    let step = opts.grad_step;
    let mut g = numeric_gradient(&mut |v: &[f64]| obj.call(v), &x, step);
    let identity = |k: usize| -> Vec<Vec<f64>> {
        (0..k)
            .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect()
    };
    let mut hinv = identity(k);
    let mut fresh = true;
    let mut iterations = 0;

    let termination = loop {
        if max_abs(&g) <= opts.gradient_tolerance {
            break Termination::Gradient;
        }
        if iterations >= opts.max_iterations {
            break Termination::MaxIterations;
        }
        iterations += 1;

        let mut d: Vec<f64> = (0..k).map(|i| -dot(&hinv[i], &g)).collect();
        if dot(&d, &g) >= 0.0 || d.iter().any(|v| !v.is_finite()) {
            hinv = identity(k);
            fresh = true;
            d = g.iter().map(|v| -v).collect();
        }
        let dmax = max_abs(&d);
        if dmax > opts.max_step {
            d.iter_mut().for_each(|v| *v *= opts.max_step / dmax);
        }
        let slope = dot(&d, &g);

        // Backtracking with safeguarded quadratic interpolation.
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            let fxn = obj.call(&xn);
            if fxn.is_finite() && fxn <= fx + 1e-4 * alpha * slope {
                accepted = Some((xn, fxn));
                break;
            }
            let next = if fxn.is_finite() {
                let denom = 2.0 * (fxn - fx - alpha * slope);
                if denom > 0.0 {
                    -slope * alpha * alpha / denom
                } else {
                    0.5 * alpha
                }
            } else {
                0.2 * alpha
            };
            alpha = next.clamp(0.1 * alpha, 0.5 * alpha);
        }

        let Some((xn, fxn)) = accepted else {
            if fresh {
                break Termination::LineSearch;
            }
            hinv = identity(k);
            fresh = true;
            continue;
        };

        let gn = numeric_gradient(&mut |v: &[f64]| obj.call(v), &xn, step);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let rel_change = (fx - fxn).abs() / (fx.abs() + opts.relative_tolerance);

        x = xn;
        fx = fxn;
        g = gn;

        let ynorm = dot(&y, &y).sqrt();
        let snorm = dot(&s, &s).sqrt();
        if sy > 1e-10 * snorm * ynorm && y.iter().all(|v| v.is_finite()) {
            if fresh {
                // Scale the initial inverse Hessian to the observed curvature.
                let gamma = sy / dot(&y, &y);
                hinv.iter_mut()
                    .enumerate()
                    .for_each(|(i, row)| row.iter_mut().enumerate().for_each(|(j, v)| *v = if i == j { gamma } else { 0.0 }));
                fresh = false;
            }
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..k).map(|i| dot(&hinv[i], &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..k {
                for j in 0..k {
                    hinv[i][j] += -rho * (s[i] * hy[j] + hy[i] * s[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }

        if max_abs(&g) <= opts.gradient_tolerance {
            break Termination::Gradient;
        }
        if rel_change <= opts.relative_tolerance {
            break Termination::RelativeChange;
        }
    };

    BfgsOutcome {
        x,
        fx,
        gradient: g,
        iterations,
        evaluations: obj.evals,
        termination,
    }
}
