//! Damped Gauss–Newton (Levenberg–Marquardt) with box bounds handled by a
//! smooth change of variables.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// A least-squares objective ½‖r(p)‖² over external parameters.
pub trait Residuals {
    fn n_residuals(&self) -> usize;
    fn residuals(&self, p: &DVector<f64>) -> DVector<f64>;
    /// ∂rᵢ/∂pⱼ.
    fn jacobian(&self, p: &DVector<f64>) -> DMatrix<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
}

impl Bound {
    pub const FREE: Bound = Bound {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Bound {
        Bound { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Internal → external.
    pub fn to_external(&self, u: f64) -> f64 {
        match (self.lo.is_finite(), self.hi.is_finite()) {
            (true, true) => self.lo + 0.5 * (self.hi - self.lo) * (u.sin() + 1.0),
            (true, false) => self.lo - 1.0 + (u * u + 1.0).sqrt(),
            (false, true) => self.hi + 1.0 - (u * u + 1.0).sqrt(),
            (false, false) => u,
        }
    }

    /// External → internal, choosing the principal branch.
    pub fn to_internal(&self, p: f64) -> f64 {
        match (self.lo.is_finite(), self.hi.is_finite()) {
            (true, true) => {
                let s = 2.0 * (p - self.lo) / (self.hi - self.lo) - 1.0;
                s.clamp(-1.0, 1.0).asin()
            }
            (true, false) => ((p - self.lo + 1.0).powi(2) - 1.0).max(0.0).sqrt(),
            (false, true) => ((self.hi - p + 1.0).powi(2) - 1.0).max(0.0).sqrt(),
            (false, false) => p,
        }
    }

    /// dp/du.
    pub fn derivative(&self, u: f64) -> f64 {
        match (self.lo.is_finite(), self.hi.is_finite()) {
            (true, true) => 0.5 * (self.hi - self.lo) * u.cos(),
            (true, false) => u / (u * u + 1.0).sqrt(),
            (false, true) => -u / (u * u + 1.0).sqrt(),
            (false, false) => 1.0,
        }
    }

    /// True when `p` sits on a finite bound within a relative tolerance.
    pub fn at_bound(&self, p: f64) -> bool {
        let scale = if self.lo.is_finite() && self.hi.is_finite() {
            self.hi - self.lo
        } else {
            1.0
        };
        let tol = 1e-6 * scale.max(f64::MIN_POSITIVE);
        (self.lo.is_finite() && (p - self.lo).abs() <= tol)
            || (self.hi.is_finite() && (self.hi - p).abs() <= tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmOptions {
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Relative χ² change below which an accepted step ends the search.
    pub ftol: f64,
    /// Gradient norm (internal coordinates) below which the search ends.
    pub gtol: f64,
    pub max_iter: usize,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            lambda0: 1e-3,
            lambda_up: 10.0,
            lambda_down: 10.0,
            ftol: 1e-10,
            gtol: 1e-8,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmStatus {
    Converged,
    MaxIter,
    Singular,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome {
    /// External parameters at the end of the search.
    pub params: DVector<f64>,
    /// Residual sum of squares.
    pub chi2: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub lambda: f64,
    pub status: LmStatus,
    /// χ² after every accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

const LAMBDA_MAX: f64 = 1e16;

struct Internal<'a, R: Residuals> {
    problem: &'a R,
    bounds: &'a [Bound],
}

impl<R: Residuals> Internal<'_, R> {
    fn external(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(u.len(), u.iter().zip(self.bounds).map(|(x, b)| b.to_external(*x)))
    }

    fn residuals(&self, u: &DVector<f64>) -> DVector<f64> {
        self.problem.residuals(&self.external(u))
    }

    fn jacobian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let mut j = self.problem.jacobian(&self.external(u));
        for (c, (x, b)) in u.iter().zip(self.bounds).enumerate() {
            let d = b.derivative(*x);
            j.column_mut(c).scale_mut(d);
        }
        j
    }
}

/// Minimize ‖r(p)‖² from `p0` with each parameter confined to its bound.
pub fn minimize<R: Residuals>(
    problem: &R,
    p0: &DVector<f64>,
    bounds: &[Bound],
    opts: &LmOptions,
) -> LmOutcome {
    assert_eq!(p0.len(), bounds.len(), "one bound per parameter");
    let sys = Internal { problem, bounds };
    let n = p0.len();
    let mut u = DVector::from_iterator(n, p0.iter().zip(bounds).map(|(p, b)| b.to_internal(*p)));
    let mut r = sys.residuals(&u);
    let mut chi2 = r.norm_squared();
    let mut lambda = opts.lambda0;
    let mut history = vec![chi2];
    let mut gradient_norm = f64::INFINITY;
    let mut status = LmStatus::MaxIter;
    let mut iterations = 0;

    if n == 0 {
        return LmOutcome {
            params: p0.clone(),
            chi2,
            iterations,
            gradient_norm: 0.0,
            lambda,
            status: LmStatus::Converged,
            history,
        };
    }

    'outer: while iterations < opts.max_iter {
        iterations += 1;
        let j = sys.jacobian(&u);
        let jt = j.transpose();
        let a = &jt * &j;
        let g = &jt * &r;
        gradient_norm = g.norm();
        if gradient_norm < opts.gtol || chi2 == 0.0 {
            status = LmStatus::Converged;
            break;
        }
        let diag_max = a.diagonal().iter().cloned().fold(0.0, f64::max);
        if !(diag_max > 0.0) {
            status = LmStatus::Singular;
            break;
        }
        let floor = 1e-12 * diag_max;

        loop {
            let mut damped = a.clone();
            for k in 0..n {
                damped[(k, k)] += lambda * a[(k, k)].max(floor);
            }
            let step = damped.cholesky().map(|c| c.solve(&(-&g)));
            if let Some(delta) = step {
                let trial = &u + &delta;
                let r_trial = sys.residuals(&trial);
                let chi2_trial = r_trial.norm_squared();
                if chi2_trial.is_finite() && chi2_trial < chi2 {
                    let rel = (chi2 - chi2_trial) / chi2;
                    u = trial;
                    r = r_trial;
                    chi2 = chi2_trial;
                    history.push(chi2);
                    lambda = (lambda / opts.lambda_down).max(1e-300);
                    if rel < opts.ftol {
                        status = LmStatus::Converged;
                        break 'outer;
                    }
                    continue 'outer;
                }
            }
            lambda *= opts.lambda_up;
            if lambda > LAMBDA_MAX {
                // No representable descent step is left.
                status = LmStatus::Converged;
                break 'outer;
            }
        }
    }

    LmOutcome {
        params: sys.external(&u),
        chi2,
        iterations,
        gradient_norm,
        lambda,
        status,
        history,
    }
}

/// s²(JᵀJ)⁻¹ in external coordinates, s² = χ²/dof.
pub fn covariance(jacobian: &DMatrix<f64>, chi2: f64, dof: usize) -> (DMatrix<f64>, bool) {
    let s2 = if dof > 0 { chi2 / dof as f64 } else { f64::NAN };
    let (inv, singular) = normal_inverse(jacobian);
    (inv * s2, singular)
}

/// (JᵀJ)⁻¹. Falls back to an SVD pseudo-inverse, returning `singular = true`,
/// when the column-normalized normal matrix is numerically rank deficient.
pub fn normal_inverse(jacobian: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let n = jacobian.ncols();
    let a = jacobian.transpose() * jacobian;
    let scale: Vec<f64> = (0..n).map(|k| a[(k, k)].sqrt()).collect();
    let mut singular = scale.iter().any(|s| !(*s > 0.0));
    let normed = DMatrix::from_fn(n, n, |i, j| a[(i, j)] / (scale[i] * scale[j]));
    if !singular {
        let eig = SymmetricEigen::new(normed.clone());
        let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        singular = !(min > 1e-12 * max);
    }
    let inv = if singular {
        a.clone()
            .svd(true, true)
            .pseudo_inverse(1e-12 * a.norm())
            .unwrap_or_else(|_| DMatrix::zeros(n, n))
    } else {
        let inv_n = normed
            .cholesky()
            .map(|c| c.inverse())
            .unwrap_or_else(|| DMatrix::zeros(n, n));
        DMatrix::from_fn(n, n, |i, j| inv_n[(i, j)] / (scale[i] * scale[j]))
    };
    (inv, singular)
}

/// Central finite-difference Jacobian, used to check analytic ones.
pub fn numeric_jacobian<R: Residuals>(problem: &R, p: &DVector<f64>, rel_step: f64) -> DMatrix<f64> {
    let m = problem.n_residuals();
    let mut j = DMatrix::zeros(m, p.len());
    for k in 0..p.len() {
        let h = rel_step * p[k].abs().max(1.0);
        let mut hi = p.clone();
        let mut lo = p.clone();
        hi[k] += h;
        lo[k] -= h;
        let d = (problem.residuals(&hi) - problem.residuals(&lo)) / (2.0 * h);
        j.set_column(k, &d);
    }
    j
}
