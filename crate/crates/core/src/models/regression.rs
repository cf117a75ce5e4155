//! Ridge regression and linear ε-insensitive support vector regression.

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::linalg::{Cholesky, Matrix};
use crate::scalar::{dot, mean, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearFamily {
    Ridge,
    LinearSvr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LinearHyperparams {
    Ridge { alpha: f64 },
    Svr { c: f64, epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel<T: Scalar = f64> {
    pub family: LinearFamily,
    pub hyperparams: LinearHyperparams,
    pub weights: Vec<T>,
    pub intercept: T,
    pub seed: u64,
}

fn check_xy<T: Scalar>(x: &Matrix<T>, y: &[T]) -> Result<(), ModelError> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(ModelError::EmptyInput);
    }
    if y.len() != x.rows() {
        return Err(ModelError::Dimension { expected: x.rows(), got: y.len() });
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("training data".into()));
    }
    Ok(())
}

fn column_means<T: Scalar>(x: &Matrix<T>) -> Vec<T> {
    let mut m = vec![T::zero(); x.cols()];
    for r in x.iter_rows() {
        for (a, &v) in m.iter_mut().zip(r) {
            *a += v;
        }
    }
    let n = T::from_usize_lossy(x.rows());
    m.iter_mut().for_each(|v| *v /= n);
    m
}

fn centered<T: Scalar>(x: &Matrix<T>, means: &[T]) -> Matrix<T> {
    let mut c = x.clone();
    for i in 0..c.rows() {
        for (v, &m) in c.row_mut(i).iter_mut().zip(means) {
            *v -= m;
        }
    }
    c
}

/// Minimizes `‖y − Xw − b‖² + α‖w‖²` with an unpenalized intercept by
/// centering and a Cholesky solve of `(XcᵀXc + αI) w = Xcᵀyc`.
pub fn ridge_fit<T: Scalar>(x: &Matrix<T>, y: &[T], alpha: T) -> Result<LinearModel<T>, ModelError> {
    check_xy(x, y)?;
    if !(alpha >= T::zero()) || !alpha.is_finite() {
        return Err(ModelError::InvalidHyperparameter(format!("alpha = {alpha}")));
    }
    let xm = column_means(x);
    let ym = mean(y);
    let xc = centered(x, &xm);
    let yc: Vec<T> = y.iter().map(|&v| v - ym).collect();
    let mut a = xc.gram();
    for i in 0..a.rows() {
        a[(i, i)] += alpha;
    }
    let rhs = xc.t_mul_vec(&yc);
    let weights = Cholesky::factor(&a).map_err(|e| ModelError::Singular(e.to_string()))?.solve(&rhs);
    let intercept = ym - dot(&xm, &weights);
    if weights.iter().any(|w| !w.is_finite()) || !intercept.is_finite() {
        return Err(ModelError::NonFinite("ridge solution".into()));
    }
    Ok(LinearModel {
        family: LinearFamily::Ridge,
        hyperparams: LinearHyperparams::Ridge { alpha: alpha.to_f64_lossy() },
        weights,
        intercept,
        seed: 0,
    })
}

/// Ridge objective `‖y − Xw − b‖² + α‖w‖²`.
pub fn ridge_objective<T: Scalar>(x: &Matrix<T>, y: &[T], w: &[T], b: T, alpha: T) -> T {
    let sse: T = x.iter_rows().zip(y).map(|(r, &t)| (t - dot(r, w) - b).powi(2)).sum();
    sse + alpha * dot(w, w)
}

pub fn linear_predict<T: Scalar>(m: &LinearModel<T>, x: &Matrix<T>) -> Result<Vec<T>, ModelError> {
    if x.cols() != m.weights.len() {
        return Err(ModelError::Dimension { expected: m.weights.len(), got: x.cols() });
    }
    Ok(x.iter_rows().map(|r| dot(r, &m.weights) + m.intercept).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvrOptions {
    pub max_iter: usize,
    /// Scale features to unit variance before solving (changes the problem).
    pub standardize: bool,
}

impl Default for SvrOptions {
    fn default() -> Self {
        Self { max_iter: 20_000, standardize: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvrReport {
    pub objective: f64,
    pub iterations: usize,
    /// False when the best objective was still moving in the last half of
    /// the iteration budget.
    pub converged: bool,
}

/// `½‖w‖² + C·Σ max(0, |y − w·x − b| − ε)`.
pub fn svr_objective<T: Scalar>(x: &Matrix<T>, y: &[T], w: &[T], b: T, c: T, epsilon: T) -> T {
    let hinge: T = x
        .iter_rows()
        .zip(y)
        .map(|(r, &t)| ((t - dot(r, w) - b).abs() - epsilon).max(T::zero()))
        .sum();
    T::lit(0.5) * dot(w, w) + c * hinge
}

/// Exact intercept minimizing the ε-insensitive loss of residuals `r − b`:
/// any point between the n-th and (n+1)-th of the pooled `r ± ε`.
fn best_intercept<T: Scalar>(residuals: &[T], epsilon: T, scratch: &mut Vec<T>) -> T {
    let n = residuals.len();
    scratch.clear();
    scratch.extend(residuals.iter().map(|&r| r - epsilon));
    scratch.extend(residuals.iter().map(|&r| r + epsilon));
    let (_, lo, upper) = scratch.select_nth_unstable_by(n - 1, |a, b| a.partial_cmp(b).expect("finite"));
    let lo = *lo;
    let hi = upper.iter().copied().fold(T::infinity(), T::min);
    (lo + hi) * T::lit(0.5)
}

/// Linear SVR in the primal. Full-batch subgradient steps on `w` with step
/// `1/(t+1)` (the regularizer is 1-strongly convex in `w`), the intercept
/// solved exactly at every iterate, and `t`-weighted iterate averaging. The
/// returned point is the better of the averaged and the best-seen iterate.
pub fn svr_fit<T: Scalar>(
    x: &Matrix<T>,
    y: &[T],
    c: T,
    epsilon: T,
    seed: u64,
    opts: SvrOptions,
) -> Result<(LinearModel<T>, SvrReport), ModelError> {
    check_xy(x, y)?;
    if !(c > T::zero()) || !(epsilon >= T::zero()) {
        return Err(ModelError::InvalidHyperparameter(format!("C = {c}, epsilon = {epsilon}")));
    }
    let d = x.cols();
    let xm = column_means(x);
    let mut xc = centered(x, &xm);
    let scale: Vec<T> = if opts.standardize {
        (0..d)
            .map(|j| {
                let col = xc.column(j);
                let sd = (col.iter().map(|&v| v * v).sum::<T>() / T::from_usize_lossy(col.len())).sqrt();
                if sd > T::zero() { sd } else { T::one() }
            })
            .collect()
    } else {
        vec![T::one(); d]
    };
    if opts.standardize {
        for i in 0..xc.rows() {
            for (v, &s) in xc.row_mut(i).iter_mut().zip(&scale) {
                *v /= s;
            }
        }
    }

    let mut scratch = Vec::with_capacity(2 * y.len());
    let mut resid = vec![T::zero(); y.len()];
    let eval = |w: &[T], resid: &mut Vec<T>, scratch: &mut Vec<T>| -> (T, T) {
        for (r, (row, &t)) in resid.iter_mut().zip(xc.iter_rows().zip(y)) {
            *r = t - dot(row, w);
        }
        let b = best_intercept(resid, epsilon, scratch);
        (b, svr_objective(&xc, y, w, b, c, epsilon))
    };

    // Trivial feasible start: w = 0.
    let mut w = vec![T::zero(); d];
    let (b0, f0) = eval(&w, &mut resid, &mut scratch);
    let mut best = (w.clone(), b0, f0);
    let mut avg = vec![T::zero(); d];
    let mut avg_weight = T::zero();
    let half = opts.max_iter / 2;
    let mut best_at_half = f0;
    let mut grad = vec![T::zero(); d];
    for t in 0..opts.max_iter {
        let (b, f) = eval(&w, &mut resid, &mut scratch);
        if f < best.2 {
            best = (w.clone(), b, f);
        }
        if t == half {
            best_at_half = best.2;
        }
        grad.copy_from_slice(&w);
        for (row, &r) in xc.iter_rows().zip(&resid) {
            let e = r - b;
            if e > epsilon {
                for (g, &v) in grad.iter_mut().zip(row) {
                    *g -= c * v;
                }
            } else if e < -epsilon {
                for (g, &v) in grad.iter_mut().zip(row) {
                    *g += c * v;
                }
            }
        }
        let step = T::one() / T::from_usize_lossy(t + 1);
        for (wi, g) in w.iter_mut().zip(&grad) {
            *wi -= step * *g;
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite(format!("svr iterate at step {t}")));
        }
        let weight = T::from_usize_lossy(t + 1);
        avg_weight += weight;
        for (a, &wi) in avg.iter_mut().zip(&w) {
            *a += (wi - *a) * weight / avg_weight;
        }
    }
    let (b_avg, f_avg) = eval(&avg, &mut resid, &mut scratch);
    let (w_std, b_std, objective) = if f_avg <= best.2 { (avg, b_avg, f_avg) } else { best };
    let converged = {
        let fb = objective.to_f64_lossy();
        let drift = (best_at_half.to_f64_lossy() - fb).abs() / fb.abs().max(1e-12);
        drift < 1e-3
    };
    // Undo scaling and centering: w·((x − m)/s) + b = (w/s)·x + b − (w/s)·m
    let weights: Vec<T> = w_std.iter().zip(&scale).map(|(&wi, &s)| wi / s).collect();
    let intercept = b_std - dot(&weights, &xm);
    Ok((
        LinearModel {
            family: LinearFamily::LinearSvr,
            hyperparams: LinearHyperparams::Svr { c: c.to_f64_lossy(), epsilon: epsilon.to_f64_lossy() },
            weights,
            intercept,
            seed,
        },
        SvrReport { objective: objective.to_f64_lossy(), iterations: opts.max_iter, converged },
    ))
}
