//! Single-series seasonal ARIMA estimated by conditional sum of squares.
//!
//! The model for the differenced series `w = (1−B)^d (1−B^M)^D y` is
//!
//! ```text
//! φ(B) Φ(B^M) w_t = c + θ(B) Θ(B^M) ε_t
//! ```
//!
//! with `φ(B) = 1 − Σ φ_i B^i` and `θ(B) = 1 + Σ θ_j B^j`. No exogenous
//! regressors are supported. Everything here runs on `f64`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{derive_seed, ModelError};
use crate::linalg::{lstsq, Matrix};
use crate::optim::{nelder_mead, NelderMeadOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SarimaSpec {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    #[serde(rename = "P")]
    pub seasonal_p: usize,
    #[serde(rename = "D")]
    pub seasonal_d: usize,
    #[serde(rename = "Q")]
    pub seasonal_q: usize,
    #[serde(rename = "M")]
    pub period: usize,
}

impl SarimaSpec {
    pub const MAX_TOTAL_DIFFERENCING: usize = 3;

    pub fn arima(p: usize, d: usize, q: usize) -> Self {
        Self { p, d, q, seasonal_p: 0, seasonal_d: 0, seasonal_q: 0, period: 1 }
    }

    pub fn seasonal(self, p: usize, d: usize, q: usize, period: usize) -> Self {
        Self { seasonal_p: p, seasonal_d: d, seasonal_q: q, period, ..self }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.period == 0 {
            return Err(ModelError::InvalidSpec("seasonal period must be at least 1".into()));
        }
        if self.period == 1 && (self.seasonal_p + self.seasonal_d + self.seasonal_q) > 0 {
            return Err(ModelError::InvalidSpec("seasonal orders need a period above 1".into()));
        }
        if self.d + self.seasonal_d > Self::MAX_TOTAL_DIFFERENCING {
            return Err(ModelError::InvalidSpec(format!(
                "d + D = {} exceeds {}",
                self.d + self.seasonal_d,
                Self::MAX_TOTAL_DIFFERENCING
            )));
        }
        Ok(())
    }

    /// Number of observations consumed by differencing.
    pub fn differencing_loss(&self) -> usize {
        self.d + self.seasonal_d * self.period
    }

    pub fn n_coefficients(&self) -> usize {
        self.p + self.q + self.seasonal_p + self.seasonal_q
    }

    /// Highest lag of the expanded AR polynomial.
    pub fn ar_lags(&self) -> usize {
        self.p + self.seasonal_p * self.period
    }

    /// Highest lag of the expanded MA polynomial.
    pub fn ma_lags(&self) -> usize {
        self.q + self.seasonal_q * self.period
    }

    pub fn label(&self) -> String {
        if self.period == 1 {
            format!("({},{},{})", self.p, self.d, self.q)
        } else {
            format!(
                "({},{},{})({},{},{}){}",
                self.p, self.d, self.q, self.seasonal_p, self.seasonal_d, self.seasonal_q, self.period
            )
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SarimaModel {
    pub spec: SarimaSpec,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub seasonal_ar: Vec<f64>,
    pub seasonal_ma: Vec<f64>,
    pub constant: f64,
    pub has_constant: bool,
    /// Conditional residuals on the differenced scale, one per usable
    /// observation after the AR start-up.
    pub residuals: Vec<f64>,
    /// Last `differencing_loss + max(ar_lags, ma_lags)` observations on the
    /// original scale.
    pub training_tail: Vec<f64>,
    pub css: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SarimaOptions {
    /// `None` includes a constant exactly when the spec does no differencing.
    pub include_constant: Option<bool>,
    pub restarts: usize,
    /// Use the simplex search even where least squares is exact.
    pub force_simplex: bool,
    pub simplex: NelderMeadOptions,
}

impl Default for SarimaOptions {
    fn default() -> Self {
        Self {
            include_constant: None,
            restarts: 5,
            force_simplex: false,
            simplex: NelderMeadOptions { max_evals: 4000, f_tol: 1e-14, x_tol: 1e-9 },
        }
    }
}

/// Coefficients of `(1−B)^d (1−B^M)^D` as a polynomial in `B`, constant term
/// first.
pub fn difference_polynomial(d: usize, seasonal_d: usize, period: usize) -> Vec<f64> {
    let mut poly = vec![1.0];
    for _ in 0..d {
        poly = poly_mul(&poly, &[1.0, -1.0]);
    }
    let mut seasonal = vec![0.0; period + 1];
    seasonal[0] = 1.0;
    seasonal[period] = -1.0;
    for _ in 0..seasonal_d {
        poly = poly_mul(&poly, &seasonal);
    }
    poly
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Applies `(1−B)^d (1−B^M)^D`; the result is shorter by `d + D·M`.
pub fn difference(series: &[f64], d: usize, seasonal_d: usize, period: usize) -> Vec<f64> {
    let poly = difference_polynomial(d, seasonal_d, period);
    let k = poly.len() - 1;
    if series.len() <= k {
        return Vec::new();
    }
    (k..series.len()).map(|t| poly.iter().enumerate().map(|(i, &c)| c * series[t - i]).sum()).collect()
}

/// Inverts [`difference`] for values following `history`:
/// `y_t = w_t − Σ_{k≥1} δ_k y_{t−k}`.
pub fn integrate(future_w: &[f64], history: &[f64], d: usize, seasonal_d: usize, period: usize) -> Vec<f64> {
    let poly = difference_polynomial(d, seasonal_d, period);
    let k = poly.len() - 1;
    assert!(history.len() >= k, "integration needs {k} past levels");
    let mut levels: Vec<f64> = history[history.len() - k..].to_vec();
    let mut out = Vec::with_capacity(future_w.len());
    for &w in future_w {
        let t = levels.len();
        let y = w - (1..=k).map(|i| poly[i] * levels[t - i]).sum::<f64>();
        levels.push(y);
        out.push(y);
    }
    out
}

/// Parameters unpacked from the flat layout `[φ, θ, Φ, Θ, c?]`.
struct Unpacked<'a> {
    ar: &'a [f64],
    ma: &'a [f64],
    sar: &'a [f64],
    sma: &'a [f64],
    constant: f64,
}

fn unpack<'a>(spec: &SarimaSpec, params: &'a [f64]) -> Unpacked<'a> {
    let (ar, rest) = params.split_at(spec.p);
    let (ma, rest) = rest.split_at(spec.q);
    let (sar, rest) = rest.split_at(spec.seasonal_p);
    let (sma, rest) = rest.split_at(spec.seasonal_q);
    Unpacked { ar, ma, sar, sma, constant: rest.first().copied().unwrap_or(0.0) }
}

/// Expanded AR lag coefficients `a_k` with `φ(B)Φ(B^M) = 1 − Σ a_k B^k`.
fn expanded_ar(ar: &[f64], sar: &[f64], period: usize) -> Vec<f64> {
    let mut nonseasonal = vec![1.0];
    nonseasonal.extend(ar.iter().map(|v| -v));
    let mut seasonal = vec![0.0; sar.len() * period + 1];
    seasonal[0] = 1.0;
    for (i, v) in sar.iter().enumerate() {
        seasonal[(i + 1) * period] = -v;
    }
    poly_mul(&nonseasonal, &seasonal)[1..].iter().map(|v| -v).collect()
}

/// Expanded MA lag coefficients `b_k` with `θ(B)Θ(B^M) = 1 + Σ b_k B^k`.
fn expanded_ma(ma: &[f64], sma: &[f64], period: usize) -> Vec<f64> {
    let mut nonseasonal = vec![1.0];
    nonseasonal.extend_from_slice(ma);
    let mut seasonal = vec![0.0; sma.len() * period + 1];
    seasonal[0] = 1.0;
    for (i, &v) in sma.iter().enumerate() {
        seasonal[(i + 1) * period] = v;
    }
    poly_mul(&nonseasonal, &seasonal)[1..].to_vec()
}

/// True when `1 − Σ a_i z^i` has all roots outside the unit circle,
/// checked by stepping down to reflection coefficients.
pub fn is_stationary(ar: &[f64]) -> bool {
    let mut a: Vec<f64> = ar.to_vec();
    while let Some(&k) = a.last() {
        if !k.is_finite() || k.abs() >= 1.0 {
            return false;
        }
        let p = a.len();
        let denom = 1.0 - k * k;
        let next: Vec<f64> = (0..p - 1).map(|i| (a[i] + k * a[p - 2 - i]) / denom).collect();
        a = next;
    }
    true
}

/// Conditional residuals on the differenced series `w`. Returns `None` for
/// explosive AR parameters or non-finite intermediates.
fn conditional_residuals(w: &[f64], spec: &SarimaSpec, params: &[f64]) -> Option<Vec<f64>> {
    let u = unpack(spec, params);
    if !is_stationary(u.ar) || !is_stationary(u.sar) {
        return None;
    }
    let a = expanded_ar(u.ar, u.sar, spec.period);
    let b = expanded_ma(u.ma, u.sma, spec.period);
    let start = a.len();
    let mut eps = vec![0.0; w.len()];
    for t in start..w.len() {
        let mut e = w[t] - u.constant;
        for (k, &ak) in a.iter().enumerate() {
            e -= ak * w[t - 1 - k];
        }
        for (k, &bk) in b.iter().enumerate() {
            if t > k {
                e -= bk * eps[t - 1 - k];
            }
        }
        if !e.is_finite() {
            return None;
        }
        eps[t] = e;
    }
    Some(eps.split_off(start))
}

fn uses_constant(spec: &SarimaSpec, opts: &SarimaOptions) -> bool {
    opts.include_constant.unwrap_or(spec.d + spec.seasonal_d == 0)
}

fn param_len(spec: &SarimaSpec, constant: bool) -> usize {
    spec.n_coefficients() + usize::from(constant)
}

/// Conditional sum of squares of the one-step residuals for `params` laid
/// out as `[φ, θ, Φ, Θ, c]`, where the trailing constant is present exactly
/// when the spec does no differencing. Explosive AR parameters and
/// non-finite intermediates give `+∞`.
pub fn css_objective(series: &[f64], spec: &SarimaSpec, params: &[f64]) -> f64 {
    let constant = uses_constant(spec, &SarimaOptions::default());
    css_objective_with(series, spec, params, constant)
}

pub fn css_objective_with(series: &[f64], spec: &SarimaSpec, params: &[f64], constant: bool) -> f64 {
    assert_eq!(params.len(), param_len(spec, constant), "parameter vector length");
    let w = difference(series, spec.d, spec.seasonal_d, spec.period);
    let mut full = params.to_vec();
    if !constant {
        full.push(0.0);
    }
    css_on_differenced(&w, spec, &full)
}

/// `params` always carries the constant slot.
fn css_on_differenced(w: &[f64], spec: &SarimaSpec, params: &[f64]) -> f64 {
    match conditional_residuals(w, spec, params) {
        Some(eps) => {
            let s: f64 = eps.iter().map(|e| e * e).sum();
            if s.is_finite() { s } else { f64::INFINITY }
        }
        None => f64::INFINITY,
    }
}

pub fn sarima_fit(series: &[f64], spec: SarimaSpec, seed: u64) -> Result<SarimaModel, ModelError> {
    sarima_fit_with(series, spec, seed, &SarimaOptions::default())
}

pub fn sarima_fit_with(
    series: &[f64],
    spec: SarimaSpec,
    seed: u64,
    opts: &SarimaOptions,
) -> Result<SarimaModel, ModelError> {
    spec.validate()?;
    if series.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("series".into()));
    }
    let w = difference(series, spec.d, spec.seasonal_d, spec.period);
    let needed = 10 * (spec.n_coefficients() + 1);
    let usable = w.len().saturating_sub(spec.ar_lags());
    if w.len() < needed || usable == 0 {
        return Err(ModelError::InsufficientData { needed: needed + spec.differencing_loss(), got: series.len() });
    }
    let constant = uses_constant(&spec, opts);
    let n_params = param_len(&spec, constant);
    // full layout always carries a constant slot; it stays 0 when unused
    let full = |x: &[f64]| -> Vec<f64> {
        let mut v = x.to_vec();
        if !constant {
            v.push(0.0);
        }
        v
    };

    let least_squares_exact = spec.q == 0 && spec.seasonal_q == 0 && (spec.p == 0 || spec.seasonal_p == 0);
    let params: Vec<f64> = if n_params == 0 {
        Vec::new()
    } else if least_squares_exact && !opts.force_simplex {
        ar_least_squares(&w, &spec, constant)?
    } else {
        let x0 = initial_point(&w, &spec, constant);
        let objective = |x: &[f64]| css_on_differenced(&w, &spec, &full(x));
        let step: Vec<f64> = x0.iter().map(|v| 0.1 * v.abs().max(0.5)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5A21));
        let noise = Normal::new(0.0, 0.1).expect("valid sd");
        let mut best: Option<(Vec<f64>, f64)> = None;
        for r in 0..opts.restarts.max(1) {
            let start: Vec<f64> = if r == 0 {
                x0.clone()
            } else {
                x0.iter().map(|v| v + noise.sample(&mut rng)).collect()
            };
            let res = nelder_mead(objective, &start, &step, opts.simplex);
            // polish from the result with a fresh simplex
            let res = nelder_mead(objective, &res.x, &step.iter().map(|s| s * 0.1).collect::<Vec<_>>(), opts.simplex);
            if best.as_ref().is_none_or(|(_, f)| res.f < *f) {
                best = Some((res.x, res.f));
            }
        }
        let (x, f) = best.expect("at least one restart");
        if !f.is_finite() {
            return Err(ModelError::NonFiniteObjective(format!("{x:?}")));
        }
        x
    };

    let full_params = full(&params);
    let residuals = conditional_residuals(&w, &spec, &full_params)
        .ok_or_else(|| ModelError::NonFiniteObjective(format!("{params:?}")))?;
    let css = residuals.iter().map(|e| e * e).sum();
    let u = unpack(&spec, &full_params);
    let tail_len = (spec.differencing_loss() + spec.ar_lags().max(spec.ma_lags())).min(series.len());
    Ok(SarimaModel {
        spec,
        ar: u.ar.to_vec(),
        ma: u.ma.to_vec(),
        seasonal_ar: u.sar.to_vec(),
        seasonal_ma: u.sma.to_vec(),
        constant: u.constant,
        has_constant: constant,
        residuals,
        training_tail: series[series.len() - tail_len..].to_vec(),
        css,
        seed,
    })
}

/// Exact CSS minimizer when the expanded AR polynomial is linear in the
/// parameters: regress `w_t` on its lags (and a constant).
fn ar_least_squares(w: &[f64], spec: &SarimaSpec, constant: bool) -> Result<Vec<f64>, ModelError> {
    let lags: Vec<usize> = if spec.p > 0 {
        (1..=spec.p).collect()
    } else {
        (1..=spec.seasonal_p).map(|i| i * spec.period).collect()
    };
    let start = spec.ar_lags();
    let rows = w.len() - start;
    let cols = lags.len() + usize::from(constant);
    let mut x = Matrix::zeros(rows, cols);
    let mut y = Vec::with_capacity(rows);
    for (r, t) in (start..w.len()).enumerate() {
        for (j, &l) in lags.iter().enumerate() {
            x[(r, j)] = w[t - l];
        }
        if constant {
            x[(r, lags.len())] = 1.0;
        }
        y.push(w[t]);
    }
    let fit = lstsq(&x, &y).map_err(|e| ModelError::Singular(e.to_string()))?;
    // layout [φ, Φ, c] matches [φ, θ, Φ, Θ, c] since q = Q = 0
    Ok(fit.coefficients)
}

/// Least-squares AR coefficients (seasonal AR and MA terms start at 0) and a
/// constant consistent with the sample mean.
fn initial_point(w: &[f64], spec: &SarimaSpec, constant: bool) -> Vec<f64> {
    let mut ar = vec![0.0; spec.p];
    if spec.p > 0 && w.len() > 2 * spec.p + 2 {
        let sub = SarimaSpec::arima(spec.p, 0, 0);
        if let Ok(c) = ar_least_squares(w, &sub, false) {
            if is_stationary(&c) {
                ar = c;
            }
        }
    }
    let mut x = ar.clone();
    x.extend(std::iter::repeat_n(0.0, spec.q + spec.seasonal_p + spec.seasonal_q));
    if constant {
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        x.push(mean * (1.0 - ar.iter().sum::<f64>()));
    }
    x
}

impl SarimaModel {
    fn params(&self) -> Vec<f64> {
        let mut v = self.ar.clone();
        v.extend_from_slice(&self.ma);
        v.extend_from_slice(&self.seasonal_ar);
        v.extend_from_slice(&self.seasonal_ma);
        v.push(self.constant);
        v
    }

    /// Forecasts the differenced series `steps` ahead from the end of
    /// training with future shocks set to zero.
    pub fn forecast_differenced(&self, steps: usize) -> Vec<f64> {
        let s = &self.spec;
        let w_tail = difference(&self.training_tail, s.d, s.seasonal_d, s.period);
        forecast_w(&w_tail, &self.residuals, self, steps)
    }
}

fn forecast_w(w_hist: &[f64], eps_hist: &[f64], m: &SarimaModel, steps: usize) -> Vec<f64> {
    let a = expanded_ar(&m.ar, &m.seasonal_ar, m.spec.period);
    let b = expanded_ma(&m.ma, &m.seasonal_ma, m.spec.period);
    let mut w = w_hist.to_vec();
    let mut eps = eps_hist.to_vec();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let t = w.len();
        let mut v = m.constant;
        for (k, &ak) in a.iter().enumerate() {
            if t > k {
                v += ak * w[t - 1 - k];
            }
        }
        let te = eps.len();
        for (k, &bk) in b.iter().enumerate() {
            if te > k {
                v += bk * eps[te - 1 - k];
            }
        }
        w.push(v);
        eps.push(0.0);
        out.push(v);
    }
    out
}

/// Iterated forecasts `steps` ahead on the original scale.
pub fn sarima_forecast(m: &SarimaModel, steps: usize) -> Vec<f64> {
    assert!(steps >= 1, "at least one step");
    let s = &m.spec;
    let w = m.forecast_differenced(steps);
    integrate(&w, &m.training_tail, s.d, s.seasonal_d, s.period)
}

/// Iterated forecasts `steps` past the end of `series`, which may extend
/// beyond the training data; the fitted coefficients are kept.
pub fn sarima_forecast_from(m: &SarimaModel, series: &[f64], steps: usize) -> Vec<f64> {
    assert!(steps >= 1, "at least one step");
    let s = &m.spec;
    let w = difference(series, s.d, s.seasonal_d, s.period);
    let eps = conditional_residuals(&w, s, &m.params()).unwrap_or_default();
    let fw = forecast_w(&w, &eps, m, steps);
    integrate(&fw, series, s.d, s.seasonal_d, s.period)
}

/// One-step-ahead predictions for every observation of `series` using the
/// fitted coefficients (no refitting). Entries that cannot be predicted
/// because they fall in the differencing or AR start-up are `None`.
pub fn one_step_ahead(m: &SarimaModel, series: &[f64]) -> Vec<Option<f64>> {
    let s = &m.spec;
    let w = difference(series, s.d, s.seasonal_d, s.period);
    let mut out = vec![None; series.len()];
    let Some(eps) = conditional_residuals(&w, s, &m.params()) else {
        return out;
    };
    let offset = series.len() - eps.len();
    for (i, e) in eps.iter().enumerate() {
        out[offset + i] = Some(series[offset + i] - e);
    }
    out
}
