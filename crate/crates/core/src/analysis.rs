//! Market selection by Pearson correlation and the augmented Dickey–Fuller
//! stationarity test.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::MarketId;
use crate::ingest::PricePanel;
use crate::linalg::{lstsq, LinalgError, Matrix};
use crate::scalar::{mean, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("need at least {needed} observations, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("market {0} has zero variance")]
    ConstantColumn(MarketId),
    #[error("series has zero variance")]
    ConstantSeries,
    #[error("market {0} is not in the correlation matrix")]
    UnknownTarget(MarketId),
    #[error("regression failed: {0}")]
    Regression(#[from] LinalgError),
}

/// Sample Pearson correlation. `None` when either input has zero variance.
pub fn pearson<T: Scalar>(x: &[T], y: &[T]) -> Option<T> {
    assert_eq!(x.len(), y.len());
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= T::zero() || syy <= T::zero() {
        return None;
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Some(r.max(-T::one()).min(T::one()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub markets: Vec<MarketId>,
    pub r: Matrix<f64>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &MarketId, b: &MarketId) -> Option<f64> {
        let i = self.markets.iter().position(|m| m == a)?;
        let j = self.markets.iter().position(|m| m == b)?;
        Some(self.r[(i, j)])
    }

    /// Markets × markets CSV with a leading `market` column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("market");
        for m in &self.markets {
            out.push(',');
            out.push_str(m.as_str());
        }
        out.push('\n');
        for (i, m) in self.markets.iter().enumerate() {
            out.push_str(m.as_str());
            for j in 0..self.markets.len() {
                out.push_str(&format!(",{:.6}", self.r[(i, j)]));
            }
            out.push('\n');
        }
        out
    }
}

/// Correlation between the columns of a samples × variables matrix.
/// Returns the index of the first constant column on failure.
pub fn correlation_of_columns<T: Scalar>(data: &Matrix<T>) -> Result<Matrix<T>, usize> {
    let k = data.cols();
    let cols: Vec<Vec<T>> = (0..k).map(|j| data.column(j)).collect();
    let mut r = Matrix::identity(k);
    for (j, c) in cols.iter().enumerate() {
        if pearson(c, c).is_none() {
            return Err(j);
        }
    }
    for i in 0..k {
        for j in (i + 1)..k {
            let v = pearson(&cols[i], &cols[j]).expect("variance checked");
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    Ok(r)
}

pub fn pearson_matrix(panel: &PricePanel) -> Result<CorrelationMatrix, AnalysisError> {
    if panel.n_weeks() < 3 {
        return Err(AnalysisError::TooShort { needed: 3, got: panel.n_weeks() });
    }
    let r = correlation_of_columns(&panel.to_matrix::<f64>())
        .map_err(|j| AnalysisError::ConstantColumn(panel.markets()[j].clone()))?;
    Ok(CorrelationMatrix { markets: panel.markets().to_vec(), r })
}

/// `target` followed by every market whose correlation with it exceeds
/// `threshold`, strongest first.
pub fn select_markets(
    m: &CorrelationMatrix,
    target: &MarketId,
    threshold: f64,
) -> Result<Vec<MarketId>, AnalysisError> {
    let ti = m
        .markets
        .iter()
        .position(|x| x == target)
        .ok_or_else(|| AnalysisError::UnknownTarget(target.clone()))?;
    let mut others: Vec<(usize, f64)> = (0..m.markets.len())
        .filter(|&j| j != ti)
        .map(|j| (j, m.r[(ti, j)]))
        .filter(|&(_, r)| r > threshold)
        .collect();
    // stable: equal correlations keep panel order
    others.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut out = vec![target.clone()];
    out.extend(others.into_iter().map(|(j, _)| m.markets[j].clone()));
    Ok(out)
}

pub const DEFAULT_CORRELATION_THRESHOLD: f64 = 0.98;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Significance {
    #[serde(rename = "1%")]
    OnePercent,
    #[serde(rename = "5%")]
    FivePercent,
    #[serde(rename = "10%")]
    TenPercent,
}

impl Significance {
    pub const ALL: [Significance; 3] = [Self::OnePercent, Self::FivePercent, Self::TenPercent];

    pub fn label(&self) -> &'static str {
        match self {
            Self::OnePercent => "1%",
            Self::FivePercent => "5%",
            Self::TenPercent => "10%",
        }
    }
}

/// Response-surface coefficients for the constant-only Dickey–Fuller
/// critical values: `cv(T) = b0 + b1/T + b2/T² + b3/T³`.
const DF_CONSTANT_SURFACE: [(Significance, [f64; 4]); 3] = [
    (Significance::OnePercent, [-3.43035, -6.5393, -16.786, -79.433]),
    (Significance::FivePercent, [-2.86154, -2.8903, -4.234, -40.040]),
    (Significance::TenPercent, [-2.56677, -1.5384, -2.809, 0.0]),
];

/// Constant-only Dickey–Fuller critical value for a regression on `nobs`
/// observations.
pub fn df_critical_value(level: Significance, nobs: usize) -> f64 {
    let b = DF_CONSTANT_SURFACE.iter().find(|(l, _)| *l == level).expect("all levels tabulated").1;
    let t = nobs as f64;
    b[0] + b[1] / t + b[2] / (t * t) + b[3] / (t * t * t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdfResult {
    pub statistic: f64,
    pub lags_used: usize,
    pub nobs: usize,
    pub critical_values: Vec<(Significance, f64)>,
    /// Levels at which the unit root is rejected, smallest first.
    pub reject_at: Vec<Significance>,
}

impl AdfResult {
    pub fn rejects(&self, level: Significance) -> bool {
        self.reject_at.contains(&level)
    }
}

/// Default maximum lag `floor(12·(n/100)^¼)`.
pub fn default_max_lag(n: usize) -> usize {
    (12.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize
}

/// Builds the ADF regression `Δy_t = c + γ·y_{t−1} + Σ φ_i·Δy_{t−i}` with
/// `lags` augmentation terms over rows `first..` of the differenced series.
/// Column order: constant, level, lagged differences.
pub fn adf_design<T: Scalar>(y: &[T], lags: usize, first: usize) -> (Matrix<T>, Vec<T>) {
    let dy: Vec<T> = y.windows(2).map(|w| w[1] - w[0]).collect();
    let rows = dy.len() - first;
    let mut x = Matrix::zeros(rows, lags + 2);
    let mut target = Vec::with_capacity(rows);
    for (r, t) in (first..dy.len()).enumerate() {
        x[(r, 0)] = T::one();
        x[(r, 1)] = y[t];
        for i in 1..=lags {
            x[(r, 1 + i)] = dy[t - i];
        }
        target.push(dy[t]);
    }
    (x, target)
}

/// Augmented Dickey–Fuller test with a constant and no trend. The lag order
/// is chosen by AIC over `0..=max_lag` on a common sample, then the chosen
/// regression is re-estimated on all rows available to it.
pub fn adf_test<T: Scalar>(series: &[T], max_lag: Option<usize>) -> Result<AdfResult, AnalysisError> {
    let n = series.len();
    let max_lag = max_lag.unwrap_or_else(|| default_max_lag(n));
    if n < max_lag + 10 {
        return Err(AnalysisError::TooShort { needed: max_lag + 10, got: n });
    }
    let m = mean(series);
    if series.iter().all(|&v| v == m) || series.windows(2).all(|w| w[0] == w[1]) {
        return Err(AnalysisError::ConstantSeries);
    }
    let mut best: Option<(usize, f64)> = None;
    for k in 0..=max_lag {
        let (x, dy) = adf_design(series, k, max_lag);
        let Ok(fit) = lstsq(&x, &dy) else { continue };
        let nobs = dy.len() as f64;
        let ssr = fit.ssr.to_f64_lossy().max(f64::MIN_POSITIVE);
        let aic = nobs * (ssr / nobs).ln() + 2.0 * (k + 2) as f64;
        if best.is_none_or(|(_, a)| aic < a) {
            best = Some((k, aic));
        }
    }
    let lags = best.map(|(k, _)| k).ok_or(AnalysisError::ConstantSeries)?;
    let (x, dy) = adf_design(series, lags, lags);
    let fit = lstsq(&x, &dy)?;
    let se = fit.std_error(1);
    if !(se > T::zero()) {
        return Err(AnalysisError::ConstantSeries);
    }
    let statistic = (fit.coefficients[1] / se).to_f64_lossy();
    let nobs = dy.len();
    let critical_values: Vec<(Significance, f64)> =
        Significance::ALL.iter().map(|&l| (l, df_critical_value(l, nobs))).collect();
    let reject_at = critical_values.iter().filter(|(_, cv)| statistic < *cv).map(|(l, _)| *l).collect();
    Ok(AdfResult { statistic, lags_used: lags, nobs, critical_values, reject_at })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0];
        assert!((pearson(&x, &x).unwrap() - 1.0f64).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        // x̃ = (−1,0,1), ỹ = (−7/6,−1/6,4/3): r = 2.5/√(2·(49+1+64)/36) = 2.5/√(228/36)
        let r = pearson(&x, &[1.0, 2.0, 3.5]).unwrap();
        assert!((r - 2.5 / (228.0f64 / 36.0).sqrt()).abs() < 1e-12);
        assert!((r - 0.9934).abs() < 5e-5);
        assert!(pearson(&x, &[2.0, 2.0, 2.0]).is_none());
    }

    #[test]
    fn critical_values_are_ordered() {
        for n in [25, 100, 300, 10_000] {
            let c1 = df_critical_value(Significance::OnePercent, n);
            let c5 = df_critical_value(Significance::FivePercent, n);
            let c10 = df_critical_value(Significance::TenPercent, n);
            assert!(c1 < c5 && c5 < c10);
        }
        assert!((df_critical_value(Significance::FivePercent, 1_000_000) + 2.86154).abs() < 1e-4);
    }

    #[test]
    fn adf_rejects_constant_and_short() {
        assert_eq!(adf_test(&[1.5; 50], Some(2)), Err(AnalysisError::ConstantSeries));
        let short: Vec<f64> = (0..8).map(|i| i as f64).collect();
        assert!(matches!(adf_test(&short, Some(2)), Err(AnalysisError::TooShort { .. })));
    }

    #[test]
    fn default_lag_rule() {
        assert_eq!(default_max_lag(100), 12);
        assert_eq!(default_max_lag(322), 16);
    }
}
