//! Accuracy metrics and the public-versus-subscription comparison report.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{IsoWeek, LagScenario, MarketId};
use crate::families::{Forecaster, SeriesContext};
use crate::ingest::PricePanel;
use crate::models::derive_seed;
use crate::scalar::Scalar;
use crate::tuning::{random_search, trial_seed, Params};
use crate::windowing::{train_cut, DEFAULT_TRAIN_FRACTION};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} actual values, {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("metric needs at least {0} values")]
    TooShort(usize),
    #[error("actual values are constant")]
    ConstantTarget,
}

fn check<T>(y: &[T], yhat: &[T], min: usize) -> Result<(), MetricError> {
    if y.len() != yhat.len() {
        return Err(MetricError::LengthMismatch(y.len(), yhat.len()));
    }
    if y.len() < min {
        return Err(MetricError::TooShort(min));
    }
    Ok(())
}

pub fn sum_squared_error<T: Scalar>(y: &[T], yhat: &[T]) -> T {
    y.iter().zip(yhat).fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b))
}

/// Total sum of squares about the mean.
pub fn total_sum_squares<T: Scalar>(y: &[T]) -> T {
    let m = crate::scalar::mean(y);
    y.iter().fold(T::zero(), |acc, &v| acc + (v - m) * (v - m))
}

pub fn rmse<T: Scalar>(y: &[T], yhat: &[T]) -> Result<T, MetricError> {
    check(y, yhat, 1)?;
    Ok((sum_squared_error(y, yhat) / T::from_usize_lossy(y.len())).sqrt())
}

pub fn r2<T: Scalar>(y: &[T], yhat: &[T]) -> Result<T, MetricError> {
    check(y, yhat, 2)?;
    let sst = total_sum_squares(y);
    if sst == T::zero() {
        return Err(MetricError::ConstantTarget);
    }
    Ok(T::one() - sum_squared_error(y, yhat) / sst)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// SHA-256 over the panel's markets, weeks and exact prices.
pub fn fingerprint(panel: &PricePanel) -> String {
    fingerprint_rows(panel, panel.n_weeks())
}

/// Fingerprint of the panel weeks strictly before `week`.
pub fn fingerprint_before(panel: &PricePanel, week: IsoWeek) -> String {
    fingerprint_rows(panel, panel.weeks().iter().take_while(|w| **w < week).count())
}

fn fingerprint_rows(panel: &PricePanel, rows: usize) -> String {
    let mut h = Sha256::new();
    for m in panel.markets() {
        h.update(m.as_str().as_bytes());
        h.update([0u8]);
    }
    for i in 0..rows {
        h.update(panel.weeks()[i].to_string().as_bytes());
        for j in 0..panel.n_markets() {
            h.update(panel.value(i, j).units().to_le_bytes());
        }
    }
    hex(&h.finalize())
}

/// The weeks every model is tuned and scored on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSplits {
    /// First week of the inner validation block; tuning fits see only
    /// earlier weeks.
    pub validation_start: IsoWeek,
    pub validation: Vec<IsoWeek>,
    /// First test week; final fits see only earlier weeks.
    pub test_start: IsoWeek,
    pub test: Vec<IsoWeek>,
}

/// Fixes the test weeks once for all models and windows: the last 20% of
/// the target weeks of the public-scenario, 2-week-window dataset. The
/// validation block is the last 20% of the weeks before that.
pub fn fixed_splits(ctx: &SeriesContext) -> Result<EvalSplits, String> {
    let reference = ctx.dataset(LagScenario::public(), 2)?;
    let n = reference.len();
    let cut = train_cut(n, DEFAULT_TRAIN_FRACTION);
    let val_cut = train_cut(cut, DEFAULT_TRAIN_FRACTION);
    if val_cut < 2 || cut - val_cut < 2 || n - cut < 2 {
        return Err(format!("{n} samples are too few for train, validation and test blocks"));
    }
    let weeks = &reference.target_weeks;
    Ok(EvalSplits {
        validation_start: weeks[val_cut],
        validation: weeks[val_cut..cut].to_vec(),
        test_start: weeks[cut],
        test: weeks[cut..].to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowChoice {
    /// The window is one of the tuned parameters.
    Tuned,
    /// Every family uses this window.
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    /// Random-search trials per cell; 0 uses each family's reference
    /// hyperparameters without tuning.
    pub trials: usize,
    pub seed: u64,
    pub window: WindowChoice,
    /// Refit before every test week instead of once on the training block.
    pub walk_forward: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { trials: 200, seed: 0, window: WindowChoice::Tuned, walk_forward: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub key: String,
    pub scenario: String,
    pub window: Option<usize>,
    pub params: Params,
    pub rmse: Option<f64>,
    pub r2: Option<f64>,
    pub n_test: usize,
    /// Total sum of squares of the test targets.
    pub ss_tot: f64,
    pub validation_rmse: Option<f64>,
    pub predictions: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl ReportRow {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub target: MarketId,
    pub markets: Vec<MarketId>,
    pub seed: u64,
    pub trials: usize,
    pub walk_forward: bool,
    pub data_fingerprint: String,
    pub first_week: IsoWeek,
    pub last_week: IsoWeek,
    pub splits: EvalSplits,
    pub actuals: Vec<f64>,
    pub rows: Vec<ReportRow>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub generated_at: Option<String>,
}

/// 64-bit FNV-1a, used to give each family a seed stream that does not
/// depend on the order families are listed in.
pub fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn cell_seed(seed: u64, family_key: &str) -> u64 {
    derive_seed(seed, stable_hash(family_key))
}

fn predict_block(
    family: &dyn Forecaster,
    ctx: &SeriesContext,
    scenario: LagScenario,
    params: &Params,
    start: IsoWeek,
    weeks: &[IsoWeek],
    seed: u64,
    walk_forward: bool,
) -> Result<Vec<f64>, String> {
    if !walk_forward {
        return family.fit_predict(ctx, scenario, params, start, weeks, seed);
    }
    let mut out = Vec::with_capacity(weeks.len());
    for &w in weeks {
        out.extend(family.fit_predict(ctx, scenario, params, w, &[w], seed)?);
    }
    Ok(out)
}

fn score(actual: &[f64], pred: &[f64]) -> Result<f64, String> {
    if pred.iter().any(|v| !v.is_finite()) {
        return Err("non-finite prediction".into());
    }
    rmse(actual, pred).map_err(|e| e.to_string())
}

struct Cell {
    params: Params,
    validation_rmse: Option<f64>,
    predictions: Vec<f64>,
}

fn run_cell(
    family: &dyn Forecaster,
    ctx: &SeriesContext,
    splits: &EvalSplits,
    scenario: LagScenario,
    opts: &ReportOptions,
) -> Result<Cell, (Params, String)> {
    let seed = cell_seed(opts.seed, family.key());
    let fix_window = |mut p: Params| {
        if let WindowChoice::Fixed(w) = opts.window {
            p.insert("window".into(), crate::tuning::ParamValue::Int(w as i64));
        }
        p
    };
    let val_actual = ctx.actuals(&splits.validation).map_err(|e| (Params::new(), e))?;
    let (params, validation_rmse, fit_seed) = if opts.trials == 0 {
        let p = fix_window(family.reference_params(scenario));
        (p, None, seed)
    } else {
        let mut space = family.search_space();
        if let WindowChoice::Fixed(_) = opts.window {
            space.params.retain(|(n, _)| n != "window");
        }
        let objective = |p: &Params, s: u64| {
            let p = fix_window(p.clone());
            let pred = family.fit_predict(ctx, scenario, &p, splits.validation_start, &splits.validation, s)?;
            score(&val_actual, &pred)
        };
        let result = random_search(&space, opts.trials, objective, seed).map_err(|e| (Params::new(), e.to_string()))?;
        (fix_window(result.best_params), Some(result.best_rmse), trial_seed(seed, result.best_index))
    };
    let predictions = predict_block(
        family,
        ctx,
        scenario,
        &params,
        splits.test_start,
        &splits.test,
        fit_seed,
        opts.walk_forward,
    )
    .map_err(|e| (params.clone(), e))?;
    if predictions.iter().any(|v| !v.is_finite()) {
        return Err((params, "non-finite prediction".into()));
    }
    Ok(Cell { params, validation_rmse, predictions })
}

fn row_window(p: &Params, family: &dyn Forecaster) -> Option<usize> {
    if family.scenario_independent() {
        return None;
    }
    crate::tuning::get_usize(p, "window").ok()
}

/// Tunes, fits and scores every family under every scenario on the same
/// test weeks. Single-series families are evaluated once and their row is
/// repeated for each scenario.
pub fn scenario_report(
    ctx: &SeriesContext,
    families: &[Box<dyn Forecaster>],
    scenarios: &[LagScenario],
    opts: &ReportOptions,
) -> Result<EvaluationReport, String> {
    if scenarios.is_empty() || families.is_empty() {
        return Err("at least one family and one scenario are required".into());
    }
    let splits = fixed_splits(ctx)?;
    let actuals = ctx.actuals(&splits.test)?;
    let ss_tot = total_sum_squares(&actuals);

    // one cell per (family, scenario); single-series families get one cell
    let mut cells: Vec<(usize, LagScenario)> = Vec::new();
    for (fi, f) in families.iter().enumerate() {
        if f.scenario_independent() {
            cells.push((fi, scenarios[0]));
        } else {
            cells.extend(scenarios.iter().map(|&s| (fi, s)));
        }
    }
    let results: Vec<Result<Cell, (Params, String)>> = cells
        .par_iter()
        .map(|&(fi, sc)| run_cell(families[fi].as_ref(), ctx, &splits, sc, opts))
        .collect();

    let mut rows = Vec::new();
    for (&(fi, cell_scenario), res) in cells.iter().zip(&results) {
        let f = families[fi].as_ref();
        let labels: Vec<LagScenario> = if f.scenario_independent() { scenarios.to_vec() } else { vec![cell_scenario] };
        for sc in labels {
            let base = ReportRow {
                model: f.name().to_string(),
                key: f.key().to_string(),
                scenario: sc.to_string(),
                window: None,
                params: Params::new(),
                rmse: None,
                r2: None,
                n_test: actuals.len(),
                ss_tot,
                validation_rmse: None,
                predictions: Vec::new(),
                error: None,
            };
            rows.push(match res {
                Ok(c) => {
                    let e = rmse(&actuals, &c.predictions).map_err(|e| e.to_string());
                    let q = r2(&actuals, &c.predictions).map_err(|e| e.to_string());
                    match (e, q) {
                        (Ok(e), Ok(q)) => ReportRow {
                            window: row_window(&c.params, f),
                            params: c.params.clone(),
                            rmse: Some(e),
                            r2: Some(q),
                            validation_rmse: c.validation_rmse,
                            predictions: c.predictions.clone(),
                            ..base
                        },
                        (Err(err), _) | (_, Err(err)) => ReportRow { params: c.params.clone(), error: Some(err), ..base },
                    }
                }
                Err((p, err)) => ReportRow { params: p.clone(), error: Some(err.clone()), ..base },
            });
        }
    }
    sort_rows(&mut rows, scenarios);

    let weeks = ctx.panel.weeks();
    Ok(EvaluationReport {
        target: ctx.target.clone(),
        markets: ctx.panel.markets().to_vec(),
        seed: opts.seed,
        trials: opts.trials,
        walk_forward: opts.walk_forward,
        data_fingerprint: fingerprint(&ctx.panel),
        first_week: weeks[0],
        last_week: *weeks.last().expect("non-empty panel"),
        splits,
        actuals,
        rows,
        generated_at: None,
    })
}

/// Groups rows by scenario in the given order, then R² descending, failed
/// rows last, ties by model name.
pub fn sort_rows(rows: &mut [ReportRow], scenarios: &[LagScenario]) {
    let rank = |s: &str| scenarios.iter().position(|sc| sc.to_string() == s).unwrap_or(usize::MAX);
    rows.sort_by(|a, b| {
        rank(&a.scenario)
            .cmp(&rank(&b.scenario))
            .then_with(|| match (a.r2, b.r2) {
                (Some(x), Some(y)) => y.total_cmp(&x),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => std::cmp::Ordering::Equal,
            })
            .then_with(|| a.model.cmp(&b.model))
    });
}

impl EvaluationReport {
    pub fn row(&self, key: &str, scenario: LagScenario) -> Option<&ReportRow> {
        let label = scenario.to_string();
        self.rows.iter().find(|r| r.key == key && r.scenario == label)
    }

    pub fn scenarios(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.scenario) {
                out.push(r.scenario.clone());
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table with one line per model and an RMSE and R² column
    /// pair per scenario, ordered by each model's best R².
    pub fn to_text(&self) -> String {
        let scenarios = self.scenarios();
        let mut models: Vec<(&str, &str, f64)> = Vec::new();
        for r in &self.rows {
            let q = r.r2.unwrap_or(f64::NEG_INFINITY);
            match models.iter_mut().find(|(k, _, _)| *k == r.key) {
                Some(m) => m.2 = m.2.max(q),
                None => models.push((&r.key, &r.model, q)),
            }
        }
        models.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.1.cmp(b.1)));

        let mut header = vec!["Model".to_string()];
        for s in &scenarios {
            header.push(format!("{s} RMSE"));
            header.push(format!("{s} R²"));
        }
        let mut table = vec![header];
        for (key, name, _) in &models {
            let mut line = vec![name.to_string()];
            for s in &scenarios {
                match self.rows.iter().find(|r| r.key == *key && &r.scenario == s) {
                    Some(ReportRow { rmse: Some(e), r2: Some(q), .. }) => {
                        line.push(format!("{e:.5}"));
                        line.push(format!("{q:.5}"));
                    }
                    Some(_) => {
                        line.push("failed".into());
                        line.push("failed".into());
                    }
                    None => {
                        line.push("-".into());
                        line.push("-".into());
                    }
                }
            }
            table.push(line);
        }
        let widths: Vec<usize> =
            (0..table[0].len()).map(|c| table.iter().map(|l| l[c].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for (i, line) in table.iter().enumerate() {
            let cells: Vec<String> = line
                .iter()
                .enumerate()
                .map(|(c, v)| {
                    let pad = widths[c] - v.chars().count();
                    if c == 0 { format!("{v}{}", " ".repeat(pad)) } else { format!("{}{v}", " ".repeat(pad)) }
                })
                .collect();
            out.push_str(cells.join(" | ").trim_end());
            out.push('\n');
            if i == 0 {
                let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                out.push_str(&rule.join("-|-"));
                out.push('\n');
            }
        }
        for r in self.rows.iter().filter(|r| !r.is_ok()) {
            let _ = writeln!(out, "{} ({}): {}", r.model, r.scenario, r.error.as_deref().unwrap_or(""));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        assert_eq!(rmse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!((rmse(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap() - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(r2(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(r2(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(r2(&[1.0f64, 1.0], &[1.0, 1.0]), Err(MetricError::ConstantTarget));
        assert!(rmse::<f64>(&[], &[]).is_err());
        assert!(rmse(&[1.0f32], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(stable_hash(""), 0xcbf29ce484222325);
        assert_eq!(stable_hash("a"), 0xaf63dc4c8601ec8c);
    }
}
