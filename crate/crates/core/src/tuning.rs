//! Seeded random hyperparameter search.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::derive_seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TuningError {
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("at least one trial is required")]
    NoTrials,
    #[error("all {trials} trials failed; first failure: {first}")]
    AllFailed { trials: usize, first: String },
    #[error("parameter {0} missing or of the wrong type")]
    BadParam(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Bool(b) => write!(f, "{b}"),
            Self::Int(i) => write!(f, "{i}"),
            Self::Float(x) => write!(f, "{x}"),
            Self::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum ParamDist {
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
    IntUniform { lo: i64, hi: i64 },
    Choice { values: Vec<ParamValue> },
}

impl ParamDist {
    fn validate(&self) -> Result<(), String> {
        match self {
            Self::Uniform { lo, hi } if !(lo < hi && lo.is_finite() && hi.is_finite()) => {
                Err(format!("uniform bounds {lo}..{hi}"))
            }
            Self::LogUniform { lo, hi } if !(*lo > 0.0 && lo < hi && hi.is_finite()) => {
                Err(format!("log-uniform bounds {lo}..{hi}"))
            }
            Self::IntUniform { lo, hi } if lo > hi => Err(format!("integer bounds {lo}..={hi}")),
            Self::Choice { values } if values.is_empty() => Err("empty choice".into()),
            _ => Ok(()),
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> ParamValue {
        match self {
            Self::Uniform { lo, hi } => ParamValue::Float(rng.random_range(*lo..*hi)),
            Self::LogUniform { lo, hi } => ParamValue::Float(rng.random_range(lo.ln()..hi.ln()).exp()),
            Self::IntUniform { lo, hi } => ParamValue::Int(rng.random_range(*lo..=*hi)),
            Self::Choice { values } => values[rng.random_range(0..values.len())].clone(),
        }
    }

    /// Whether `v` could have been drawn from this distribution.
    pub fn contains(&self, v: &ParamValue) -> bool {
        match (self, v) {
            (Self::Uniform { lo, hi } | Self::LogUniform { lo, hi }, ParamValue::Float(x)) => lo <= x && x <= hi,
            (Self::IntUniform { lo, hi }, ParamValue::Int(i)) => lo <= i && i <= hi,
            (Self::Choice { values }, v) => values.contains(v),
            _ => false,
        }
    }
}

/// Parameter name to value; ordered so logs and reports are stable.
pub type Params = BTreeMap<String, ParamValue>;

pub fn get_f64(p: &Params, name: &str) -> Result<f64, TuningError> {
    match p.get(name) {
        Some(ParamValue::Float(x)) => Ok(*x),
        Some(ParamValue::Int(i)) => Ok(*i as f64),
        _ => Err(TuningError::BadParam(name.into())),
    }
}

pub fn get_usize(p: &Params, name: &str) -> Result<usize, TuningError> {
    match p.get(name) {
        Some(ParamValue::Int(i)) if *i >= 0 => Ok(*i as usize),
        _ => Err(TuningError::BadParam(name.into())),
    }
}

pub fn get_bool(p: &Params, name: &str) -> Result<bool, TuningError> {
    match p.get(name) {
        Some(ParamValue::Bool(b)) => Ok(*b),
        _ => Err(TuningError::BadParam(name.into())),
    }
}

pub fn get_text<'a>(p: &'a Params, name: &str) -> Result<&'a str, TuningError> {
    match p.get(name) {
        Some(ParamValue::Text(s)) => Ok(s),
        _ => Err(TuningError::BadParam(name.into())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub family: String,
    /// Sampled in this order.
    pub params: Vec<(String, ParamDist)>,
}

impl SearchSpace {
    pub fn new(family: impl Into<String>) -> Self {
        Self { family: family.into(), params: Vec::new() }
    }

    pub fn with(mut self, name: &str, dist: ParamDist) -> Self {
        self.params.push((name.to_string(), dist));
        self
    }

    pub fn validate(&self) -> Result<(), TuningError> {
        let mut seen = std::collections::BTreeSet::new();
        for (name, d) in &self.params {
            if !seen.insert(name) {
                return Err(TuningError::InvalidSpace(format!("duplicate parameter {name}")));
            }
            d.validate().map_err(|e| TuningError::InvalidSpace(format!("{name}: {e}")))?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamDist> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, d)| d)
    }

    pub fn contains(&self, params: &Params) -> bool {
        self.params.len() == params.len()
            && self.params.iter().all(|(n, d)| params.get(n).is_some_and(|v| d.contains(v)))
    }
}

/// Draws every parameter independently, in declaration order.
pub fn sample_params(space: &SearchSpace, rng: &mut impl Rng) -> Params {
    space.params.iter().map(|(n, d)| (n.clone(), d.sample(rng))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub params: Params,
    pub validation_rmse: Option<f64>,
    pub wall_time_ms: f64,
    #[serde(flatten)]
    pub status: TrialStatus,
}

impl TrialRecord {
    pub fn is_ok(&self) -> bool {
        self.status == TrialStatus::Ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_index: usize,
    pub best_params: Params,
    pub best_rmse: f64,
    pub trials: Vec<TrialRecord>,
}

/// Seed handed to the objective of trial `i`; distinct from the stream the
/// parameters were sampled from.
pub fn trial_seed(seed: u64, index: usize) -> u64 {
    derive_seed(derive_seed(seed, index as u64), 0x7121)
}

/// Evaluates `trials` random points. Trial `i` samples from a generator
/// seeded by `(seed, i)`, so the record list does not depend on how trials
/// are scheduled across threads. The best trial has the lowest validation
/// RMSE; ties go to the lowest index. Non-finite scores count as failures.
pub fn random_search<F>(space: &SearchSpace, trials: usize, objective: F, seed: u64) -> Result<SearchResult, TuningError>
where
    F: Fn(&Params, u64) -> Result<f64, String> + Sync,
{
    space.validate()?;
    if trials == 0 {
        return Err(TuningError::NoTrials);
    }
    let records: Vec<TrialRecord> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let params = sample_params(space, &mut rng);
            let start = Instant::now();
            let outcome = objective(&params, trial_seed(seed, i));
            let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
            let (validation_rmse, status) = match outcome {
                Ok(v) if v.is_finite() => (Some(v), TrialStatus::Ok),
                Ok(v) => (None, TrialStatus::Failed { reason: format!("non-finite score {v}") }),
                Err(reason) => (None, TrialStatus::Failed { reason }),
            };
            TrialRecord { index: i, params, validation_rmse, wall_time_ms, status }
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for r in &records {
        if let Some(v) = r.validation_rmse {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((r.index, v));
            }
        }
    }
    let Some((best_index, best_rmse)) = best else {
        let first = match &records[0].status {
            TrialStatus::Failed { reason } => reason.clone(),
            TrialStatus::Ok => String::new(),
        };
        return Err(TuningError::AllFailed { trials, first });
    };
    Ok(SearchResult { best_index, best_params: records[best_index].params.clone(), best_rmse, trials: records })
}

/// Newline-delimited JSON, one record per line.
pub fn write_trial_log(records: &[TrialRecord], mut out: impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
