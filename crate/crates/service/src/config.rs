use std::path::{Path, PathBuf};

use chrono::{NaiveTime, Weekday};
use porkcast_core::analysis::DEFAULT_CORRELATION_THRESHOLD;
use porkcast_core::domain::{LagScenario, MarketId, Price, PublicationCalendar};
use porkcast_core::families::{family_by_key, Forecaster, NeuralScale};
use porkcast_core::ingest::{Source, DEFAULT_OUTLIER_THRESHOLD};
use porkcast_core::tuning::{ParamValue, Params};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// The production model the cycle retrains every week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChampionConfig {
    /// Family key, e.g. `ridge`.
    pub family: String,
    /// Hyperparameters; the family's reference values when absent.
    pub params: Option<Params>,
    /// Overrides the `window` hyperparameter.
    pub window: Option<usize>,
    pub seed: u64,
    /// Re-run the hyperparameter search on the first cycle of each quarter.
    pub retune_quarterly: bool,
    pub retune_trials: usize,
}

impl Default for ChampionConfig {
    fn default() -> Self {
        Self { family: "ridge".into(), params: None, window: Some(2), seed: 7, retune_quarterly: false, retune_trials: 50 }
    }
}

impl ChampionConfig {
    pub fn forecaster(&self) -> Option<Box<dyn Forecaster>> {
        family_by_key(&self.family, NeuralScale::Desk)
    }

    /// Configured hyperparameters with the window override applied.
    pub fn params(&self, family: &dyn Forecaster, scenario: LagScenario) -> Params {
        let mut p = self.params.clone().unwrap_or_else(|| family.reference_params(scenario));
        if let Some(w) = self.window {
            if !family.scenario_independent() {
                p.insert("window".into(), ParamValue::Int(w as i64));
            }
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub sources: Vec<Source>,
    pub target_market: MarketId,
    pub calendar: PublicationCalendar,
    #[serde(with = "scenario_text")]
    pub scenario: LagScenario,
    pub champion: ChampionConfig,
    pub listen_addr: String,
    pub cycle_weekday: Weekday,
    /// `HH:MM`, UTC.
    pub cycle_time: String,
    pub data_dir: PathBuf,
    pub correlation_threshold: f64,
    pub outlier_threshold: Price,
    pub fetch_timeout_secs: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            sources: Vec::new(),
            target_market: MarketId::new("ES-LLEIDA").expect("static id"),
            calendar: PublicationCalendar::spanish_default(),
            scenario: LagScenario::public(),
            champion: ChampionConfig::default(),
            listen_addr: "127.0.0.1:8080".into(),
            cycle_weekday: Weekday::Fri,
            cycle_time: "06:00".into(),
            data_dir: PathBuf::from("data"),
            correlation_threshold: DEFAULT_CORRELATION_THRESHOLD,
            outlier_threshold: DEFAULT_OUTLIER_THRESHOLD,
            fetch_timeout_secs: 30,
        }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !self.calendar.contains(&self.target_market) {
            return bad(format!("target {} has no calendar entry", self.target_market));
        }
        if self.champion.forecaster().is_none() {
            return bad(format!("unknown champion family {:?}", self.champion.family));
        }
        if self.champion.window == Some(0) {
            return bad("champion window must be at least 1".into());
        }
        if self.cycle_time().is_none() {
            return bad(format!("cycle_time {:?} is not HH:MM", self.cycle_time));
        }
        if !(-1.0..=1.0).contains(&self.correlation_threshold) {
            return bad(format!("correlation_threshold {} outside [-1, 1]", self.correlation_threshold));
        }
        if !self.outlier_threshold.is_positive() {
            return bad("outlier_threshold must be positive".into());
        }
        self.scenario.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn cycle_time(&self) -> Option<NaiveTime> {
        NaiveTime::parse_from_str(&self.cycle_time, "%H:%M").ok()
    }
}

mod scenario_text {
    use porkcast_core::domain::LagScenario;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: &LagScenario, ser: S) -> Result<S::Ok, S::Error> {
        ser.collect_str(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<LagScenario, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}
