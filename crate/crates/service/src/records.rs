use chrono::{DateTime, Utc};
use porkcast_core::domain::{IsoWeek, MarketId, Price};
use serde::{Deserialize, Serialize};

/// Changes smaller than this, in EUR/kg, count as no change.
pub const FLAT_BAND: f64 = 0.0005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Flat,
}

impl Direction {
    pub fn of_change(predicted: f64, last: f64) -> Self {
        let d = predicted - last;
        if d.abs() < FLAT_BAND {
            Self::Flat
        } else if d > 0.0 {
            Self::Up
        } else {
            Self::Down
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub target: MarketId,
    pub week: IsoWeek,
    /// EUR/kg.
    pub predicted_price: f64,
    pub last_observed_week: IsoWeek,
    pub last_observed_price: f64,
    pub direction: Direction,
    pub model: String,
    /// Hash of the serialized trained model.
    pub model_fingerprint: String,
    /// Hash of the data and hyperparameters the model was trained with.
    pub data_fingerprint: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettlementRecord {
    pub week: IsoWeek,
    pub agreed_price: Price,
    pub entered_by: String,
    pub entered_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleOutcome {
    Forecast,
    NoOp,
    Withheld,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSummary {
    /// Calendar week the cycle ran in.
    pub week: IsoWeek,
    pub started_at: DateTime<Utc>,
    pub outcome: CycleOutcome,
    /// True when a source could not be fetched and cached data was used.
    pub stale: bool,
    pub fetch_errors: Vec<String>,
    pub new_observations: usize,
    pub repairs: usize,
    pub forecast_week: Option<IsoWeek>,
    /// True when the cycle replaced an earlier forecast for the same week.
    pub replaced: bool,
    pub message: String,
}
