//! Append-only event log with a derived snapshot.
//!
//! The log is newline-delimited JSON, one [`LogEntry`] per line, numbered
//! from 1. The snapshot file holds the compact JSON of the folded
//! [`State`]; on open it must equal a fresh replay of the log exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc, Weekday};
use porkcast_core::domain::{IsoWeek, MarketId, MarketSeries, Price, PriceObservation};
use porkcast_core::evaluation::EvaluationReport;
use porkcast_core::ingest::RepairEntry;
use porkcast_core::tuning::Params;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::{CycleSummary, ForecastRecord, SettlementRecord};

pub const LOG_FILE: &str = "events.ndjson";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corrupt log entry at byte {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
    #[error("snapshot does not match a replay of the log ({log_events} events replayed)")]
    Divergence { log_events: u64 },
    #[error("cannot encode event: {0}")]
    Encode(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Observations { observations: Vec<PriceObservation> },
    Repairs { entries: Vec<RepairEntry> },
    Forecast { record: ForecastRecord },
    Settlement { market: MarketId, weekday: Weekday, record: SettlementRecord },
    Report { report: Box<EvaluationReport> },
    ChampionTuned { quarter: String, params: Params },
    Cycle { summary: CycleSummary },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub at: DateTime<Utc>,
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketData {
    pub weekday: Weekday,
    pub prices: BTreeMap<IsoWeek, Price>,
    /// Weeks whose price is an agreed settlement; upstream data and repairs
    /// never overwrite these.
    pub settled: BTreeSet<IsoWeek>,
}

impl MarketData {
    pub fn new(weekday: Weekday) -> Self {
        Self { weekday, prices: BTreeMap::new(), settled: BTreeSet::new() }
    }

    pub fn last_week(&self) -> Option<IsoWeek> {
        self.prices.keys().next_back().copied()
    }

    pub fn to_series(&self, market: &MarketId) -> MarketSeries {
        MarketSeries {
            market: market.clone(),
            observations: self
                .prices
                .iter()
                .map(|(&week, &price)| PriceObservation { market: market.clone(), week, price, decision_weekday: self.weekday })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedChampion {
    pub quarter: String,
    pub params: Params,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub events: u64,
    pub markets: BTreeMap<MarketId, MarketData>,
    pub repairs: Vec<RepairEntry>,
    /// Active forecast per week.
    pub forecasts: BTreeMap<IsoWeek, ForecastRecord>,
    /// Every forecast ever issued, oldest first.
    pub forecast_history: Vec<ForecastRecord>,
    /// Settlements per week, oldest first; the last one is active.
    pub settlements: BTreeMap<IsoWeek, Vec<SettlementRecord>>,
    pub report: Option<EvaluationReport>,
    pub tuned: Option<TunedChampion>,
    pub last_cycle: Option<CycleSummary>,
}

impl State {
    pub fn apply(&mut self, event: &Event) {
        self.events += 1;
        match event {
            Event::Observations { observations } => {
                for o in observations {
                    let m = self.markets.entry(o.market.clone()).or_insert_with(|| MarketData::new(o.decision_weekday));
                    if !m.settled.contains(&o.week) {
                        m.prices.insert(o.week, o.price);
                    }
                }
            }
            Event::Repairs { entries } => {
                for e in entries {
                    if let Some(m) = self.markets.get_mut(&e.market) {
                        if !m.settled.contains(&e.week) {
                            m.prices.insert(e.week, e.replaced_value);
                        }
                    }
                }
                self.repairs.extend(entries.iter().cloned());
            }
            Event::Forecast { record } => {
                self.forecasts.insert(record.week, record.clone());
                self.forecast_history.push(record.clone());
            }
            Event::Settlement { market, weekday, record } => {
                let m = self.markets.entry(market.clone()).or_insert_with(|| MarketData::new(*weekday));
                m.prices.insert(record.week, record.agreed_price);
                m.settled.insert(record.week);
                self.settlements.entry(record.week).or_default().push(record.clone());
            }
            Event::Report { report } => self.report = Some((**report).clone()),
            Event::ChampionTuned { quarter, params } => {
                self.tuned = Some(TunedChampion { quarter: quarter.clone(), params: params.clone() })
            }
            Event::Cycle { summary } => self.last_cycle = Some(summary.clone()),
        }
    }

    pub fn active_settlement(&self, week: &IsoWeek) -> Option<&SettlementRecord> {
        self.settlements.get(week).and_then(|v| v.last())
    }

    pub fn latest_forecast(&self) -> Option<&ForecastRecord> {
        self.forecasts.values().next_back()
    }

    /// Compact JSON, the exact bytes of the snapshot file.
    pub fn to_snapshot(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("state is serializable")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplayWarning {
    /// Byte offset of the first discarded byte.
    pub offset: u64,
    pub message: String,
}

/// Folds a log into a state. A final line that fails to parse and has no
/// trailing newline is a torn write: it is dropped with a warning and the
/// returned length marks the end of the valid prefix. Any other bad line is
/// an error.
pub fn replay(log: &str) -> Result<(State, Vec<ReplayWarning>, u64), StoreError> {
    let mut state = State::default();
    let mut warnings = Vec::new();
    let mut offset = 0u64;
    let mut rest = log;
    while !rest.is_empty() {
        let (line, consumed, complete) = match rest.find('\n') {
            Some(i) => (&rest[..i], i + 1, true),
            None => (rest, rest.len(), false),
        };
        if !line.trim().is_empty() {
            match serde_json::from_str::<LogEntry>(line) {
                Ok(entry) if entry.seq == state.events + 1 => state.apply(&entry.event),
                Ok(entry) => {
                    return Err(StoreError::Corrupt {
                        offset,
                        reason: format!("sequence {} follows {}", entry.seq, state.events),
                    })
                }
                Err(e) if !complete => {
                    warnings.push(ReplayWarning { offset, message: format!("truncated final entry dropped: {e}") });
                    return Ok((state, warnings, offset));
                }
                Err(e) => return Err(StoreError::Corrupt { offset, reason: e.to_string() }),
            }
        }
        offset += consumed as u64;
        rest = &rest[consumed..];
    }
    Ok((state, warnings, offset))
}

/// The single writer of a data directory.
#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    log: File,
    state: State,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |e| StoreError::Io { path: path.display().to_string(), source: e }
}

impl Store {
    /// Opens or creates the store in `dir`, replaying the log. A torn final
    /// entry is cut from the log and reported; a snapshot that disagrees
    /// with an intact log is an error.
    pub fn open(dir: &Path) -> Result<(Self, Vec<ReplayWarning>), StoreError> {
        fs::create_dir_all(dir).map_err(io(dir))?;
        let log_path = dir.join(LOG_FILE);
        let text = match fs::read(&log_path) {
            Ok(bytes) => String::from_utf8(bytes)
                .map_err(|e| StoreError::Corrupt { offset: e.utf8_error().valid_up_to() as u64, reason: "invalid UTF-8".into() })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io(&log_path)(e)),
        };
        let (state, warnings, valid) = replay(&text)?;
        let log = OpenOptions::new().create(true).append(true).open(&log_path).map_err(io(&log_path))?;
        if !warnings.is_empty() {
            log.set_len(valid).map_err(io(&log_path))?;
        }
        let store = Self { dir: dir.to_path_buf(), log, state };
        let snap_path = dir.join(SNAPSHOT_FILE);
        match fs::read(&snap_path) {
            Ok(bytes) if warnings.is_empty() && bytes != store.state.to_snapshot() => {
                return Err(StoreError::Divergence { log_events: store.state.events })
            }
            Ok(_) if warnings.is_empty() => {}
            _ => store.write_snapshot()?,
        }
        Ok((store, warnings))
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join(LOG_FILE)
    }

    pub fn snapshot_path(&self) -> PathBuf {
        self.dir.join(SNAPSHOT_FILE)
    }

    /// Appends one event and updates the snapshot.
    pub fn append(&mut self, at: DateTime<Utc>, event: Event) -> Result<&State, StoreError> {
        let entry = LogEntry { seq: self.state.events + 1, at, event };
        let mut line = serde_json::to_vec(&entry)?;
        line.push(b'\n');
        let path = self.log_path();
        self.log.write_all(&line).map_err(io(&path))?;
        self.log.sync_data().map_err(io(&path))?;
        self.state.apply(&entry.event);
        self.write_snapshot()?;
        Ok(&self.state)
    }

    fn write_snapshot(&self) -> Result<(), StoreError> {
        let path = self.snapshot_path();
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        fs::write(&tmp, self.state.to_snapshot()).map_err(io(&tmp))?;
        fs::rename(&tmp, &path).map_err(io(&path))
    }
}
