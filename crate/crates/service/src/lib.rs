//! The weekly forecasting service.
//!
//! Every mutation is an event appended to a plain-text log in the data
//! directory; the current state is a fold of that log and is mirrored to a
//! snapshot file that must match a fresh replay byte for byte. A weekly
//! cycle fetches prices, retrains the configured champion model and records
//! a forecast for the target market's next decision week. Settlements agreed
//! after negotiation overwrite the target's price for their week, so the
//! following cycle trains on them.

pub mod api;
pub mod clock;
pub mod config;
pub mod records;
pub mod service;
pub mod store;

pub use api::{router, serve_api, ServiceHandle};
pub use clock::{Clock, ManualClock, SystemClock};
pub use config::{ChampionConfig, ConfigError, ServiceConfig};
pub use records::{CycleOutcome, CycleSummary, Direction, ForecastRecord, SettlementRecord};
pub use service::{PriceOverride, Service, ServiceError};
pub use store::{replay, Event, LogEntry, ReplayWarning, State, Store, StoreError};
