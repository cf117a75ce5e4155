#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use porkcast_core::domain::IsoWeek;
use porkcast_core::ingest::{write_price_csv, Source};
use porkcast_core::synthetic::{sample_calendar, synthetic_series, SyntheticConfig};
use porkcast_service::{ManualClock, Service, ServiceConfig};

/// Writes the first `weeks` weeks of the seeded synthetic panel as CSV.
pub fn write_prices(path: &Path, weeks: usize, seed: u64) {
    let cfg = SyntheticConfig { n_weeks: weeks, ..SyntheticConfig::default() };
    let series = synthetic_series(&cfg, &sample_calendar(), seed);
    std::fs::write(path, write_price_csv(&series)).unwrap();
}

pub fn week(y: i32, w: u32) -> IsoWeek {
    IsoWeek::new(y, w).unwrap()
}

/// Synthetic data starts in 2016-W01; week `k` (0-based) of the data.
pub fn data_week(k: usize) -> IsoWeek {
    week(2016, 1).add_weeks(k as i64).unwrap()
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub csv: PathBuf,
    pub clock: Arc<ManualClock>,
}

impl Fixture {
    pub fn new(weeks: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("prices.csv");
        write_prices(&csv, weeks, 11);
        // a Friday well after the data
        let clock = Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2022, 3, 4, 8, 0, 0).unwrap()));
        Self { dir, csv, clock }
    }

    pub fn config(&self) -> ServiceConfig {
        ServiceConfig {
            sources: vec![Source { url: self.csv.display().to_string(), format_hint: None }],
            calendar: sample_calendar(),
            data_dir: self.dir.path().join("store"),
            listen_addr: "127.0.0.1:0".into(),
            ..ServiceConfig::default()
        }
    }

    pub fn open(&self) -> Service {
        self.open_with(self.config())
    }

    pub fn open_with(&self, cfg: ServiceConfig) -> Service {
        Service::open(cfg, self.clock.clone()).unwrap().0
    }
}
