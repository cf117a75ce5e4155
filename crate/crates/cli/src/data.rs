//! Loading price data for the batch commands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::Weekday;
use porkcast_core::analysis::{pearson_matrix, select_markets};
use porkcast_core::domain::{MarketId, MarketSeries, PublicationCalendar};
use porkcast_core::families::SeriesContext;
use porkcast_core::ingest::{align_panel, fetch_source, parse_price_csv, repair_outliers, GapReport, PricePanel, RepairLog, Source};
use porkcast_service::ServiceConfig;

use crate::CliError;

pub const CALENDAR_FILE: &str = "calendar.json";

/// Sources and calendar from `--data DIR`: every `*.csv` in the directory,
/// in name order, plus an optional `calendar.json`.
pub fn apply_data_dir(cfg: &mut ServiceConfig, dir: &Path) -> Result<(), CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!("no .csv files in {}", dir.display())));
    }
    cfg.sources = files.iter().map(|p| Source { url: p.display().to_string(), format_hint: None }).collect();
    let cal = dir.join(CALENDAR_FILE);
    if cal.exists() {
        let text = std::fs::read_to_string(&cal).map_err(|e| CliError::Data(format!("{}: {e}", cal.display())))?;
        cfg.calendar = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", cal.display())))?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Loaded {
    /// Repaired series, one per market.
    pub series: Vec<MarketSeries>,
    pub repairs: RepairLog,
    pub gaps: GapReport,
    /// Every market, aligned on the common weeks.
    pub panel: PricePanel,
    pub calendar: PublicationCalendar,
}

/// Reads every configured source, repairs outliers and aligns the panel.
/// Later sources win when two give a price for the same market and week.
pub fn load(cfg: &ServiceConfig) -> Result<Loaded, CliError> {
    if cfg.sources.is_empty() {
        return Err(CliError::Usage("no price data: pass --data DIR or list sources in the config".into()));
    }
    let mut merged: BTreeMap<MarketId, BTreeMap<_, _>> = BTreeMap::new();
    for src in &cfg.sources {
        let text = fetch_source(src, Duration::from_secs(cfg.fetch_timeout_secs)).map_err(|e| CliError::Data(e.to_string()))?;
        for s in parse_price_csv(&text).map_err(|e| CliError::Data(format!("{}: {e}", src.url)))? {
            let report = s.validate();
            if !report.is_ok() {
                return Err(CliError::Data(format!("{} in {}: {}", s.market, src.url, report.violations[0])));
            }
            let m = merged.entry(s.market.clone()).or_default();
            for o in s.observations {
                m.insert(o.week, o);
            }
        }
    }
    let raw: Vec<MarketSeries> = merged
        .into_iter()
        .map(|(market, obs)| MarketSeries { market, observations: obs.into_values().collect() })
        .collect();
    let calendar = calendar_for(&cfg.calendar, &raw);
    let mut series = Vec::with_capacity(raw.len());
    let mut repairs = RepairLog::new();
    for s in &raw {
        let (fixed, log) = repair_outliers(s, cfg.outlier_threshold);
        series.push(fixed);
        repairs.extend(log);
    }
    let (panel, gaps) = align_panel(&series).map_err(|e| CliError::Data(e.to_string()))?;
    Ok(Loaded { series, repairs, gaps, panel, calendar })
}

/// The configured calendar, extended with the most common decision weekday
/// of any market it does not list.
fn calendar_for(base: &PublicationCalendar, series: &[MarketSeries]) -> PublicationCalendar {
    let mut cal = base.clone();
    for s in series {
        if cal.contains(&s.market) {
            continue;
        }
        let mut counts = [0usize; 7];
        for o in &s.observations {
            counts[o.decision_weekday.num_days_from_monday() as usize] += 1;
        }
        let best = (0..7).max_by_key(|&d| (counts[d], std::cmp::Reverse(d))).unwrap_or(0);
        let day = [Weekday::Mon, Weekday::Tue, Weekday::Wed, Weekday::Thu, Weekday::Fri, Weekday::Sat, Weekday::Sun][best];
        cal.insert(s.market.clone(), day);
    }
    cal
}

impl Loaded {
    /// The target plus every market correlated with it above `threshold`,
    /// in panel order.
    pub fn context(&self, cfg: &ServiceConfig) -> Result<SeriesContext, CliError> {
        let target = &cfg.target_market;
        if self.panel.market_index(target).is_none() {
            return Err(CliError::Data(format!("target market {target} is not in the data")));
        }
        let panel = if self.panel.n_markets() > 1 {
            let corr = pearson_matrix(&self.panel).map_err(|e| CliError::Data(e.to_string()))?;
            let chosen = select_markets(&corr, target, cfg.correlation_threshold).map_err(|e| CliError::Data(e.to_string()))?;
            let keep: Vec<MarketId> = self.panel.markets().iter().filter(|m| chosen.contains(m)).cloned().collect();
            self.panel.select(&keep).map_err(|e| CliError::Data(e.to_string()))?
        } else {
            self.panel.clone()
        };
        SeriesContext::new(panel, target.clone(), self.calendar.clone()).map_err(CliError::Data)
    }
}
