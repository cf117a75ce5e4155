//! Seeded synthetic panels with a known lead-lag structure.
//!
//! All markets track one latent weekly price level. Markets that decide
//! earlier in the week than the target already reflect that week's shock,
//! so their same-week prices carry information the target's own history
//! does not.

use chrono::Weekday;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::domain::{IsoWeek, MarketId, MarketSeries, Price, PriceObservation, PublicationCalendar};
use crate::ingest::PricePanel;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub start: IsoWeek,
    pub n_weeks: usize,
    /// Long-run mean price, EUR/kg.
    pub mean_level: f64,
    /// Weekly persistence of deviations from the mean.
    pub persistence: f64,
    /// Persistence of the weekly change, giving the level multi-week trends.
    pub momentum: f64,
    /// Standard deviation of the weekly common shock.
    pub shock_sd: f64,
    /// Standard deviation of each market's own weekly noise.
    pub noise_sd: f64,
    /// Amplitude of the annual cycle.
    pub seasonal_amplitude: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            start: IsoWeek::new(2016, 1).expect("valid week"),
            n_weeks: 322,
            mean_level: 1.35,
            persistence: 0.97,
            momentum: 0.6,
            shock_sd: 0.012,
            noise_sd: 0.004,
            seasonal_amplitude: 0.08,
        }
    }
}

/// The eight Spanish markets with their decision weekdays.
pub fn sample_calendar() -> PublicationCalendar {
    PublicationCalendar::spanish_default().with(MarketId::new("ES-BARCELONA").expect("static id"), Weekday::Thu)
}

pub fn default_target() -> MarketId {
    MarketId::new("ES-LLEIDA").expect("static id")
}

/// Per-market price offsets from the common level.
fn market_bias(m: &MarketId) -> f64 {
    match m.as_str() {
        "ES-SALAMANCA" => 0.02,
        "ES-ZARAGOZA" => 0.01,
        "ES-PONTEVEDRA" => -0.03,
        "ES-HUESCA" => 0.015,
        "ES-MURCIA" => -0.01,
        "ES-SEGOVIA" => 0.005,
        "ES-BARCELONA" => 0.0,
        _ => 0.0,
    }
}

/// Series for every market in `calendar`, prices rounded to the tenth of
/// a cent.
pub fn synthetic_series(cfg: &SyntheticConfig, calendar: &PublicationCalendar, seed: u64) -> Vec<MarketSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shock = Normal::new(0.0, cfg.shock_sd).expect("finite sd");
    let noise = Normal::new(0.0, cfg.noise_sd).expect("finite sd");
    let markets: Vec<(&MarketId, &Weekday)> = calendar.iter().collect();
    let mut out: Vec<MarketSeries> = markets.iter().map(|(m, _)| MarketSeries::new((*m).clone())).collect();
    let (mut dev, mut velocity) = (0.0, 0.0);
    for t in 0..cfg.n_weeks {
        let week = cfg.start.add_weeks(t as i64).expect("week in range");
        velocity = cfg.momentum * velocity + shock.sample(&mut rng);
        dev = cfg.persistence * dev + velocity;
        let season = cfg.seasonal_amplitude * (2.0 * std::f64::consts::PI * week.week() as f64 / 52.0).sin();
        let level = cfg.mean_level + season + dev;
        for (k, (m, day)) in markets.iter().enumerate() {
            let v = level + market_bias(m) + noise.sample(&mut rng);
            let price = Price::from_units(((v.max(0.05) * 1000.0).round() as i64) * 10);
            out[k].observations.push(PriceObservation { market: (*m).clone(), week, price, decision_weekday: **day });
        }
    }
    out
}

/// The eight-market panel, its calendar and the target market.
pub fn lead_lag_panel(seed: u64) -> (PricePanel, PublicationCalendar, MarketId) {
    lead_lag_panel_with(&SyntheticConfig::default(), seed)
}

pub fn lead_lag_panel_with(cfg: &SyntheticConfig, seed: u64) -> (PricePanel, PublicationCalendar, MarketId) {
    let calendar = sample_calendar();
    let series = synthetic_series(cfg, &calendar, seed);
    let markets: Vec<MarketId> = series.iter().map(|s| s.market.clone()).collect();
    let weeks: Vec<IsoWeek> = series[0].observations.iter().map(|o| o.week).collect();
    let mut values = Vec::with_capacity(markets.len() * weeks.len());
    for t in 0..weeks.len() {
        for s in &series {
            values.push(s.observations[t].price);
        }
    }
    let panel = PricePanel::from_parts(markets, weeks, values, None).expect("consistent parts");
    (panel, calendar, default_target())
}
