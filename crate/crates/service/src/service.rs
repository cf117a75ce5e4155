use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::Duration;

use chrono::{DateTime, Datelike, NaiveTime, Utc, Weekday};
use porkcast_core::analysis::{pearson_matrix, select_markets};
use porkcast_core::domain::{IsoWeek, MarketId, Price};
use porkcast_core::evaluation::{fingerprint, rmse, EvaluationReport};
use porkcast_core::families::{Forecaster, SeriesContext, TrainedModel};
use porkcast_core::ingest::{align_panel, fetch_source, parse_price_csv, repair_outliers, RepairEntry};
use porkcast_core::linalg::Matrix;
use porkcast_core::tuning::{random_search, ParamValue, Params};
use porkcast_core::windowing::{feature_row, offsets_for};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::{error, info, warn};

use crate::clock::Clock;
use crate::config::ServiceConfig;
use crate::records::{CycleOutcome, CycleSummary, Direction, ForecastRecord, SettlementRecord};
use crate::store::{Event, MarketData, ReplayWarning, State, Store, StoreError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Data(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// A hypothetical price for the what-if forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceOverride {
    pub market: MarketId,
    pub week: IsoWeek,
    pub price: f64,
}

/// Single writer, many readers: mutations hold `writer` and then publish a
/// fresh immutable state, so readers always see a whole generation.
pub struct Service {
    config: ServiceConfig,
    clock: Arc<dyn Clock>,
    writer: Mutex<Store>,
    snapshot: RwLock<Arc<State>>,
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Service {
    pub fn open(config: ServiceConfig, clock: Arc<dyn Clock>) -> Result<(Self, Vec<ReplayWarning>), ServiceError> {
        config.validate().map_err(|e| ServiceError::Validation(e.to_string()))?;
        let (store, warnings) = Store::open(&config.data_dir)?;
        for w in &warnings {
            warn!(offset = w.offset, "{}", w.message);
        }
        let snapshot = RwLock::new(Arc::new(store.state().clone()));
        Ok((Self { config, clock, writer: Mutex::new(store), snapshot }, warnings))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    /// The current state generation.
    pub fn state(&self) -> Arc<State> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    fn lock(&self) -> MutexGuard<'_, Store> {
        self.writer.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn append(&self, store: &mut Store, event: Event) -> Result<(), ServiceError> {
        store.append(self.clock.now(), event)?;
        *self.snapshot.write().expect("snapshot lock") = Arc::new(store.state().clone());
        Ok(())
    }

    fn current_week(&self) -> Result<IsoWeek, ServiceError> {
        IsoWeek::from_date(self.clock.now().date_naive()).map_err(|e| ServiceError::Data(e.to_string()))
    }

    /// Fetch, merge, repair, retrain and forecast. Fetch and training
    /// failures are recorded in the returned summary rather than returned
    /// as errors; only store failures are errors.
    pub fn run_cycle(&self) -> Result<CycleSummary, ServiceError> {
        let mut store = self.lock();
        let started_at = self.clock.now();
        let week = self.current_week()?;
        let (fetched, fetch_errors) = self.fetch_all();
        let new_obs = self.new_observations(store.state(), fetched);
        let n_new = new_obs.len();
        if n_new > 0 {
            self.append(&mut store, Event::Observations { observations: new_obs })?;
        }
        let repairs = pending_repairs(store.state(), self.config.outlier_threshold);
        if !repairs.is_empty() {
            self.append(&mut store, Event::Repairs { entries: repairs.clone() })?;
        }
        let mut summary = CycleSummary {
            week,
            started_at,
            outcome: CycleOutcome::Withheld,
            stale: !fetch_errors.is_empty(),
            fetch_errors,
            new_observations: n_new,
            repairs: repairs.len(),
            forecast_week: None,
            replaced: false,
            message: String::new(),
        };
        match self.cycle_forecast(&mut store) {
            Ok((outcome, record, replaced)) => {
                summary.outcome = outcome;
                summary.forecast_week = Some(record.week);
                summary.replaced = replaced;
                summary.message = match outcome {
                    CycleOutcome::NoOp => format!("no-op: {n_new} new observations"),
                    _ if replaced => format!("forecast for {} replaced: {:.4} EUR/kg", record.week, record.predicted_price),
                    _ => format!("forecast for {}: {:.4} EUR/kg", record.week, record.predicted_price),
                };
            }
            Err(ServiceError::Store(e)) => return Err(ServiceError::Store(e)),
            Err(e) => {
                error!("forecast withheld: {e}");
                summary.message = format!("forecast withheld: {e}");
            }
        }
        if summary.stale {
            summary.message.push_str(" (stale: using cached data)");
        }
        info!("{}", summary.message);
        self.append(&mut store, Event::Cycle { summary: summary.clone() })?;
        Ok(summary)
    }

    fn cycle_forecast(&self, store: &mut Store) -> Result<(CycleOutcome, ForecastRecord, bool), ServiceError> {
        let family = self.forecaster();
        let ctx = self.context(&store.state().markets, family.as_ref())?;
        let (_, forecast_week) = self.last_target(&store.state().markets)?;
        if self.config.champion.retune_quarterly {
            self.maybe_retune(store, &ctx, family.as_ref(), forecast_week)?;
        }
        let params = self.champion_params(store.state(), family.as_ref());
        let data_fp = self.data_fingerprint(&ctx, &params);
        if let Some(prior) = store.state().forecasts.get(&forecast_week) {
            if prior.data_fingerprint == data_fp {
                return Ok((CycleOutcome::NoOp, prior.clone(), false));
            }
        }
        let record = self.forecast_with(&ctx, &store.state().markets, family.as_ref(), &params, data_fp)?;
        let replaced = store.state().forecasts.contains_key(&record.week);
        self.append(store, Event::Forecast { record: record.clone() })?;
        Ok((CycleOutcome::Forecast, record, replaced))
    }

    fn forecaster(&self) -> Box<dyn Forecaster> {
        self.config.champion.forecaster().expect("validated in open")
    }

    fn fetch_all(&self) -> (Vec<porkcast_core::domain::MarketSeries>, Vec<String>) {
        let timeout = Duration::from_secs(self.config.fetch_timeout_secs);
        let mut series = Vec::new();
        let mut errors = Vec::new();
        for src in &self.config.sources {
            match fetch_source(src, timeout).and_then(|text| parse_price_csv(&text)) {
                Ok(s) => series.extend(s),
                Err(e) => {
                    warn!(url = %src.url, "fetch failed: {e}");
                    errors.push(format!("{}: {e}", src.url));
                }
            }
        }
        (series, errors)
    }

    /// Valid observations of calendar markets for weeks the store lacks,
    /// sorted by market and week. The first source wins on duplicates.
    fn new_observations(
        &self,
        state: &State,
        fetched: Vec<porkcast_core::domain::MarketSeries>,
    ) -> Vec<porkcast_core::domain::PriceObservation> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for s in fetched {
            if !self.config.calendar.contains(&s.market) {
                warn!(market = %s.market, "skipping market without a calendar entry");
                continue;
            }
            if let Some(v) = s.validate().violations.first() {
                warn!(market = %s.market, "skipping invalid series: {v}");
                continue;
            }
            let known = state.markets.get(&s.market);
            for o in s.observations {
                if known.is_some_and(|m| m.prices.contains_key(&o.week)) || !seen.insert((o.market.clone(), o.week)) {
                    continue;
                }
                out.push(o);
            }
        }
        out.sort_by(|a, b| (&a.market, a.week).cmp(&(&b.market, b.week)));
        out
    }

    /// Aligned panel of the markets the champion uses: the target alone for
    /// single-series families, otherwise every calendar market whose
    /// correlation with the target clears the threshold.
    fn context(&self, markets: &BTreeMap<MarketId, MarketData>, family: &dyn Forecaster) -> Result<SeriesContext, ServiceError> {
        let target = &self.config.target_market;
        let series: Vec<_> = markets
            .iter()
            .filter(|(m, d)| {
                !d.prices.is_empty()
                    && self.config.calendar.contains(m)
                    && (!family.scenario_independent() || *m == target)
            })
            .map(|(m, d)| d.to_series(m))
            .collect();
        if !series.iter().any(|s| &s.market == target) {
            return Err(ServiceError::Data(format!("no data for target {target}")));
        }
        let (panel, _) = align_panel(&series).map_err(|e| ServiceError::Data(e.to_string()))?;
        let panel = if panel.n_markets() > 1 {
            let corr = pearson_matrix(&panel).map_err(|e| ServiceError::Data(e.to_string()))?;
            let chosen: BTreeSet<MarketId> = select_markets(&corr, target, self.config.correlation_threshold)
                .map_err(|e| ServiceError::Data(e.to_string()))?
                .into_iter()
                .collect();
            let keep: Vec<MarketId> = panel.markets().iter().filter(|m| chosen.contains(m)).cloned().collect();
            panel.select(&keep).map_err(|e| ServiceError::Data(e.to_string()))?
        } else {
            panel
        };
        SeriesContext::new(panel, target.clone(), self.config.calendar.clone()).map_err(ServiceError::Data)
    }

    /// Target's latest observed week and the week after it.
    fn last_target(&self, markets: &BTreeMap<MarketId, MarketData>) -> Result<(IsoWeek, IsoWeek), ServiceError> {
        let target = &self.config.target_market;
        let last = markets
            .get(target)
            .and_then(MarketData::last_week)
            .ok_or_else(|| ServiceError::Data(format!("no data for target {target}")))?;
        Ok((last, last.succ().map_err(|e| ServiceError::Data(e.to_string()))?))
    }

    fn champion_params(&self, state: &State, family: &dyn Forecaster) -> Params {
        match &state.tuned {
            Some(t) if self.config.champion.retune_quarterly => t.params.clone(),
            _ => self.config.champion.params(family, self.config.scenario),
        }
    }

    fn maybe_retune(
        &self,
        store: &mut Store,
        ctx: &SeriesContext,
        family: &dyn Forecaster,
        forecast_week: IsoWeek,
    ) -> Result<(), ServiceError> {
        let quarter = format!("{}-Q{}", forecast_week.year(), ((forecast_week.week() - 1) / 13 + 1).min(4));
        if store.state().tuned.as_ref().is_some_and(|t| t.quarter == quarter) {
            return Ok(());
        }
        let weeks = ctx.panel.weeks();
        let start = weeks.len() - (weeks.len() / 5).max(2);
        let validation = &weeks[start..];
        let actual = ctx.actuals(validation).map_err(ServiceError::Data)?;
        let fixed_window = self.config.champion.window.filter(|_| !family.scenario_independent());
        let mut space = family.search_space();
        if fixed_window.is_some() {
            space.params.retain(|(n, _)| n != "window");
        }
        let with_window = |mut p: Params| {
            if let Some(w) = fixed_window {
                p.insert("window".into(), ParamValue::Int(w as i64));
            }
            p
        };
        let objective = |p: &Params, seed: u64| {
            let pred = family.fit_predict(ctx, self.config.scenario, &with_window(p.clone()), validation[0], validation, seed)?;
            rmse(&actual, &pred).map_err(|e| e.to_string())
        };
        let result = random_search(&space, self.config.champion.retune_trials, objective, self.config.champion.seed)
            .map_err(|e| ServiceError::Training(e.to_string()))?;
        info!(%quarter, rmse = result.best_rmse, "champion re-tuned");
        self.append(store, Event::ChampionTuned { quarter, params: with_window(result.best_params) })
    }

    fn data_fingerprint(&self, ctx: &SeriesContext, params: &Params) -> String {
        let key = serde_json::json!({
            "panel": fingerprint(&ctx.panel),
            "family": self.config.champion.family,
            "params": params,
            "scenario": self.config.scenario.to_string(),
            "seed": self.config.champion.seed,
        });
        hex_digest(key.to_string().as_bytes())
    }

    /// Fits the champion on everything in `ctx` and forecasts the target's
    /// next week, reading feature values from `markets` (latest known value
    /// when a week is missing).
    fn forecast_with(
        &self,
        ctx: &SeriesContext,
        markets: &BTreeMap<MarketId, MarketData>,
        family: &dyn Forecaster,
        params: &Params,
        data_fingerprint: String,
    ) -> Result<ForecastRecord, ServiceError> {
        let (last_week, week) = self.last_target(markets)?;
        let last_price = markets[&self.config.target_market].prices[&last_week].to_f64();
        let panel_end = *ctx.panel.weeks().last().expect("aligned panel is non-empty");
        let fit_before = panel_end.succ().map_err(|e| ServiceError::Data(e.to_string()))?;
        let model = family
            .fit(ctx, self.config.scenario, params, fit_before, self.config.champion.seed)
            .map_err(ServiceError::Training)?;
        let predicted = predict_next(&model, ctx, markets, week)?;
        if !predicted.is_finite() {
            return Err(ServiceError::Training("non-finite forecast".into()));
        }
        let model_json = serde_json::to_vec(&model).map_err(StoreError::from)?;
        Ok(ForecastRecord {
            target: self.config.target_market.clone(),
            week,
            predicted_price: predicted,
            last_observed_week: last_week,
            last_observed_price: last_price,
            direction: Direction::of_change(predicted, last_price),
            model: family.key().to_string(),
            model_fingerprint: hex_digest(&model_json)[..16].to_string(),
            data_fingerprint,
            created_at: self.clock.now(),
        })
    }

    /// Records an agreed price for the target market. Later settlements of
    /// the same week supersede earlier ones.
    pub fn record_settlement(&self, week: IsoWeek, agreed_price: f64, entered_by: &str) -> Result<SettlementRecord, ServiceError> {
        if !agreed_price.is_finite() || agreed_price <= 0.0 || !Price::from_f64(agreed_price).is_positive() {
            return Err(ServiceError::Validation(format!("agreed_price must be positive, got {agreed_price}")));
        }
        let entered_by = entered_by.trim();
        if entered_by.is_empty() {
            return Err(ServiceError::Validation("entered_by must not be empty".into()));
        }
        let mut store = self.lock();
        let current = self.current_week()?;
        let limit = store.state().latest_forecast().map_or(current, |f| f.week.max(current));
        if week > limit {
            return Err(ServiceError::Validation(format!("week {week} is beyond the current forecast week {limit}")));
        }
        let target = self.config.target_market.clone();
        let weekday = self.config.calendar.weekday(&target).map_err(|e| ServiceError::Validation(e.to_string()))?;
        let record = SettlementRecord {
            week,
            agreed_price: Price::from_f64(agreed_price),
            entered_by: entered_by.to_string(),
            entered_at: self.clock.now(),
        };
        self.append(&mut store, Event::Settlement { market: target, weekday, record: record.clone() })?;
        Ok(record)
    }

    /// Forecast with hypothetical prices substituted in. Nothing is stored.
    pub fn whatif(&self, overrides: &[PriceOverride]) -> Result<ForecastRecord, ServiceError> {
        let state = self.state();
        let mut markets = state.markets.clone();
        for o in overrides {
            if !o.price.is_finite() || o.price <= 0.0 {
                return Err(ServiceError::Validation(format!("price for {} {} must be positive", o.market, o.week)));
            }
            let weekday = self
                .config
                .calendar
                .weekday(&o.market)
                .map_err(|_| ServiceError::Validation(format!("unknown market {}", o.market)))?;
            markets.entry(o.market.clone()).or_insert_with(|| MarketData::new(weekday)).prices.insert(o.week, Price::from_f64(o.price));
        }
        let family = self.forecaster();
        let ctx = self.context(&markets, family.as_ref())?;
        let params = self.champion_params(&state, family.as_ref());
        let fp = self.data_fingerprint(&ctx, &params);
        self.forecast_with(&ctx, &markets, family.as_ref(), &params, fp)
    }

    pub fn store_report(&self, report: EvaluationReport) -> Result<(), ServiceError> {
        let mut store = self.lock();
        self.append(&mut store, Event::Report { report: Box::new(report) })
    }

    /// True when the scheduled cycle for `now`'s week has not run yet and
    /// its weekday and time have been reached.
    pub fn cycle_due(&self, now: DateTime<Utc>) -> bool {
        let time = self.config.cycle_time().expect("validated in open");
        cycle_due(now, self.state().last_cycle.as_ref().map(|c| c.week), self.config.cycle_weekday, time)
    }
}

pub fn cycle_due(now: DateTime<Utc>, last_cycle_week: Option<IsoWeek>, weekday: Weekday, time: NaiveTime) -> bool {
    let Ok(week) = IsoWeek::from_date(now.date_naive()) else { return false };
    let reached = now.weekday().num_days_from_monday() > weekday.num_days_from_monday()
        || (now.weekday() == weekday && now.time() >= time);
    reached && last_cycle_week != Some(week)
}

fn predict_next(
    model: &TrainedModel,
    ctx: &SeriesContext,
    markets: &BTreeMap<MarketId, MarketData>,
    week: IsoWeek,
) -> Result<f64, ServiceError> {
    let out = if model.is_windowed() {
        let offsets =
            offsets_for(&model.markets, &model.target, model.scenario, &ctx.calendar).map_err(|e| ServiceError::Data(e.to_string()))?;
        let row = feature_row(&offsets, model.window, week, |m, w| {
            markets.get(m)?.prices.range(..=w).next_back().map(|(_, p)| p.to_f64())
        })
        .map_err(|e| ServiceError::Data(e.to_string()))?;
        model.predict_rows(&Matrix::from_rows(&[row])).map_err(|e| ServiceError::Training(e.to_string()))?
    } else {
        model.predict_weeks(&ctx.panel, &ctx.calendar, &[week], false).map_err(ServiceError::Training)?
    };
    Ok(out[0])
}

/// Outlier repairs not yet applied, skipping settled weeks.
fn pending_repairs(state: &State, threshold: Price) -> Vec<RepairEntry> {
    let mut out = Vec::new();
    for (m, d) in &state.markets {
        let (_, log) = repair_outliers(&d.to_series(m), threshold);
        out.extend(log.into_iter().filter(|e| !d.settled.contains(&e.week)));
    }
    out
}
