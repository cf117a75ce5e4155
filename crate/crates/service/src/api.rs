//! JSON HTTP API.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State as AxState};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, NaiveDate, Utc};
use porkcast_core::analysis::{pearson_matrix, select_markets};
use porkcast_core::domain::{IsoWeek, MarketId};
use porkcast_core::ingest::align_panel;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;
use tracing::{error, info};

use crate::records::{Direction, ForecastRecord};
use crate::service::{PriceOverride, Service, ServiceError};

/// An error response: `{"error": {"code", "message"}}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": { "code": self.code, "message": self.message } }))).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let (status, code) = match &e {
            ServiceError::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation_error"),
            ServiceError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ServiceError::Data(_) => (StatusCode::CONFLICT, "data_unavailable"),
            ServiceError::Training(_) => (StatusCode::INTERNAL_SERVER_ERROR, "training_failed"),
            ServiceError::Store(_) => (StatusCode::INTERNAL_SERVER_ERROR, "store_error"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_body", r.body_text())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;
type Shared = Arc<Service>;

fn parse_week(s: &str) -> Result<IsoWeek, ApiError> {
    s.parse().map_err(|e: porkcast_core::domain::DomainError| ApiError::new(StatusCode::BAD_REQUEST, "malformed_week", e.to_string()))
}

/// All routes under `/api`.
pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/markets", get(markets))
        .route("/api/series/{market}", get(series))
        .route("/api/correlations", get(correlations))
        .route("/api/forecast/latest", get(forecast_latest))
        .route("/api/forecast/history", get(forecast_history))
        .route("/api/settlement", post(settlement))
        .route("/api/cycle", post(cycle))
        .route("/api/report", get(report))
        .route("/api/whatif", post(whatif))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(service)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub last_cycle: Option<DateTime<Utc>>,
    pub stale: bool,
    pub events: u64,
}

async fn health(AxState(svc): AxState<Shared>) -> Json<Health> {
    let st = svc.state();
    Json(Health {
        status: "ok".into(),
        last_cycle: st.last_cycle.as_ref().map(|c| c.started_at),
        stale: st.last_cycle.as_ref().is_some_and(|c| c.stale),
        events: st.events,
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MarketInfo {
    pub id: MarketId,
    pub name: String,
    pub weekday: chrono::Weekday,
    pub is_target: bool,
    pub observations: usize,
    pub first_week: Option<IsoWeek>,
    pub last_week: Option<IsoWeek>,
}

async fn markets(AxState(svc): AxState<Shared>) -> Json<Vec<MarketInfo>> {
    let st = svc.state();
    let cfg = svc.config();
    let out = cfg
        .calendar
        .iter()
        .map(|(id, day)| {
            let data = st.markets.get(id);
            MarketInfo {
                id: id.clone(),
                name: id.display_name(),
                weekday: *day,
                is_target: *id == cfg.target_market,
                observations: data.map_or(0, |d| d.prices.len()),
                first_week: data.and_then(|d| d.prices.keys().next().copied()),
                last_week: data.and_then(|d| d.last_week()),
            }
        })
        .collect();
    Json(out)
}

#[derive(Debug, Deserialize)]
struct RangeQuery {
    from: Option<String>,
    to: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub week: IsoWeek,
    pub date: NaiveDate,
    pub price: f64,
    pub settled: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SeriesView {
    pub market: MarketId,
    pub points: Vec<SeriesPoint>,
}

async fn series(AxState(svc): AxState<Shared>, Path(market): Path<String>, Query(q): Query<RangeQuery>) -> ApiResult<SeriesView> {
    let id = MarketId::new(&market).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_market", e.to_string()))?;
    let from = q.from.as_deref().map(parse_week).transpose()?;
    let to = q.to.as_deref().map(parse_week).transpose()?;
    let st = svc.state();
    let Some(data) = st.markets.get(&id) else {
        if svc.config().calendar.contains(&id) {
            return Ok(Json(SeriesView { market: id, points: Vec::new() }));
        }
        return Err(ApiError::new(StatusCode::NOT_FOUND, "unknown_market", format!("no market {id}")));
    };
    let points = data
        .prices
        .iter()
        .filter(|(w, _)| from.is_none_or(|f| **w >= f) && to.is_none_or(|t| **w <= t))
        .map(|(&week, p)| SeriesPoint { week, date: week.date_on(data.weekday), price: p.to_f64(), settled: data.settled.contains(&week) })
        .collect();
    Ok(Json(SeriesView { market: id, points }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CorrelationView {
    pub target: MarketId,
    pub threshold: f64,
    pub markets: Vec<MarketId>,
    pub matrix: Vec<Vec<f64>>,
    pub selected: Vec<MarketId>,
}

async fn correlations(AxState(svc): AxState<Shared>) -> ApiResult<CorrelationView> {
    let st = svc.state();
    let cfg = svc.config();
    let series: Vec<_> = st
        .markets
        .iter()
        .filter(|(m, d)| cfg.calendar.contains(m) && !d.prices.is_empty())
        .map(|(m, d)| d.to_series(m))
        .collect();
    let unavailable = |e: String| ApiError::new(StatusCode::CONFLICT, "data_unavailable", e);
    let (panel, _) = align_panel(&series).map_err(|e| unavailable(e.to_string()))?;
    let corr = pearson_matrix(&panel).map_err(|e| unavailable(e.to_string()))?;
    let selected = select_markets(&corr, &cfg.target_market, cfg.correlation_threshold).map_err(|e| unavailable(e.to_string()))?;
    let n = corr.markets.len();
    let matrix = (0..n).map(|i| (0..n).map(|j| corr.r[(i, j)]).collect()).collect();
    Ok(Json(CorrelationView {
        target: cfg.target_market.clone(),
        threshold: cfg.correlation_threshold,
        markets: corr.markets,
        matrix,
        selected,
    }))
}

async fn forecast_latest(AxState(svc): AxState<Shared>) -> ApiResult<ForecastRecord> {
    svc.state()
        .latest_forecast()
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no_forecast", "no forecast has been issued yet"))
}

/// A week with both an active forecast and an active settlement.
#[derive(Debug, Serialize, Deserialize)]
pub struct ForecastPair {
    pub week: IsoWeek,
    pub predicted_price: f64,
    pub agreed_price: f64,
    pub abs_error: f64,
    pub direction: Direction,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ForecastHistory {
    pub forecasts: Vec<ForecastRecord>,
    pub pairs: Vec<ForecastPair>,
    pub max_abs_error: Option<f64>,
}

async fn forecast_history(AxState(svc): AxState<Shared>) -> Json<ForecastHistory> {
    let st = svc.state();
    let pairs: Vec<ForecastPair> = st
        .forecasts
        .values()
        .filter_map(|f| {
            let s = st.active_settlement(&f.week)?;
            let agreed = s.agreed_price.to_f64();
            Some(ForecastPair {
                week: f.week,
                predicted_price: f.predicted_price,
                agreed_price: agreed,
                abs_error: (f.predicted_price - agreed).abs(),
                direction: f.direction,
            })
        })
        .collect();
    let max_abs_error = pairs.iter().map(|p| p.abs_error).reduce(f64::max);
    Json(ForecastHistory { forecasts: st.forecasts.values().cloned().collect(), pairs, max_abs_error })
}

#[derive(Debug, Deserialize)]
struct SettlementBody {
    week: String,
    agreed_price: f64,
    entered_by: String,
}

async fn settlement(
    AxState(svc): AxState<Shared>,
    body: Result<Json<SettlementBody>, JsonRejection>,
) -> Result<(StatusCode, Json<crate::records::SettlementRecord>), ApiError> {
    let Json(b) = body?;
    let week: IsoWeek = b
        .week
        .parse()
        .map_err(|e: porkcast_core::domain::DomainError| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "malformed_week", e.to_string()))?;
    let rec = blocking(move || svc.record_settlement(week, b.agreed_price, &b.entered_by)).await?;
    Ok((StatusCode::CREATED, Json(rec)))
}

async fn cycle(AxState(svc): AxState<Shared>) -> ApiResult<crate::records::CycleSummary> {
    blocking(move || svc.run_cycle()).await.map(Json)
}

async fn report(AxState(svc): AxState<Shared>) -> Result<Json<serde_json::Value>, ApiError> {
    let st = svc.state();
    let r = st.report.as_ref().ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no_report", "no evaluation report stored"))?;
    Ok(Json(serde_json::to_value(r).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "encode", e.to_string()))?))
}

#[derive(Debug, Deserialize)]
struct WhatIfBody {
    overrides: Vec<PriceOverride>,
}

async fn whatif(AxState(svc): AxState<Shared>, body: Result<Json<WhatIfBody>, JsonRejection>) -> ApiResult<ForecastRecord> {
    let Json(b) = body?;
    blocking(move || svc.whatif(&b.overrides)).await.map(Json)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

/// A running server. Dropping it without [`ServiceHandle::shutdown`] leaves
/// the server running until the runtime stops.
pub struct ServiceHandle {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    server: JoinHandle<std::io::Result<()>>,
    timer: Option<JoinHandle<()>>,
}

impl ServiceHandle {
    pub async fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(t) = self.timer.take() {
            t.abort();
        }
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        self.server.await.map_err(std::io::Error::other)?
    }

    /// Waits until the server stops on its own.
    pub async fn wait(self) -> std::io::Result<()> {
        self.server.await.map_err(std::io::Error::other)?
    }
}

/// Binds `service.config().listen_addr` and serves the API. With
/// `scheduler`, a background task runs the weekly cycle when it is due,
/// checking once per `tick`.
pub async fn serve_api(service: Shared, scheduler: Option<std::time::Duration>) -> std::io::Result<ServiceHandle> {
    let listener = tokio::net::TcpListener::bind(&service.config().listen_addr).await?;
    let addr = listener.local_addr()?;
    let (stop, stopped) = oneshot::channel::<()>();
    let app = router(service.clone());
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = stopped.await;
            })
            .await
    });
    let timer = scheduler.map(|tick| {
        let svc = service.clone();
        tokio::spawn(async move {
            let mut iv = tokio::time::interval(tick);
            loop {
                iv.tick().await;
                if svc.cycle_due(svc.now()) {
                    let s = svc.clone();
                    match tokio::task::spawn_blocking(move || s.run_cycle()).await {
                        Ok(Ok(summary)) => info!("scheduled cycle: {}", summary.message),
                        Ok(Err(e)) => error!("scheduled cycle failed: {e}"),
                        Err(e) => error!("scheduled cycle panicked: {e}"),
                    }
                }
            }
        })
    });
    info!(%addr, "listening");
    Ok(ServiceHandle { addr, stop: Some(stop), server, timer })
}
