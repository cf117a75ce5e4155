mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use common::{data_week, Fixture};
use http_body_util::BodyExt;
use porkcast_service::*;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

fn assert_error(v: &Value, code: &str) {
    assert_eq!(v["error"]["code"], code, "{v}");
    assert!(v["error"]["message"].as_str().is_some_and(|m| !m.is_empty()));
}

fn app(fx: &Fixture) -> (Arc<Service>, axum::Router) {
    let svc = Arc::new(fx.open());
    (svc.clone(), router(svc))
}

#[tokio::test]
async fn health_and_markets() {
    let fx = Fixture::new(60);
    let (_, app) = app(&fx);
    let (s, v) = call(&app, "GET", "/api/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    assert!(v["last_cycle"].is_null());
    let (s, _) = call(&app, "POST", "/api/cycle", None).await;
    assert_eq!(s, StatusCode::OK);
    let (_, v) = call(&app, "GET", "/api/health", None).await;
    assert_eq!(v["last_cycle"], "2022-03-04T08:00:00Z");
    let (_, v) = call(&app, "GET", "/api/markets", None).await;
    let list = v.as_array().unwrap();
    assert_eq!(list.len(), 8);
    let lleida = list.iter().find(|m| m["id"] == "ES-LLEIDA").unwrap();
    assert_eq!(lleida["is_target"], true);
    assert_eq!(lleida["weekday"], "Thu");
    assert_eq!(lleida["observations"], 60);
    assert_eq!(lleida["first_week"], "2016-W01");
}

#[tokio::test]
async fn series_ranges_and_errors() {
    let fx = Fixture::new(60);
    let (_, app) = app(&fx);
    call(&app, "POST", "/api/cycle", None).await;
    let (s, v) = call(&app, "GET", "/api/series/ES-HUESCA?from=2016-W10&to=2016-W12", None).await;
    assert_eq!(s, StatusCode::OK);
    let pts = v["points"].as_array().unwrap();
    assert_eq!(pts.len(), 3);
    assert_eq!(pts[0]["week"], "2016-W10");
    assert_eq!(pts[0]["date"], "2016-03-09");
    assert_eq!(pts[0]["settled"], false);
    let (s, v) = call(&app, "GET", "/api/series/ES-HUESCA?from=2016-10", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_error(&v, "malformed_week");
    let (s, v) = call(&app, "GET", "/api/series/FR-RUNGIS", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_error(&v, "unknown_market");
    let (s, v) = call(&app, "GET", "/api/nothing", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_error(&v, "not_found");
}

#[tokio::test]
async fn forecast_settlement_round_trip() {
    let fx = Fixture::new(80);
    let (svc, app) = app(&fx);
    let (s, v) = call(&app, "GET", "/api/forecast/latest", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_error(&v, "no_forecast");
    let (_, cycle) = call(&app, "POST", "/api/cycle", None).await;
    assert_eq!(cycle["outcome"], "forecast");
    let (s, f) = call(&app, "GET", "/api/forecast/latest", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(f["week"], data_week(80).to_string());
    assert_eq!(serde_json::from_value::<ForecastRecord>(f.clone()).unwrap(), *svc.state().latest_forecast().unwrap());

    let week = data_week(80).to_string();
    let (s, rec) = call(&app, "POST", "/api/settlement", Some(json!({"week": week, "agreed_price": 1.25, "entered_by": "lonja"}))).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(rec["agreed_price"], 1.25);
    let (_, v) = call(&app, "GET", &format!("/api/series/ES-LLEIDA?from={week}"), None).await;
    assert_eq!(v["points"], json!([{"week": week, "date": data_week(80).date_on(chrono::Weekday::Thu).to_string(), "price": 1.25, "settled": true}]));

    let (_, h) = call(&app, "GET", "/api/forecast/history", None).await;
    let pairs = h["pairs"].as_array().unwrap();
    assert_eq!(pairs.len(), 1);
    let err = (f["predicted_price"].as_f64().unwrap() - 1.25).abs();
    assert!((pairs[0]["abs_error"].as_f64().unwrap() - err).abs() < 1e-12);
    assert_eq!(h["max_abs_error"], pairs[0]["abs_error"]);

    let (s, v) = call(&app, "POST", "/api/settlement", Some(json!({"week": week, "agreed_price": -1, "entered_by": "x"}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error(&v, "validation_error");
    let (s, v) = call(&app, "POST", "/api/settlement", Some(json!({"week": "W80", "agreed_price": 1.2, "entered_by": "x"}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error(&v, "malformed_week");
    let (s, v) = call(&app, "POST", "/api/settlement", Some(json!({"week": week}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_error(&v, "invalid_body");
}

#[tokio::test]
async fn whatif_leaves_the_store_alone() {
    let fx = Fixture::new(80);
    let (svc, app) = app(&fx);
    call(&app, "POST", "/api/cycle", None).await;
    let events = svc.state().events;
    let body = json!({"overrides": [{"market": "ES-HUESCA", "week": data_week(79).to_string(), "price": 1.8}]});
    let (s, v) = call(&app, "POST", "/api/whatif", Some(body)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["week"], data_week(80).to_string());
    assert!(v["predicted_price"].as_f64().unwrap().is_finite());
    assert_eq!(svc.state().events, events);
    let (s, v) = call(&app, "POST", "/api/whatif", Some(json!({"overrides": [{"market": "ES-HUESCA", "week": "2016-W10", "price": 0}]}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error(&v, "validation_error");
}

#[tokio::test]
async fn correlations_and_report() {
    let fx = Fixture::new(120);
    let (svc, app) = app(&fx);
    let (s, v) = call(&app, "GET", "/api/correlations", None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_error(&v, "data_unavailable");
    call(&app, "POST", "/api/cycle", None).await;
    let (s, v) = call(&app, "GET", "/api/correlations", None).await;
    assert_eq!(s, StatusCode::OK);
    let m = v["matrix"].as_array().unwrap();
    assert_eq!(m.len(), 8);
    assert_eq!(v["markets"].as_array().unwrap().len(), 8);
    assert_eq!(v["selected"][0], "ES-LLEIDA");
    for (i, row) in m.iter().enumerate() {
        assert!((row[i].as_f64().unwrap() - 1.0).abs() < 1e-12);
    }

    let (s, v) = call(&app, "GET", "/api/report", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_error(&v, "no_report");
    let (panel, cal, target) = porkcast_core::synthetic::lead_lag_panel(3);
    let ctx = porkcast_core::families::SeriesContext::new(panel, target, cal).unwrap();
    let fams = vec![porkcast_core::families::family_by_key("ridge", Default::default()).unwrap()];
    let scen = [porkcast_core::domain::LagScenario::public()];
    let opts = porkcast_core::ReportOptions { trials: 0, ..Default::default() };
    let report = porkcast_core::evaluation::scenario_report(&ctx, &fams, &scen, &opts).unwrap();
    svc.store_report(report.clone()).unwrap();
    let (s, v) = call(&app, "GET", "/api/report", None).await;
    assert_eq!(s, StatusCode::OK);
    let back: porkcast_core::EvaluationReport = serde_json::from_value(v).unwrap();
    assert_eq!(back, report);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn served_over_tcp() {
    let fx = Fixture::new(60);
    let svc = Arc::new(fx.open());
    let handle = serve_api(svc.clone(), None).await.unwrap();
    let url = format!("http://{}/api/health", handle.addr);
    let body = tokio::task::spawn_blocking(move || ureq::get(&url).call().unwrap().into_body().read_to_string().unwrap())
        .await
        .unwrap();
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["status"], "ok");

    // a second server on the same port fails to start
    let mut cfg = fx.config();
    cfg.listen_addr = handle.addr.to_string();
    cfg.data_dir = fx.dir.path().join("other");
    let other = Arc::new(Service::open(cfg, fx.clock.clone()).unwrap().0);
    assert!(serve_api(other, None).await.is_err());
    handle.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn scheduler_runs_the_due_cycle_once() {
    let fx = Fixture::new(60);
    let svc = Arc::new(fx.open());
    // the fixture clock is Friday 08:00, past the default 06:00 slot
    assert!(svc.cycle_due(svc.now()));
    let handle = serve_api(svc.clone(), Some(std::time::Duration::from_millis(20))).await.unwrap();
    for _ in 0..200 {
        if svc.state().last_cycle.is_some() {
            break;
        }
        tokio::time::sleep(std::time::Duration::from_millis(20)).await;
    }
    tokio::time::sleep(std::time::Duration::from_millis(100)).await;
    handle.shutdown().await.unwrap();
    let st = svc.state();
    assert!(st.last_cycle.is_some());
    assert_eq!(st.forecast_history.len(), 1);
    assert!(!svc.cycle_due(svc.now()));
}
