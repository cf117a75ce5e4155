mod common;

use std::io::Write;

use chrono::{TimeZone, Utc, Weekday};
use common::week;
use porkcast_core::domain::{MarketId, Price, PriceObservation};
use porkcast_core::ingest::RepairEntry;
use porkcast_service::store::{SNAPSHOT_FILE, LOG_FILE};
use porkcast_service::*;
use proptest::prelude::*;

fn at(k: i64) -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(2022, 1, 3, 0, 0, 0).unwrap() + chrono::Duration::hours(k)
}

fn obs(m: &str, w: u32, units: i64) -> PriceObservation {
    PriceObservation { market: MarketId::new(m).unwrap(), week: week(2021, w), price: Price::from_units(units), decision_weekday: Weekday::Thu }
}

fn forecast(w: u32, p: f64) -> ForecastRecord {
    ForecastRecord {
        target: MarketId::new("ES-LLEIDA").unwrap(),
        week: week(2021, w),
        predicted_price: p,
        last_observed_week: week(2021, w - 1),
        last_observed_price: 1.3,
        direction: Direction::of_change(p, 1.3),
        model: "ridge".into(),
        model_fingerprint: "abc".into(),
        data_fingerprint: format!("d{w}{p}"),
        created_at: at(w as i64),
    }
}

fn settlement(w: u32, units: i64, who: &str) -> Event {
    Event::Settlement {
        market: MarketId::new("ES-LLEIDA").unwrap(),
        weekday: Weekday::Thu,
        record: SettlementRecord { week: week(2021, w), agreed_price: Price::from_units(units), entered_by: who.into(), entered_at: at(0) },
    }
}

#[test]
fn empty_and_counted_replays() {
    let (s, w, len) = replay("").unwrap();
    assert_eq!((s, w.len(), len), (State::default(), 0, 0));
    let dir = tempfile::tempdir().unwrap();
    let (mut store, _) = Store::open(dir.path()).unwrap();
    let k = 7;
    store.append(at(0), Event::Observations { observations: (1..=k).map(|w| obs("ES-LLEIDA", w, 13_000 + w as i64)).collect() }).unwrap();
    let (s, _, _) = replay(&std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap()).unwrap();
    assert_eq!(s.markets[&MarketId::new("ES-LLEIDA").unwrap()].prices.len(), k as usize);
    assert_eq!(s.events, 1);
}

#[test]
fn settlements_supersede_and_keep_history() {
    let dir = tempfile::tempdir().unwrap();
    let (mut store, _) = Store::open(dir.path()).unwrap();
    store.append(at(0), Event::Observations { observations: vec![obs("ES-LLEIDA", 5, 13_000)] }).unwrap();
    store.append(at(1), settlement(5, 12_500, "a")).unwrap();
    store.append(at(2), settlement(5, 12_600, "b")).unwrap();
    // upstream data does not overwrite an agreed price
    store.append(at(3), Event::Observations { observations: vec![obs("ES-LLEIDA", 5, 99_000)] }).unwrap();
    let s = store.state();
    let w = week(2021, 5);
    assert_eq!(s.settlements[&w].len(), 2);
    assert_eq!(s.active_settlement(&w).unwrap().entered_by, "b");
    assert_eq!(s.markets[&MarketId::new("ES-LLEIDA").unwrap()].prices[&w], Price::from_units(12_600));
}

#[test]
fn torn_tail_is_dropped_with_its_offset() {
    let dir = tempfile::tempdir().unwrap();
    {
        let (mut store, _) = Store::open(dir.path()).unwrap();
        store.append(at(0), Event::Observations { observations: vec![obs("ES-HUESCA", 1, 12_000)] }).unwrap();
        store.append(at(1), Event::Forecast { record: forecast(2, 1.21) }).unwrap();
    }
    let log = dir.path().join(LOG_FILE);
    let good_len = std::fs::metadata(&log).unwrap().len();
    std::fs::OpenOptions::new().append(true).open(&log).unwrap().write_all(br#"{"seq":3,"at":"2022-01-0"#).unwrap();
    let (store, warnings) = Store::open(dir.path()).unwrap();
    assert_eq!(warnings.len(), 1);
    assert_eq!(warnings[0].offset, good_len);
    assert_eq!(store.state().events, 2);
    assert_eq!(std::fs::metadata(&log).unwrap().len(), good_len);
    drop(store);
    // the repaired log opens cleanly and keeps appending
    let (mut store, warnings) = Store::open(dir.path()).unwrap();
    assert!(warnings.is_empty());
    store.append(at(2), Event::Forecast { record: forecast(3, 1.22) }).unwrap();
    assert_eq!(store.state().events, 3);
}

#[test]
fn corrupt_middle_entry_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    {
        let (mut store, _) = Store::open(dir.path()).unwrap();
        store.append(at(0), Event::Forecast { record: forecast(2, 1.21) }).unwrap();
    }
    let log = dir.path().join(LOG_FILE);
    let mut text = std::fs::read_to_string(&log).unwrap();
    let first_len = text.len() as u64;
    text.push_str("not json\n");
    std::fs::write(&log, &text).unwrap();
    match Store::open(dir.path()) {
        Err(StoreError::Corrupt { offset, .. }) => assert_eq!(offset, first_len),
        other => panic!("{other:?}"),
    }
    // out-of-order sequence numbers are also rejected
    let dup = text.lines().next().unwrap().to_string();
    std::fs::write(&log, format!("{dup}\n{dup}\n")).unwrap();
    assert!(matches!(Store::open(dir.path()), Err(StoreError::Corrupt { .. })));
}

#[test]
fn tampered_snapshot_refuses_to_open() {
    let dir = tempfile::tempdir().unwrap();
    {
        let (mut store, _) = Store::open(dir.path()).unwrap();
        store.append(at(0), Event::Forecast { record: forecast(2, 1.21) }).unwrap();
    }
    let snap = dir.path().join(SNAPSHOT_FILE);
    let text = std::fs::read_to_string(&snap).unwrap().replace("1.21", "1.31");
    std::fs::write(&snap, text).unwrap();
    assert!(matches!(Store::open(dir.path()), Err(StoreError::Divergence { log_events: 1 })));
    // a missing snapshot is rebuilt
    std::fs::remove_file(&snap).unwrap();
    assert!(Store::open(dir.path()).is_ok());
    assert!(snap.exists());
}

fn event_strategy() -> impl Strategy<Value = Event> {
    let market = prop::sample::select(vec!["ES-LLEIDA", "ES-HUESCA", "ES-MURCIA"]);
    prop_oneof![
        prop::collection::vec((market.clone(), 1u32..30, 5_000i64..20_000), 0..6).prop_map(|v| Event::Observations {
            observations: v.into_iter().map(|(m, w, p)| obs(m, w, p)).collect()
        }),
        (market, 1u32..30, 5_000i64..20_000).prop_map(|(m, w, p)| Event::Repairs {
            entries: vec![RepairEntry {
                market: MarketId::new(m).unwrap(),
                week: week(2021, w),
                original_value: Price::from_units(p + 9_000),
                replaced_value: Price::from_units(p),
                rule: "neighbor-mean".into(),
            }]
        }),
        (2u32..30, 0.5f64..2.5).prop_map(|(w, p)| Event::Forecast { record: forecast(w, p) }),
        (1u32..30, 5_000i64..20_000, "[a-z]{1,6}").prop_map(|(w, p, who)| settlement(w, p, &who)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn replay_equals_live_snapshot(events in prop::collection::vec(event_strategy(), 0..25), reopen_at in 0usize..25) {
        let dir = tempfile::tempdir().unwrap();
        let (mut store, _) = Store::open(dir.path()).unwrap();
        for (i, e) in events.into_iter().enumerate() {
            if i == reopen_at {
                drop(store);
                store = Store::open(dir.path()).unwrap().0;
            }
            store.append(at(i as i64), e).unwrap();
            let log = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
            let (replayed, warnings, _) = replay(&log).unwrap();
            prop_assert!(warnings.is_empty());
            let snap = std::fs::read(dir.path().join(SNAPSHOT_FILE)).unwrap();
            prop_assert_eq!(&replayed, store.state());
            prop_assert_eq!(replayed.to_snapshot(), snap);
        }
    }
}
