use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use chrono::{Datelike, Duration as Days, NaiveDate, Weekday};
use porkcast_core::domain::*;
use porkcast_core::ingest::*;
use proptest::prelude::*;

fn market(s: &str) -> MarketId {
    MarketId::new(s).unwrap()
}

fn series(m: &str, start: IsoWeek, prices: &[i64]) -> MarketSeries {
    let id = market(m);
    MarketSeries {
        market: id.clone(),
        observations: prices
            .iter()
            .enumerate()
            .map(|(k, &p)| PriceObservation {
                market: id.clone(),
                week: start.add_weeks(k as i64).unwrap(),
                price: Price::from_units(p),
                decision_weekday: Weekday::Mon,
            })
            .collect(),
    }
}

fn week(y: i32, w: u32) -> IsoWeek {
    IsoWeek::new(y, w).unwrap()
}

/// ISO week of the Monday `k` weeks after `w`'s Monday, by calendar days.
fn calendar_oracle(w: IsoWeek, k: i64) -> IsoWeek {
    let d = w.monday() + Days::days(7 * k);
    let iso = d.iso_week();
    week(iso.year(), iso.week())
}

#[test]
fn week_boundaries_match_calendar() {
    assert_eq!(week_add(week(2016, 52), 1).unwrap(), calendar_oracle(week(2016, 52), 1));
    assert_eq!(week_add(week(2016, 52), 1).unwrap(), week(2017, 1));
    assert_eq!(week_add(week(2020, 1), -1).unwrap(), week(2019, 52));
    // 2020 has 53 ISO weeks
    assert_eq!(week_add(week(2021, 1), -1).unwrap(), week(2020, 53));
    assert!(IsoWeek::new(2019, 53).is_err());
}

prop_compose! {
    fn any_week()(y in 2015i32..2075, w in 1u32..=52) -> IsoWeek {
        IsoWeek::new(y, w).unwrap()
    }
}

proptest! {
    #[test]
    fn week_arithmetic_is_consistent(w in any_week(), a in -600i64..600, b in -600i64..600) {
        let direct = week_add(w, a + b).unwrap();
        let stepped = week_add(week_add(w, a).unwrap(), b).unwrap();
        prop_assert_eq!(direct, stepped);
        prop_assert_eq!(week_add(week_add(w, a).unwrap(), -a).unwrap(), w);
        prop_assert_eq!(week_add(w, a).unwrap(), calendar_oracle(w, a));
        prop_assert_eq!(w.weeks_until(&week_add(w, a).unwrap()), a);
        prop_assert_eq!(a > 0, week_add(w, a).unwrap() > w);
    }

    #[test]
    fn validation_detects_exactly_the_corruptions(
        prices in prop::collection::vec(1i64..40_000, 3..40),
        zero_at in prop::option::of(any::<prop::sample::Index>()),
        dup_at in prop::option::of(any::<prop::sample::Index>()),
    ) {
        let mut s = series("ES-LLEIDA", week(2018, 10), &prices);
        prop_assert!(validate_series(&s).is_ok());
        if let Some(i) = zero_at {
            s.observations[i.index(prices.len())].price = Price::from_units(0);
        }
        if let Some(i) = dup_at {
            let i = i.index(prices.len() - 1) + 1;
            s.observations[i].week = s.observations[i - 1].week;
        }
        let report = validate_series(&s);
        let has_zero = report.violations.iter().any(|v| matches!(v, Violation::NonPositivePrice { .. }));
        let has_dup = report.violations.iter().any(|v| matches!(v, Violation::DuplicateWeek { .. }));
        prop_assert_eq!(has_zero, zero_at.is_some());
        prop_assert_eq!(has_dup, dup_at.is_some());
        prop_assert_eq!(report.is_ok(), zero_at.is_none() && dup_at.is_none());
    }

    #[test]
    fn repair_is_idempotent_and_uses_neighbor_means(
        prices in prop::collection::vec(5_000i64..30_000, 0..40),
        spikes in prop::collection::vec((any::<prop::sample::Index>(), -15_000i64..15_000), 0..4),
        thr in 500i64..8_000,
    ) {
        let mut p = prices.clone();
        if !p.is_empty() {
            for (i, d) in &spikes {
                let k = i.index(p.len());
                p[k] = (p[k] + d).max(1);
            }
        }
        let s = series("ES-HUESCA", week(2017, 1), &p);
        let threshold = Price::from_units(thr);
        let (once, log) = repair_outliers(&s, threshold);
        let (twice, log2) = repair_outliers(&once, threshold);
        prop_assert_eq!(&once, &twice);
        prop_assert!(log2.is_empty());
        if let (Some(a), Some(b)) = (once.observations.first(), once.observations.last()) {
            prop_assert_eq!(a.price, s.observations[0].price);
            prop_assert_eq!(b.price, s.observations.last().unwrap().price);
        }
        prop_assert!(log.iter().all(|e| e.rule == "neighbor-mean"));
        // every surviving point is within the threshold of its neighbours' mean
        for w in once.observations.windows(3) {
            let dev = (2 * w[1].price.units() - w[0].price.units() - w[2].price.units()).abs();
            prop_assert!(dev <= 2 * thr);
        }
    }

    #[test]
    fn csv_round_trips(prices in prop::collection::vec(1i64..50_000, 1..30), start in any_week()) {
        let a = series("ES-ZARAGOZA", start, &prices);
        let mut b = series("ES-MURCIA", start, &prices);
        b.observations.iter_mut().for_each(|o| o.decision_weekday = Weekday::Thu);
        let text = write_price_csv(&[a.clone(), b.clone()]);
        let parsed = parse_price_csv(&text).unwrap();
        prop_assert_eq!(parsed.len(), 2);
        let back_a = parsed.iter().find(|s| s.market == a.market).unwrap();
        let back_b = parsed.iter().find(|s| s.market == b.market).unwrap();
        prop_assert_eq!(back_a, &a);
        prop_assert_eq!(back_b, &b);
        prop_assert_eq!(write_price_csv(&parsed), write_price_csv(&[b, a]));
    }

    #[test]
    fn aligned_panels_are_rectangular_and_filled_forward(
        len_a in 5usize..30,
        shift in 0usize..5,
        holes in prop::collection::btree_set(1usize..25, 0..5),
    ) {
        let a = series("ES-SEGOVIA", week(2019, 1), &(0..len_a as i64).map(|k| 10_000 + k).collect::<Vec<_>>());
        let mut b = series("ES-LLEIDA", week(2019, 1).add_weeks(shift as i64).unwrap(), &(0..30).map(|k| 20_000 + k).collect::<Vec<_>>());
        let last = b.observations.len() - 1;
        let removed: Vec<usize> = holes.into_iter().filter(|&h| h < last).collect();
        for h in removed.iter().rev() {
            b.observations.remove(*h);
        }
        let Ok((panel, gaps)) = align_panel(&[a, b]) else {
            // ranges do not overlap once the start is shifted past A
            prop_assert!(shift >= len_a);
            return Ok(());
        };
        prop_assert_eq!(panel.n_markets(), 2);
        prop_assert!(panel.weeks().windows(2).all(|w| w[0].succ().unwrap() == w[1]));
        for j in 0..2 {
            for t in 0..panel.n_weeks() {
                if panel.is_filled(t, j) {
                    prop_assert!(t > 0 || gaps.iter().any(|g| g.week == panel.weeks()[0]));
                    if t > 0 {
                        prop_assert_eq!(panel.value(t, j), panel.value(t - 1, j));
                    }
                }
            }
        }
        let flagged = (0..2).flat_map(|j| (0..panel.n_weeks()).map(move |t| (t, j))).filter(|&(t, j)| panel.is_filled(t, j)).count();
        prop_assert_eq!(flagged, gaps.len());
    }
}

#[test]
fn parse_reports_line_numbers() {
    let text = "date,market,price_eur_kg\n2016-01-04,ES-ZARAGOZA,1.081\n2016-01-11,ES-ZARAGOZA,abc\n";
    match parse_price_csv(text) {
        Err(IngestError::Malformed { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    let ok = parse_price_csv("date,market,price_eur_kg\n2016-01-04,ES-ZARAGOZA,1.081\n").unwrap();
    assert_eq!(ok[0].observations[0].decision_weekday, Weekday::Mon);
    assert_eq!(ok[0].observations[0].date(), NaiveDate::from_ymd_opt(2016, 1, 4).unwrap());
}

/// Serves `responses` in order, one per connection, counting connections.
fn stub_server(status: &'static str, max: usize) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/prices.csv", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming().take(max) {
            let mut s = stream.unwrap();
            let mut buf = [0u8; 2048];
            let _ = s.read(&mut buf);
            counter.fetch_add(1, Ordering::SeqCst);
            let body = "date,market,price_eur_kg\n";
            let _ = write!(s, "HTTP/1.1 {status}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}", body.len());
        }
    });
    (url, hits)
}

#[test]
fn http_status_errors_carry_the_status() {
    let (url, hits) = stub_server("404 Not Found", 1);
    let err = fetch_source(&Source { url, format_hint: None }, Duration::from_secs(5)).unwrap_err();
    assert!(matches!(err, IngestError::SourceMissing { status: 404, .. }), "{err}");
    assert_eq!(hits.load(Ordering::SeqCst), 1);

    let (url, hits) = stub_server("503 Service Unavailable", 2);
    let err = fetch_source(&Source { url, format_hint: None }, Duration::from_secs(5)).unwrap_err();
    assert!(matches!(err, IngestError::SourceMissing { status: 503, .. }));
    assert_eq!(hits.load(Ordering::SeqCst), 2);

    let (url, _) = stub_server("200 OK", 1);
    let body = fetch_source(&Source { url, format_hint: Some("csv".into()) }, Duration::from_secs(5)).unwrap();
    assert_eq!(body, "date,market,price_eur_kg\n");
}

#[test]
fn unreachable_host_is_a_network_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}/x.csv");
    let err = fetch_source(&Source { url, format_hint: None }, Duration::from_secs(2)).unwrap_err();
    assert!(matches!(err, IngestError::Network { .. }), "{err}");
}
