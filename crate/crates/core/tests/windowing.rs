use chrono::Duration;
use porkcast_core::domain::{IsoWeek, LagScenario, MarketId, PublicationCalendar};
use porkcast_core::ingest::PricePanel;
use porkcast_core::synthetic::lead_lag_panel;
use porkcast_core::windowing::*;
use proptest::prelude::*;

/// Freshest week whose price for `market` may be used when the target
/// prices week `tw`, found by scanning calendar dates backwards.
fn freshest_usable(
    market: &MarketId,
    target: &MarketId,
    tw: IsoWeek,
    scenario: LagScenario,
    cal: &PublicationCalendar,
) -> IsoWeek {
    let target_decision = tw.date_on(cal.weekday(target).unwrap());
    let mut s = tw;
    loop {
        let decided = s.date_on(cal.weekday(market).unwrap());
        let usable = match scenario {
            LagScenario::PublicDelayed { delay_weeks } => {
                s.monday() + Duration::days(7 * delay_weeks as i64) <= tw.monday()
            }
            LagScenario::SubscriptionSameWeek => decided < target_decision,
        };
        if usable {
            return s;
        }
        s = s.pred().unwrap();
    }
}

fn oracle_row(panel: &PricePanel, target: &MarketId, tw: IsoWeek, window: usize, sc: LagScenario, cal: &PublicationCalendar) -> Option<Vec<f64>> {
    let mut row = Vec::new();
    for (j, m) in panel.markets().iter().enumerate() {
        let fresh = freshest_usable(m, target, tw, sc, cal);
        for k in 0..window {
            let t = panel.week_index(&fresh.add_weeks(-(k as i64)).unwrap())?;
            row.push(panel.value(t, j).to_f64());
        }
    }
    Some(row)
}

#[test]
fn every_cell_matches_the_calendar_oracle() {
    let (panel, cal, target) = lead_lag_panel(5);
    for sc in [LagScenario::public(), LagScenario::subscription(), LagScenario::PublicDelayed { delay_weeks: 1 }] {
        for window in 2..=12 {
            let ds: SupervisedDataset = build_dataset(&panel, &target, window, sc, &cal).unwrap();
            assert!(audit_leakage(&ds, &panel, &cal).unwrap().is_empty());
            // every week with a complete oracle row is a sample, in order
            let expected_weeks: Vec<IsoWeek> = panel
                .weeks()
                .iter()
                .copied()
                .filter(|&tw| oracle_row(&panel, &target, tw, window, sc, &cal).is_some())
                .collect();
            assert_eq!(ds.target_weeks, expected_weeks, "{sc} w={window}");
            for (r, &tw) in ds.target_weeks.iter().enumerate() {
                let expect = oracle_row(&panel, &target, tw, window, sc, &cal).unwrap();
                assert_eq!(ds.features.row(r), expect.as_slice(), "{sc} w={window} week {tw}");
                let ti = panel.week_index(&tw).unwrap();
                let mi = panel.market_index(&target).unwrap();
                assert_eq!(ds.targets[r], panel.value(ti, mi).to_f64());
            }
        }
    }
}

#[test]
fn sample_counts_for_the_full_panel() {
    let (panel, cal, target) = lead_lag_panel(5);
    let public: SupervisedDataset = build_dataset(&panel, &target, 2, LagScenario::public(), &cal).unwrap();
    let sub: SupervisedDataset = build_dataset(&panel, &target, 2, LagScenario::subscription(), &cal).unwrap();
    assert_eq!(public.len(), 319);
    assert_eq!(sub.len(), 320);
    for w in 2..=12 {
        let p: SupervisedDataset = build_dataset(&panel, &target, w, LagScenario::public(), &cal).unwrap();
        let s: SupervisedDataset = build_dataset(&panel, &target, w, LagScenario::subscription(), &cal).unwrap();
        assert!(s.len() >= p.len());
        assert_eq!(p.n_features(), 8 * w);
    }
    let (train, test) = chrono_split(&public, DEFAULT_TRAIN_FRACTION).unwrap();
    assert_eq!((train.len(), test.len()), (255, 64));
    assert!(train.target_weeks.last() < test.target_weeks.first());
}

#[test]
fn tampered_cells_are_reported() {
    let (panel, cal, target) = lead_lag_panel(5);
    let mut ds: SupervisedDataset = build_dataset(&panel, &target, 3, LagScenario::subscription(), &cal).unwrap();
    ds.offsets.iter_mut().for_each(|o| o.offset_weeks = 0);
    let v = audit_leakage(&ds, &panel, &cal).unwrap();
    assert!(v.iter().any(|x| x.reason.contains("not decided before")));
    let mut ds: SupervisedDataset = build_dataset(&panel, &target, 3, LagScenario::public(), &cal).unwrap();
    ds.features[(10, 0)] += 1.0;
    let v = audit_leakage(&ds, &panel, &cal).unwrap();
    assert_eq!(v.len(), 1);
    assert_eq!((v[0].row, v[0].feature), (10, 0));
}

#[test]
fn bad_inputs_are_rejected() {
    let (panel, cal, target) = lead_lag_panel(5);
    assert!(matches!(build_dataset::<f64>(&panel, &target, 0, LagScenario::public(), &cal), Err(WindowError::InvalidWindow(0))));
    assert!(matches!(
        build_dataset::<f64>(&panel, &target, 400, LagScenario::public(), &cal),
        Err(WindowError::EmptyDataset { .. })
    ));
    let ghost = MarketId::new("FR-RUNGIS").unwrap();
    assert!(build_dataset::<f64>(&panel, &ghost, 2, LagScenario::public(), &cal).is_err());
    assert!(build_dataset::<f64>(&panel, &target, 2, LagScenario::PublicDelayed { delay_weeks: 0 }, &cal).is_err());
    let ds: SupervisedDataset = build_dataset(&panel, &target, 2, LagScenario::public(), &cal).unwrap();
    assert!(chrono_split(&ds, 1.0).is_err());
    assert!(chrono_split(&ds.subset(&[0]), 0.8).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn construction_is_deterministic_and_f32_agrees(seed in 0u64..1000, window in 1usize..12, sub in any::<bool>()) {
        let (panel, cal, target) = lead_lag_panel(seed);
        let sc = if sub { LagScenario::subscription() } else { LagScenario::public() };
        let a: SupervisedDataset = build_dataset(&panel, &target, window, sc, &cal).unwrap();
        let b: SupervisedDataset = build_dataset(&panel, &target, window, sc, &cal).unwrap();
        prop_assert_eq!(&a, &b);
        let c: SupervisedDataset<f32> = build_dataset(&panel, &target, window, sc, &cal).unwrap();
        prop_assert_eq!(&a.target_weeks, &c.target_weeks);
        for r in 0..a.len() {
            for (x, y) in a.features.row(r).iter().zip(c.features.row(r)) {
                prop_assert!((*x as f32 - y).abs() <= 1e-6);
            }
        }
        prop_assert!(audit_leakage(&c, &panel, &cal).unwrap().is_empty());
    }
}
