//! Leakage-safe supervised datasets from a price panel under a data-lag
//! scenario, and the chronological train/test split.
//!
//! A sample predicts the target market's price in week `t`. Market `m`
//! contributes its values at weeks `t − offset(m) − k` for `k` in
//! `0..window`, where `offset(m)` is how far behind `t` the freshest usable
//! value of `m` is when the target sets its price.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DomainError, IsoWeek, LagScenario, MarketId, PublicationCalendar};
use crate::ingest::PricePanel;
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WindowError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("window must be at least 1, got {0}")]
    InvalidWindow(usize),
    #[error("window {window} leaves no samples in a panel of {weeks} weeks")]
    EmptyDataset { window: usize, weeks: usize },
    #[error("target {0} is not in the panel")]
    UnknownTarget(MarketId),
    #[error("train fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("{n} samples cannot be split into non-empty train and test parts")]
    TooFewSamples { n: usize },
    #[error("no value for {market} in week {week}")]
    MissingValue { market: MarketId, week: IsoWeek },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AvailabilityOffset {
    pub market: MarketId,
    pub offset_weeks: u32,
}

/// How many weeks behind the target's decision week the freshest usable
/// value of `market` is.
pub fn availability_offset(
    market: &MarketId,
    scenario: LagScenario,
    calendar: &PublicationCalendar,
    target: &MarketId,
) -> Result<AvailabilityOffset, WindowError> {
    scenario.validate()?;
    let day = calendar.weekday(market)?;
    let target_day = calendar.weekday(target)?;
    let offset_weeks = match scenario {
        LagScenario::PublicDelayed { delay_weeks } => delay_weeks,
        LagScenario::SubscriptionSameWeek => {
            if day.num_days_from_monday() < target_day.num_days_from_monday() {
                0
            } else {
                1
            }
        }
    };
    Ok(AvailabilityOffset { market: market.clone(), offset_weeks })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureName {
    pub market: MarketId,
    /// Position inside the market's window, 0 = freshest usable value.
    pub lag_weeks: usize,
}

impl FeatureName {
    pub fn label(&self) -> String {
        format!("{}_lag{}", self.market, self.lag_weeks)
    }
}

/// Feature matrix and targets. Features are market-major: column
/// `m·window + k` holds market `m` at window position `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedDataset<T: Scalar = f64> {
    pub target: MarketId,
    pub markets: Vec<MarketId>,
    pub offsets: Vec<AvailabilityOffset>,
    pub features: Matrix<T>,
    pub targets: Vec<T>,
    pub target_weeks: Vec<IsoWeek>,
    pub feature_names: Vec<FeatureName>,
    pub scenario: LagScenario,
    pub window: usize,
}

impl<T: Scalar> SupervisedDataset<T> {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    /// Keeps the rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
            target_weeks: idx.iter().map(|&i| self.target_weeks[i]).collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Self {
        Self {
            target: self.target.clone(),
            markets: self.markets.clone(),
            offsets: self.offsets.clone(),
            features: Matrix::zeros(0, self.features.cols()),
            targets: Vec::new(),
            target_weeks: Vec::new(),
            feature_names: self.feature_names.clone(),
            scenario: self.scenario,
            window: self.window,
        }
    }

    /// Rows whose target week lies in `[from, to)` (either bound optional).
    pub fn between(&self, from: Option<IsoWeek>, to: Option<IsoWeek>) -> Self {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let w = self.target_weeks[i];
                from.is_none_or(|f| w >= f) && to.is_none_or(|t| w < t)
            })
            .collect();
        self.subset(&idx)
    }

    /// Audit dump: `target_week,target,<market>_lag<k>...`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("target_week,target");
        for f in &self.feature_names {
            out.push(',');
            out.push_str(&f.label());
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&format!("{},{}", self.target_weeks[i], self.targets[i]));
            for v in self.features.row(i) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn max_offset(&self) -> u32 {
        self.offsets.iter().map(|o| o.offset_weeks).max().unwrap_or(0)
    }
}

/// Offsets for every market of the panel relative to `target`.
pub fn offsets_for(
    markets: &[MarketId],
    target: &MarketId,
    scenario: LagScenario,
    calendar: &PublicationCalendar,
) -> Result<Vec<AvailabilityOffset>, WindowError> {
    markets.iter().map(|m| availability_offset(m, scenario, calendar, target)).collect()
}

/// Feature row for `target_week`, reading values through `lookup`.
pub fn feature_row<T: Scalar>(
    offsets: &[AvailabilityOffset],
    window: usize,
    target_week: IsoWeek,
    mut lookup: impl FnMut(&MarketId, IsoWeek) -> Option<T>,
) -> Result<Vec<T>, WindowError> {
    let mut row = Vec::with_capacity(offsets.len() * window);
    for o in offsets {
        for k in 0..window {
            let week = target_week.add_weeks(-(o.offset_weeks as i64 + k as i64))?;
            let v = lookup(&o.market, week).ok_or_else(|| WindowError::MissingValue { market: o.market.clone(), week })?;
            row.push(v);
        }
    }
    Ok(row)
}

/// One sample per panel week with a full history; sample count is
/// `T − (max_offset + window − 1)`.
pub fn build_dataset<T: Scalar>(
    panel: &PricePanel,
    target: &MarketId,
    window: usize,
    scenario: LagScenario,
    calendar: &PublicationCalendar,
) -> Result<SupervisedDataset<T>, WindowError> {
    if window == 0 {
        return Err(WindowError::InvalidWindow(window));
    }
    let target_idx = panel.market_index(target).ok_or_else(|| WindowError::UnknownTarget(target.clone()))?;
    let offsets = offsets_for(panel.markets(), target, scenario, calendar)?;
    let max_offset = offsets.iter().map(|o| o.offset_weeks as usize).max().unwrap_or(0);
    let t_len = panel.n_weeks();
    let first = max_offset + window - 1;
    if first >= t_len {
        return Err(WindowError::EmptyDataset { window, weeks: t_len });
    }
    let n = t_len - first;
    let n_feat = offsets.len() * window;
    let mut data = Vec::with_capacity(n * n_feat);
    let mut targets = Vec::with_capacity(n);
    let mut target_weeks = Vec::with_capacity(n);
    // Panel weeks are consecutive, so week arithmetic is index arithmetic.
    for t in first..t_len {
        for (j, o) in offsets.iter().enumerate() {
            for k in 0..window {
                let src = t - o.offset_weeks as usize - k;
                data.push(T::lit(panel.value(src, j).to_f64()));
            }
        }
        targets.push(T::lit(panel.value(t, target_idx).to_f64()));
        target_weeks.push(panel.weeks()[t]);
    }
    let feature_names = offsets
        .iter()
        .flat_map(|o| (0..window).map(move |k| FeatureName { market: o.market.clone(), lag_weeks: k }))
        .collect();
    Ok(SupervisedDataset {
        target: target.clone(),
        markets: panel.markets().to_vec(),
        offsets,
        features: Matrix::from_vec(n, n_feat, data),
        targets,
        target_weeks,
        feature_names,
        scenario,
        window,
    })
}

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

/// First `floor(n·fraction)` samples train, the rest test.
pub fn chrono_split<T: Scalar>(
    ds: &SupervisedDataset<T>,
    train_fraction: f64,
) -> Result<(SupervisedDataset<T>, SupervisedDataset<T>), WindowError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(WindowError::InvalidFraction(train_fraction));
    }
    let n = ds.len();
    let n_train = train_cut(n, train_fraction);
    if n < 2 || n_train == 0 || n_train == n {
        return Err(WindowError::TooFewSamples { n });
    }
    let train: Vec<usize> = (0..n_train).collect();
    let test: Vec<usize> = (n_train..n).collect();
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// `floor(n·fraction)`, guarding against `0.8·10 = 7.999…`.
pub fn train_cut(n: usize, fraction: f64) -> usize {
    ((n as f64) * fraction + 1e-9).floor() as usize
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LeakageViolation {
    pub row: usize,
    pub feature: usize,
    pub reason: String,
}

/// Re-derives every feature cell's source week and checks that the value
/// matches the panel, was decided strictly before the target's decision
/// moment, and is released under the scenario by then.
pub fn audit_leakage<T: Scalar>(
    ds: &SupervisedDataset<T>,
    panel: &PricePanel,
    calendar: &PublicationCalendar,
) -> Result<Vec<LeakageViolation>, WindowError> {
    let target_day = calendar.weekday(&ds.target)?.num_days_from_monday();
    let mut out = Vec::new();
    for row in 0..ds.len() {
        let tw = ds.target_weeks[row];
        for (f, name) in ds.feature_names.iter().enumerate() {
            let off = ds
                .offsets
                .iter()
                .find(|o| o.market == name.market)
                .map(|o| o.offset_weeks as i64)
                .ok_or_else(|| WindowError::UnknownTarget(name.market.clone()))?;
            let src = tw.add_weeks(-(off + name.lag_weeks as i64))?;
            let mut fail = |reason: String| out.push(LeakageViolation { row, feature: f, reason });
            let (Some(ti), Some(mi)) = (panel.week_index(&src), panel.market_index(&name.market)) else {
                fail(format!("source {src} of {} not in panel", name.market));
                continue;
            };
            if T::lit(panel.value(ti, mi).to_f64()) != ds.features[(row, f)] {
                fail(format!("value differs from panel at {src}"));
            }
            let day = calendar.weekday(&name.market)?.num_days_from_monday();
            if (src, day) >= (tw, target_day) {
                fail(format!("{} at {src} is not decided before {} at {tw}", name.market, ds.target));
            }
            if let LagScenario::PublicDelayed { delay_weeks } = ds.scenario {
                if src.weeks_until(&tw) < delay_weeks as i64 {
                    fail(format!("{} at {src} is not yet published at {tw}", name.market));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Price;

    fn m(s: &str) -> MarketId {
        MarketId::new(s).unwrap()
    }

    fn panel(weeks: usize) -> PricePanel {
        let cal = PublicationCalendar::spanish_default();
        let markets: Vec<MarketId> = cal.iter().map(|(m, _)| m.clone()).collect();
        let mut ws = vec![IsoWeek::new(2016, 1).unwrap()];
        while ws.len() < weeks {
            ws.push(ws.last().unwrap().succ().unwrap());
        }
        let values = (0..weeks * markets.len()).map(|i| Price::from_units(10_000 + i as i64)).collect();
        PricePanel::from_parts(markets, ws, values, None).unwrap()
    }

    #[test]
    fn offsets_follow_calendar() {
        let cal = PublicationCalendar::spanish_default();
        let lleida = m("ES-LLEIDA");
        let sub = LagScenario::SubscriptionSameWeek;
        assert_eq!(availability_offset(&m("ES-ZARAGOZA"), sub, &cal, &lleida).unwrap().offset_weeks, 0);
        assert_eq!(availability_offset(&m("ES-MURCIA"), sub, &cal, &lleida).unwrap().offset_weeks, 1);
        assert_eq!(availability_offset(&lleida, sub, &cal, &lleida).unwrap().offset_weeks, 1);
        for (market, _) in cal.iter() {
            assert_eq!(availability_offset(market, LagScenario::public(), &cal, &lleida).unwrap().offset_weeks, 2);
        }
        assert!(matches!(
            availability_offset(&m("ES-NOWHERE"), sub, &cal, &lleida),
            Err(WindowError::Domain(DomainError::MissingCalendarEntry(_)))
        ));
    }

    #[test]
    fn sample_counts() {
        let cal = PublicationCalendar::spanish_default();
        let p = panel(322);
        let lleida = m("ES-LLEIDA");
        let public: SupervisedDataset = build_dataset(&p, &lleida, 2, LagScenario::public(), &cal).unwrap();
        assert_eq!(public.len(), 319);
        let sub: SupervisedDataset = build_dataset(&p, &lleida, 2, LagScenario::subscription(), &cal).unwrap();
        assert_eq!(sub.len(), 320);
        assert!(matches!(
            build_dataset::<f64>(&p, &lleida, 400, LagScenario::public(), &cal),
            Err(WindowError::EmptyDataset { .. })
        ));
        assert!(matches!(
            build_dataset::<f64>(&p, &lleida, 0, LagScenario::public(), &cal),
            Err(WindowError::InvalidWindow(0))
        ));
    }

    #[test]
    fn split_examples() {
        let cal = PublicationCalendar::spanish_default();
        let p = panel(322);
        let sub: SupervisedDataset =
            build_dataset(&p, &m("ES-LLEIDA"), 2, LagScenario::subscription(), &cal).unwrap();
        let (train, test) = chrono_split(&sub, 0.8).unwrap();
        assert_eq!((train.len(), test.len()), (256, 64));

        let ten = sub.subset(&(0..10).collect::<Vec<_>>());
        let (train, test) = chrono_split(&ten, 0.8).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        assert!(train.target_weeks.iter().max() < test.target_weeks.iter().min());

        let one = sub.subset(&[0]);
        assert!(matches!(chrono_split(&one, 0.8), Err(WindowError::TooFewSamples { n: 1 })));
        assert!(matches!(chrono_split(&sub, 1.0), Err(WindowError::InvalidFraction(_))));
    }

    #[test]
    fn csv_header() {
        let cal = PublicationCalendar::spanish_default();
        let p = panel(10).select(&[m("ES-LLEIDA"), m("ES-ZARAGOZA")]).unwrap();
        let ds: SupervisedDataset = build_dataset(&p, &m("ES-LLEIDA"), 2, LagScenario::public(), &cal).unwrap();
        let csv = ds.to_csv();
        assert_eq!(
            csv.lines().next().unwrap(),
            "target_week,target,ES-LLEIDA_lag0,ES-LLEIDA_lag1,ES-ZARAGOZA_lag0,ES-ZARAGOZA_lag1"
        );
        assert_eq!(csv.lines().count(), 1 + 7);
    }

    #[test]
    fn audit_flags_a_shifted_feature() {
        let cal = PublicationCalendar::spanish_default();
        let p = panel(40);
        let mut ds: SupervisedDataset = build_dataset(&p, &m("ES-LLEIDA"), 3, LagScenario::subscription(), &cal).unwrap();
        assert!(audit_leakage(&ds, &p, &cal).unwrap().is_empty());
        // pretend Lleida is usable with offset 0: its own week-t price leaks
        let li = ds.offsets.iter().position(|o| o.market.as_str() == "ES-LLEIDA").unwrap();
        ds.offsets[li].offset_weeks = 0;
        assert!(!audit_leakage(&ds, &p, &cal).unwrap().is_empty());
    }
}
