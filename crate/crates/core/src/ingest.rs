//! Raw price ingestion: normalized CSV parsing, outlier repair, panel
//! alignment and source fetching.

use std::collections::BTreeMap;
use std::io::Read;
use std::time::Duration;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DomainError, IsoWeek, MarketId, MarketSeries, Price, PriceObservation};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub const CSV_HEADER: &str = "date,market,price_eur_kg";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("expected header `{CSV_HEADER}`, found `{0}`")]
    Header(String),
    #[error("no series to align")]
    NoSeries,
    #[error("series {0} is invalid: {1}")]
    InvalidSeries(MarketId, String),
    #[error("series have no overlapping week range")]
    NoOverlap,
    #[error("market {0} appears more than once")]
    DuplicateMarket(MarketId),
    #[error("market {0} is not in the panel")]
    UnknownMarket(MarketId),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("network error fetching {url}: {reason}")]
    Network { url: String, reason: String },
    #[error("source {url} returned HTTP {status}")]
    SourceMissing { url: String, status: u16 },
    #[error("source {0} is not valid UTF-8")]
    Decode(String),
    #[error("io error reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Parses the normalized `date,market,price_eur_kg` format into one series
/// per market, sorted by market id and week.
pub fn parse_price_csv(text: &str) -> Result<Vec<MarketSeries>, IngestError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let mut records = reader.records();
    match records.next() {
        None => return Ok(Vec::new()),
        Some(Ok(h)) => {
            let header: Vec<&str> = h.iter().collect();
            if header.join(",").trim_start_matches('\u{feff}') != CSV_HEADER {
                return Err(IngestError::Header(header.join(",")));
            }
        }
        Some(Err(e)) => return Err(IngestError::Malformed { line: 1, reason: e.to_string() }),
    }
    let mut by_market: BTreeMap<MarketId, Vec<PriceObservation>> = BTreeMap::new();
    for rec in records {
        let rec = rec.map_err(|e| IngestError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        let bad = |reason: String| IngestError::Malformed { line, reason };
        if rec.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", rec.len())));
        }
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
            .map_err(|e| bad(format!("unparseable date {:?}: {e}", &rec[0])))?;
        let market = MarketId::new(&rec[1]).map_err(|e| bad(e.to_string()))?;
        let price: Price = rec[2].parse().map_err(|e: DomainError| bad(e.to_string()))?;
        let week = IsoWeek::from_date(date).map_err(|e| bad(e.to_string()))?;
        by_market.entry(market.clone()).or_default().push(PriceObservation {
            market,
            week,
            price,
            decision_weekday: date.weekday(),
        });
    }
    Ok(by_market
        .into_iter()
        .map(|(market, mut observations)| {
            observations.sort_by_key(|o| o.week);
            MarketSeries { market, observations }
        })
        .collect())
}

/// Writes series back to the normalized CSV format (four-decimal prices).
pub fn write_price_csv(series: &[MarketSeries]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for s in series {
        for o in &s.observations {
            out.push_str(&format!("{},{},{}\n", o.date().format("%Y-%m-%d"), o.market, o.price));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairEntry {
    pub market: MarketId,
    pub week: IsoWeek,
    pub original_value: Price,
    pub replaced_value: Price,
    pub rule: String,
}

pub type RepairLog = Vec<RepairEntry>;

pub const DEFAULT_OUTLIER_THRESHOLD: Price = Price::from_units(5_000);

/// Replaces interior points that deviate from the mean of their two temporal
/// neighbours by more than `threshold` with that mean.
///
/// Sweeps left to right until a sweep changes nothing, so the output is a
/// fixed point of the rule and the function is idempotent. Each replacement
/// lowers the sum of squared first differences, which bounds the number of
/// sweeps.
pub fn repair_outliers(series: &MarketSeries, threshold: Price) -> (MarketSeries, RepairLog) {
    const MAX_SWEEPS: usize = 10_000;
    let mut out = series.clone();
    let mut log = Vec::new();
    let obs = &mut out.observations;
    if obs.len() < 3 {
        return (out, log);
    }
    let thr2 = 2 * threshold.units().max(0);
    for _ in 0..MAX_SWEEPS {
        let mut changed = false;
        for t in 1..obs.len() - 1 {
            let (a, x, b) = (obs[t - 1].price, obs[t].price, obs[t + 1].price);
            // |x − (a+b)/2| > thr  ⇔  |2x − a − b| > 2·thr, exact in integers
            if (2 * x.units() - a.units() - b.units()).abs() > thr2 {
                let m = Price::midpoint(a, b);
                if m != x {
                    log.push(RepairEntry {
                        market: out.market.clone(),
                        week: obs[t].week,
                        original_value: x,
                        replaced_value: m,
                        rule: "neighbor-mean".into(),
                    });
                    obs[t].price = m;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    (out, log)
}

/// Rectangular weeks × markets price matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricePanel {
    markets: Vec<MarketId>,
    weeks: Vec<IsoWeek>,
    /// Row-major, one row per week.
    values: Vec<Price>,
    fill_flags: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapFill {
    pub market: MarketId,
    pub week: IsoWeek,
    pub filled_from: IsoWeek,
    pub value: Price,
}

pub type GapReport = Vec<GapFill>;

impl PricePanel {
    /// Builds a panel from raw parts; `values` is row-major weeks × markets.
    pub fn from_parts(
        markets: Vec<MarketId>,
        weeks: Vec<IsoWeek>,
        values: Vec<Price>,
        fill_flags: Option<Vec<bool>>,
    ) -> Result<Self, IngestError> {
        let n = markets.len() * weeks.len();
        if values.len() != n {
            return Err(IngestError::InvalidSeries(
                markets.first().cloned().unwrap_or_else(|| MarketId::new("?").unwrap()),
                format!("expected {n} values, got {}", values.len()),
            ));
        }
        for (i, m) in markets.iter().enumerate() {
            if markets[..i].contains(m) {
                return Err(IngestError::DuplicateMarket(m.clone()));
            }
        }
        if weeks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(IngestError::InvalidSeries(markets[0].clone(), "weeks not strictly increasing".into()));
        }
        let fill_flags = fill_flags.unwrap_or_else(|| vec![false; n]);
        Ok(Self { markets, weeks, values, fill_flags })
    }

    pub fn markets(&self) -> &[MarketId] {
        &self.markets
    }

    pub fn weeks(&self) -> &[IsoWeek] {
        &self.weeks
    }

    pub fn n_weeks(&self) -> usize {
        self.weeks.len()
    }

    pub fn n_markets(&self) -> usize {
        self.markets.len()
    }

    pub fn market_index(&self, m: &MarketId) -> Option<usize> {
        self.markets.iter().position(|x| x == m)
    }

    pub fn week_index(&self, w: &IsoWeek) -> Option<usize> {
        self.weeks.binary_search(w).ok()
    }

    pub fn value(&self, week_idx: usize, market_idx: usize) -> Price {
        self.values[week_idx * self.markets.len() + market_idx]
    }

    pub fn is_filled(&self, week_idx: usize, market_idx: usize) -> bool {
        self.fill_flags[week_idx * self.markets.len() + market_idx]
    }

    pub fn column(&self, market_idx: usize) -> Vec<Price> {
        (0..self.weeks.len()).map(|t| self.value(t, market_idx)).collect()
    }

    pub fn column_as<T: Scalar>(&self, market_idx: usize) -> Vec<T> {
        (0..self.weeks.len()).map(|t| T::lit(self.value(t, market_idx).to_f64())).collect()
    }

    /// Values as a weeks × markets floating point matrix.
    pub fn to_matrix<T: Scalar>(&self) -> Matrix<T> {
        Matrix::from_vec(
            self.weeks.len(),
            self.markets.len(),
            self.values.iter().map(|p| T::lit(p.to_f64())).collect(),
        )
    }

    /// Restricts the panel to the given markets, in that order.
    pub fn select(&self, markets: &[MarketId]) -> Result<Self, IngestError> {
        let idx: Vec<usize> = markets
            .iter()
            .map(|m| self.market_index(m).ok_or_else(|| IngestError::UnknownMarket(m.clone())))
            .collect::<Result<_, _>>()?;
        let mut values = Vec::with_capacity(idx.len() * self.weeks.len());
        let mut flags = Vec::with_capacity(values.capacity());
        for t in 0..self.weeks.len() {
            for &j in &idx {
                values.push(self.value(t, j));
                flags.push(self.is_filled(t, j));
            }
        }
        Self::from_parts(markets.to_vec(), self.weeks.clone(), values, Some(flags))
    }

    /// Returns a copy with one cell replaced.
    pub fn with_value(&self, week_idx: usize, market_idx: usize, price: Price) -> Self {
        let mut p = self.clone();
        let k = week_idx * p.markets.len() + market_idx;
        p.values[k] = price;
        p
    }

    /// Panel as market series (decision weekday taken from `weekday_of`).
    pub fn to_series(&self, weekday_of: impl Fn(&MarketId) -> chrono::Weekday) -> Vec<MarketSeries> {
        self.markets
            .iter()
            .enumerate()
            .map(|(j, m)| MarketSeries {
                market: m.clone(),
                observations: self
                    .weeks
                    .iter()
                    .enumerate()
                    .map(|(t, &week)| PriceObservation {
                        market: m.clone(),
                        week,
                        price: self.value(t, j),
                        decision_weekday: weekday_of(m),
                    })
                    .collect(),
            })
            .collect()
    }
}

/// Aligns series on the intersection of their week ranges. Weeks missing
/// inside the range are forward-filled from the market's previous value and
/// flagged.
pub fn align_panel(series: &[MarketSeries]) -> Result<(PricePanel, GapReport), IngestError> {
    if series.is_empty() {
        return Err(IngestError::NoSeries);
    }
    for (i, s) in series.iter().enumerate() {
        if series[..i].iter().any(|o| o.market == s.market) {
            return Err(IngestError::DuplicateMarket(s.market.clone()));
        }
        let report = s.validate();
        if let Some(v) = report.violations.first() {
            return Err(IngestError::InvalidSeries(s.market.clone(), v.to_string()));
        }
        if s.is_empty() {
            return Err(IngestError::NoOverlap);
        }
    }
    let start = series.iter().filter_map(MarketSeries::first_week).max().ok_or(IngestError::NoOverlap)?;
    let end = series.iter().filter_map(MarketSeries::last_week).min().ok_or(IngestError::NoOverlap)?;
    if start > end {
        return Err(IngestError::NoOverlap);
    }
    let mut weeks = vec![start];
    while *weeks.last().unwrap() < end {
        weeks.push(weeks.last().unwrap().succ()?);
    }
    let m = series.len();
    let mut values = vec![Price::default(); weeks.len() * m];
    let mut flags = vec![false; weeks.len() * m];
    let mut gaps = Vec::new();
    for (j, s) in series.iter().enumerate() {
        let obs = &s.observations;
        // index of the last observation with week <= current
        let mut k = obs.partition_point(|o| o.week <= start).saturating_sub(1);
        let mut last: Option<(IsoWeek, Price)> = obs.get(k).filter(|o| o.week <= start).map(|o| (o.week, o.price));
        for (t, &wk) in weeks.iter().enumerate() {
            while k + 1 < obs.len() && obs[k + 1].week <= wk {
                k += 1;
            }
            let o = &obs[k];
            if o.week == wk {
                values[t * m + j] = o.price;
                last = Some((o.week, o.price));
            } else {
                let (from, value) = last.expect("start week is covered by every series");
                values[t * m + j] = value;
                flags[t * m + j] = true;
                gaps.push(GapFill { market: s.market.clone(), week: wk, filled_from: from, value });
            }
        }
    }
    let markets = series.iter().map(|s| s.market.clone()).collect();
    Ok((PricePanel::from_parts(markets, weeks, values, Some(flags))?, gaps))
}

/// Where to read raw price data from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Source {
    pub url: String,
    #[serde(default)]
    pub format_hint: Option<String>,
}

/// Reads a source: `http(s)://` URLs over HTTP, anything else as a local
/// path (`file://` prefix allowed). Transient network failures and 5xx
/// responses are retried once.
pub fn fetch_source(source: &Source, timeout: Duration) -> Result<String, IngestError> {
    let url = source.url.as_str();
    if url.starts_with("http://") || url.starts_with("https://") {
        match fetch_http(url, timeout) {
            Err(e @ (IngestError::Network { .. } | IngestError::SourceMissing { status: 500.., .. })) => {
                log_retry(url, &e);
                fetch_http(url, timeout)
            }
            other => other,
        }
    } else {
        let path = url.strip_prefix("file://").unwrap_or(url);
        let bytes = std::fs::read(path).map_err(|e| IngestError::Io { path: path.to_string(), source: e })?;
        String::from_utf8(bytes).map_err(|_| IngestError::Decode(url.to_string()))
    }
}

fn log_retry(url: &str, e: &IngestError) {
    eprintln!("warning: retrying {url} after: {e}");
}

fn fetch_http(url: &str, timeout: Duration) -> Result<String, IngestError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let resp = agent
        .get(url)
        .call()
        .map_err(|e| IngestError::Network { url: url.to_string(), reason: e.to_string() })?;
    let status = resp.status().as_u16();
    if status >= 400 {
        return Err(IngestError::SourceMissing { url: url.to_string(), status });
    }
    let mut bytes = Vec::new();
    resp.into_body()
        .into_reader()
        .read_to_end(&mut bytes)
        .map_err(|e| IngestError::Network { url: url.to_string(), reason: e.to_string() })?;
    String::from_utf8(bytes).map_err(|_| IngestError::Decode(url.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Weekday;

    fn series(prices: &[&str]) -> MarketSeries {
        let m = MarketId::new("ES-LLEIDA").unwrap();
        let mut wk = IsoWeek::new(2016, 1).unwrap();
        let mut s = MarketSeries::new(m.clone());
        for p in prices {
            s.observations.push(PriceObservation {
                market: m.clone(),
                week: wk,
                price: p.parse().unwrap(),
                decision_weekday: Weekday::Thu,
            });
            wk = wk.succ().unwrap();
        }
        s
    }

    fn weeks_series(market: &str, weeks: impl IntoIterator<Item = u32>) -> MarketSeries {
        let m = MarketId::new(market).unwrap();
        MarketSeries {
            market: m.clone(),
            observations: weeks
                .into_iter()
                .map(|w| PriceObservation {
                    market: m.clone(),
                    week: IsoWeek::new(2018, w).unwrap(),
                    price: Price::from_units(10_000 + w as i64),
                    decision_weekday: Weekday::Mon,
                })
                .collect(),
        }
    }

    #[test]
    fn parse_single_row() {
        let s = parse_price_csv("date,market,price_eur_kg\n2016-01-04,ES-ZARAGOZA,1.081\n").unwrap();
        assert_eq!(s.len(), 1);
        let o = &s[0].observations[0];
        assert_eq!(o.decision_weekday, Weekday::Mon);
        assert_eq!(o.week, IsoWeek::new(2016, 1).unwrap());
        assert_eq!(o.price.units(), 10810);
    }

    #[test]
    fn parse_header_only_and_errors() {
        assert!(parse_price_csv("date,market,price_eur_kg\n").unwrap().is_empty());
        assert!(parse_price_csv("").unwrap().is_empty());
        match parse_price_csv("date,market,price_eur_kg\n2016-01-04,ES-ZARAGOZA,abc\n") {
            Err(IngestError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match parse_price_csv("date,market,price_eur_kg\n2016-01-04,ES-A,1.0\n2016-13-01,ES-A,1.0\n") {
            Err(IngestError::Malformed { line, reason }) => {
                assert_eq!(line, 3);
                assert!(reason.contains("date"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_price_csv("day,market,price\n"), Err(IngestError::Header(_))));
        assert!(matches!(
            parse_price_csv("date,market,price_eur_kg\n2016-01-04,ES-A\n"),
            Err(IngestError::Malformed { line: 2, .. })
        ));
    }

    #[test]
    fn parse_sorts_and_groups() {
        let text = "date,market,price_eur_kg\n2016-01-14,ES-LLEIDA,1.2\n2016-01-04,ES-ZARAGOZA,1.0\n2016-01-07,ES-LLEIDA,1.1\n";
        let s = parse_price_csv(text).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].market.as_str(), "ES-LLEIDA");
        assert!(s[0].observations[0].week < s[0].observations[1].week);
        assert_eq!(s[0].observations[0].decision_weekday, Weekday::Thu);
    }

    #[test]
    fn repair_examples() {
        let thr = DEFAULT_OUTLIER_THRESHOLD;
        let (out, log) = repair_outliers(&series(&["2.0", "1.0", "2.0"]), thr);
        assert_eq!(out.prices_f64(), vec![2.0, 2.0, 2.0]);
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].original_value.to_string(), "1.0000");
        assert_eq!(log[0].rule, "neighbor-mean");

        let s = series(&["2.0", "2.1", "2.0"]);
        let (out, log) = repair_outliers(&s, thr);
        assert_eq!(out, s);
        assert!(log.is_empty());

        let s = series(&["1.0", "3.0"]);
        let (out, log) = repair_outliers(&s, Price::from_units(0));
        assert_eq!(out, s);
        assert!(log.is_empty());
    }

    #[test]
    fn align_identical_ranges() {
        let a = weeks_series("ES-A", 1..=40);
        let b = weeks_series("ES-B", 1..=40);
        let (p, gaps) = align_panel(&[a, b]).unwrap();
        assert_eq!(p.n_weeks(), 40);
        assert!(gaps.is_empty());
    }

    #[test]
    fn align_intersection_and_fill() {
        let a = weeks_series("ES-A", 1..=10);
        let b = weeks_series("ES-B", (5..=15).filter(|&w| w != 7));
        let (p, gaps) = align_panel(&[a, b]).unwrap();
        assert_eq!(p.weeks().first().unwrap().week(), 5);
        assert_eq!(p.weeks().last().unwrap().week(), 10);
        assert_eq!(gaps.len(), 1);
        let t7 = p.week_index(&IsoWeek::new(2018, 7).unwrap()).unwrap();
        assert!(p.is_filled(t7, 1));
        assert_eq!(p.value(t7, 1), p.value(t7 - 1, 1));
        assert_eq!(gaps[0].filled_from, IsoWeek::new(2018, 6).unwrap());
    }

    #[test]
    fn align_fills_missing_start_week_from_before_range() {
        let a = weeks_series("ES-A", 5..=10);
        let b = weeks_series("ES-B", [1, 2, 6, 7, 8, 9, 10]);
        let (p, gaps) = align_panel(&[a, b]).unwrap();
        assert_eq!(p.weeks()[0].week(), 5);
        assert!(p.is_filled(0, 1));
        assert_eq!(p.value(0, 1).units(), 10_002);
        assert_eq!(gaps.len(), 1);
    }

    #[test]
    fn align_errors() {
        assert!(matches!(align_panel(&[]), Err(IngestError::NoSeries)));
        let a = weeks_series("ES-A", 1..=4);
        let b = weeks_series("ES-B", 6..=9);
        assert!(matches!(align_panel(&[a.clone(), b]), Err(IngestError::NoOverlap)));
        assert!(matches!(align_panel(&[a.clone(), a]), Err(IngestError::DuplicateMarket(_))));
    }

    #[test]
    fn fetch_local_file() {
        let dir = std::env::temp_dir().join(format!("porkcast-fetch-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("s.csv");
        std::fs::write(&path, "date,market,price_eur_kg\n").unwrap();
        let src = Source { url: path.display().to_string(), format_hint: None };
        assert_eq!(fetch_source(&src, Duration::from_secs(1)).unwrap(), "date,market,price_eur_kg\n");
        let missing = Source { url: dir.join("nope.csv").display().to_string(), format_hint: None };
        assert!(matches!(fetch_source(&missing, Duration::from_secs(1)), Err(IngestError::Io { .. })));
    }
}
