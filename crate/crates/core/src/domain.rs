//! Domain values shared by every stage: markets, ISO weeks, fixed-point
//! prices, observations, publication calendars and data-lag scenarios.
//!
//! All types are plain immutable values and are `Send + Sync`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("invalid market id {0:?}")]
    InvalidMarket(String),
    #[error("invalid ISO week {year}-W{week:02}")]
    InvalidWeek { year: i32, week: u32 },
    #[error("malformed week {0:?}, expected YYYY-Www")]
    MalformedWeek(String),
    #[error("week arithmetic out of range: {from} + {delta}")]
    WeekOutOfRange { from: IsoWeek, delta: i64 },
    #[error("malformed price {0:?}")]
    MalformedPrice(String),
    #[error("price {0:?} has more than 4 decimal places")]
    PriceTooPrecise(String),
    #[error("market {0} has no publication weekday in the calendar")]
    MissingCalendarEntry(MarketId),
    #[error("invalid lag scenario: {0}")]
    InvalidScenario(String),
}

/// Short market token such as `ES-LLEIDA`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MarketId(String);

impl MarketId {
    pub fn new(id: impl Into<String>) -> Result<Self, DomainError> {
        let id = id.into();
        let ok = !id.is_empty()
            && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.');
        if ok {
            Ok(Self(id))
        } else {
            Err(DomainError::InvalidMarket(id))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Human-facing name: the token without its country prefix, title-cased
    /// (`ES-LLEIDA` → `Lleida`).
    pub fn display_name(&self) -> String {
        let base = match self.0.split_once('-') {
            Some((cc, rest)) if cc.len() == 2 && !rest.is_empty() => rest,
            _ => self.0.as_str(),
        };
        base.split(['-', '_'])
            .filter(|w| !w.is_empty())
            .map(|w| {
                let mut cs = w.chars();
                match cs.next() {
                    Some(f) => f.to_uppercase().chain(cs.flat_map(char::to_lowercase)).collect(),
                    None => String::new(),
                }
            })
            .collect::<Vec<String>>()
            .join(" ")
    }
}

impl fmt::Display for MarketId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for MarketId {
    type Err = DomainError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl Serialize for MarketId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for MarketId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::new(s).map_err(serde::de::Error::custom)
    }
}

pub const MIN_YEAR: i32 = 1990;
pub const MAX_YEAR: i32 = 2100;

/// ISO-8601 week (`2020-W10`). Ordered chronologically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IsoWeek {
    year: i32,
    week: u32,
}

impl IsoWeek {
    pub fn new(year: i32, week: u32) -> Result<Self, DomainError> {
        if !(MIN_YEAR..=MAX_YEAR).contains(&year) || week == 0 {
            return Err(DomainError::InvalidWeek { year, week });
        }
        NaiveDate::from_isoywd_opt(year, week, Weekday::Mon)
            .map(|_| Self { year, week })
            .ok_or(DomainError::InvalidWeek { year, week })
    }

    /// Week containing `date`.
    pub fn from_date(date: NaiveDate) -> Result<Self, DomainError> {
        let iw = date.iso_week();
        Self::new(iw.year(), iw.week())
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn week(&self) -> u32 {
        self.week
    }

    pub fn monday(&self) -> NaiveDate {
        NaiveDate::from_isoywd_opt(self.year, self.week, Weekday::Mon).expect("validated week")
    }

    pub fn date_on(&self, day: Weekday) -> NaiveDate {
        NaiveDate::from_isoywd_opt(self.year, self.week, day).expect("validated week")
    }

    /// Shifts by a signed number of weeks.
    pub fn add_weeks(self, delta: i64) -> Result<Self, DomainError> {
        let out_of_range = DomainError::WeekOutOfRange { from: self, delta };
        let days = delta.checked_mul(7).ok_or_else(|| out_of_range.clone())?;
        let date = self
            .monday()
            .checked_add_signed(chrono::Duration::try_days(days).ok_or_else(|| out_of_range.clone())?)
            .ok_or_else(|| out_of_range.clone())?;
        Self::from_date(date).map_err(|_| out_of_range)
    }

    pub fn succ(self) -> Result<Self, DomainError> {
        self.add_weeks(1)
    }

    pub fn pred(self) -> Result<Self, DomainError> {
        self.add_weeks(-1)
    }

    /// Signed number of weeks from `self` to `other`.
    pub fn weeks_until(&self, other: &IsoWeek) -> i64 {
        (other.monday() - self.monday()).num_days() / 7
    }
}

/// Free-function form of [`IsoWeek::add_weeks`].
pub fn week_add(w: IsoWeek, delta: i64) -> Result<IsoWeek, DomainError> {
    w.add_weeks(delta)
}

impl fmt::Display for IsoWeek {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-W{:02}", self.year, self.week)
    }
}

impl FromStr for IsoWeek {
    type Err = DomainError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DomainError::MalformedWeek(s.to_string());
        let (y, w) = s.split_once("-W").ok_or_else(bad)?;
        if y.len() != 4 || w.is_empty() || w.len() > 2 {
            return Err(bad());
        }
        let year: i32 = y.parse().map_err(|_| bad())?;
        let week: u32 = w.parse().map_err(|_| bad())?;
        Self::new(year, week)
    }
}

impl Serialize for IsoWeek {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for IsoWeek {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// EUR/kg with exactly four decimal places, stored as ten-thousandths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Price(i64);

impl Price {
    pub const SCALE: i64 = 10_000;

    pub const fn from_units(units: i64) -> Self {
        Self(units)
    }

    pub fn units(&self) -> i64 {
        self.0
    }

    /// Rounds an `f64` to the nearest ten-thousandth (half away from zero).
    pub fn from_f64(v: f64) -> Self {
        Self((v * Self::SCALE as f64).round() as i64)
    }

    pub fn to_f64(&self) -> f64 {
        self.0 as f64 / Self::SCALE as f64
    }

    pub fn is_positive(&self) -> bool {
        self.0 > 0
    }

    /// Mean of two prices, rounded half away from zero at the fourth decimal.
    pub fn midpoint(a: Price, b: Price) -> Price {
        let s = a.0 + b.0;
        let half = if s >= 0 { (s + 1) / 2 } else { (s - 1) / 2 };
        Price(half)
    }
}

impl fmt::Display for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let a = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:04}", a / Self::SCALE as u64, a % Self::SCALE as u64)
    }
}

impl FromStr for Price {
    type Err = DomainError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DomainError::MalformedPrice(s.to_string());
        let t = s.trim();
        let (neg, body) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t),
        };
        let (int, frac) = body.split_once('.').unwrap_or((body, ""));
        if int.is_empty() && frac.is_empty() {
            return Err(bad());
        }
        if !int.chars().all(|c| c.is_ascii_digit()) || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        if frac.len() > 4 && frac[4..].chars().any(|c| c != '0') {
            return Err(DomainError::PriceTooPrecise(s.to_string()));
        }
        let int_units: i64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let mut frac4: String = frac.chars().take(4).collect();
        while frac4.len() < 4 {
            frac4.push('0');
        }
        let frac_units: i64 = frac4.parse().map_err(|_| bad())?;
        let units = int_units
            .checked_mul(Self::SCALE)
            .and_then(|u| u.checked_add(frac_units))
            .ok_or_else(bad)?;
        Ok(Self(if neg { -units } else { units }))
    }
}

impl Serialize for Price {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.to_f64())
    }
}

impl<'de> Deserialize<'de> for Price {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        if !v.is_finite() {
            return Err(serde::de::Error::custom("price must be finite"));
        }
        Ok(Self::from_f64(v))
    }
}

/// One weekly price decision of one market.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceObservation {
    pub market: MarketId,
    pub week: IsoWeek,
    pub price: Price,
    pub decision_weekday: Weekday,
}

impl PriceObservation {
    pub fn date(&self) -> NaiveDate {
        self.week.date_on(self.decision_weekday)
    }
}

/// Weekly price history of a single market, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarketSeries {
    pub market: MarketId,
    pub observations: Vec<PriceObservation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NonPositivePrice { index: usize, week: IsoWeek },
    OutOfOrderWeek { index: usize, week: IsoWeek, previous: IsoWeek },
    DuplicateWeek { index: usize, week: IsoWeek },
    ForeignMarket { index: usize, market: MarketId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositivePrice { index, week } => {
                write!(f, "non-positive price at #{index} ({week})")
            }
            Violation::OutOfOrderWeek { index, week, previous } => {
                write!(f, "out-of-order week at #{index}: {week} after {previous}")
            }
            Violation::DuplicateWeek { index, week } => write!(f, "duplicate week {week} at #{index}"),
            Violation::ForeignMarket { index, market } => {
                write!(f, "observation #{index} belongs to market {market}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl MarketSeries {
    pub fn new(market: MarketId) -> Self {
        Self { market, observations: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn first_week(&self) -> Option<IsoWeek> {
        self.observations.first().map(|o| o.week)
    }

    pub fn last_week(&self) -> Option<IsoWeek> {
        self.observations.last().map(|o| o.week)
    }

    pub fn prices_f64(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.price.to_f64()).collect()
    }

    /// Reports every invariant violation without modifying the series.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let mut prev: Option<IsoWeek> = None;
        for (index, o) in self.observations.iter().enumerate() {
            if o.market != self.market {
                violations.push(Violation::ForeignMarket { index, market: o.market.clone() });
            }
            if !o.price.is_positive() {
                violations.push(Violation::NonPositivePrice { index, week: o.week });
            }
            if let Some(p) = prev {
                if o.week == p {
                    violations.push(Violation::DuplicateWeek { index, week: o.week });
                } else if o.week < p {
                    violations.push(Violation::OutOfOrderWeek { index, week: o.week, previous: p });
                }
            }
            prev = Some(prev.map_or(o.week, |p| p.max(o.week)));
        }
        ValidationReport { violations }
    }
}

pub fn validate_series(series: &MarketSeries) -> ValidationReport {
    series.validate()
}

/// Weekday on which each market sets its weekly price.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PublicationCalendar {
    days: BTreeMap<MarketId, Weekday>,
}

impl PublicationCalendar {
    pub fn new() -> Self {
        Self::default()
    }

    /// Regional Spanish pork markets and their decision weekdays.
    pub fn spanish_default() -> Self {
        let entries = [
            ("ES-SALAMANCA", Weekday::Mon),
            ("ES-ZARAGOZA", Weekday::Mon),
            ("ES-PONTEVEDRA", Weekday::Tue),
            ("ES-HUESCA", Weekday::Wed),
            ("ES-MURCIA", Weekday::Thu),
            ("ES-SEGOVIA", Weekday::Thu),
            ("ES-LLEIDA", Weekday::Thu),
        ];
        let mut cal = Self::new();
        for (id, day) in entries {
            cal.insert(MarketId::new(id).expect("static id"), day);
        }
        cal
    }

    pub fn insert(&mut self, market: MarketId, day: Weekday) -> Option<Weekday> {
        self.days.insert(market, day)
    }

    pub fn with(mut self, market: MarketId, day: Weekday) -> Self {
        self.insert(market, day);
        self
    }

    pub fn weekday(&self, market: &MarketId) -> Result<Weekday, DomainError> {
        self.days.get(market).copied().ok_or_else(|| DomainError::MissingCalendarEntry(market.clone()))
    }

    pub fn contains(&self, market: &MarketId) -> bool {
        self.days.contains_key(market)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MarketId, &Weekday)> {
        self.days.iter()
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }
}

/// When the prices of the other markets become usable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LagScenario {
    /// Every market's price is usable `delay_weeks` after its decision week.
    PublicDelayed { delay_weeks: u32 },
    /// Prices are usable the day they are decided.
    SubscriptionSameWeek,
}

impl LagScenario {
    pub const DEFAULT_PUBLIC_DELAY: u32 = 2;

    pub fn public() -> Self {
        Self::PublicDelayed { delay_weeks: Self::DEFAULT_PUBLIC_DELAY }
    }

    pub fn subscription() -> Self {
        Self::SubscriptionSameWeek
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        match self {
            Self::PublicDelayed { delay_weeks: 0 } => {
                Err(DomainError::InvalidScenario("public delay must be at least 1 week".into()))
            }
            _ => Ok(()),
        }
    }

    /// Short label used in reports (`public`, `subscription`).
    pub fn label(&self) -> &'static str {
        match self {
            Self::PublicDelayed { .. } => "public",
            Self::SubscriptionSameWeek => "subscription",
        }
    }
}

impl Default for LagScenario {
    fn default() -> Self {
        Self::public()
    }
}

impl fmt::Display for LagScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PublicDelayed { delay_weeks } if *delay_weeks == Self::DEFAULT_PUBLIC_DELAY => f.write_str("public"),
            Self::PublicDelayed { delay_weeks } => write!(f, "public:{delay_weeks}"),
            Self::SubscriptionSameWeek => f.write_str("subscription"),
        }
    }
}

impl FromStr for LagScenario {
    type Err = DomainError;
    /// Accepts `public`, `public:<weeks>` and `subscription`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let sc = match s {
            "public" => Self::public(),
            "subscription" => Self::SubscriptionSameWeek,
            _ => match s.strip_prefix("public:") {
                Some(d) => Self::PublicDelayed {
                    delay_weeks: d.parse().map_err(|_| DomainError::InvalidScenario(s.to_string()))?,
                },
                None => return Err(DomainError::InvalidScenario(s.to_string())),
            },
        };
        sc.validate()?;
        Ok(sc)
    }
}

/// Parses `Mon`, `monday`, etc.
pub fn parse_weekday(s: &str) -> Option<Weekday> {
    s.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(y: i32, n: u32) -> IsoWeek {
        IsoWeek::new(y, n).unwrap()
    }

    fn obs(m: &str, week: IsoWeek, price: &str) -> PriceObservation {
        PriceObservation {
            market: MarketId::new(m).unwrap(),
            week,
            price: price.parse().unwrap(),
            decision_weekday: Weekday::Thu,
        }
    }

    #[test]
    fn week_add_examples() {
        assert_eq!(week_add(w(2016, 1), 0).unwrap(), w(2016, 1));
        assert_eq!(week_add(w(2016, 52), 1).unwrap(), w(2017, 1));
        assert_eq!(week_add(w(2020, 1), -1).unwrap(), w(2019, 52));
        // 2020 has 53 ISO weeks
        assert_eq!(week_add(w(2020, 53), 1).unwrap(), w(2021, 1));
        assert!(IsoWeek::new(2019, 53).is_err());
    }

    #[test]
    fn week_add_out_of_range() {
        assert!(matches!(week_add(w(2100, 50), 10), Err(DomainError::WeekOutOfRange { .. })));
        assert!(week_add(w(1990, 2), -5).is_err());
        assert!(week_add(w(2000, 2), i64::MAX).is_err());
    }

    #[test]
    fn week_parse_display() {
        let wk: IsoWeek = "2020-W10".parse().unwrap();
        assert_eq!(wk, w(2020, 10));
        assert_eq!(wk.to_string(), "2020-W10");
        assert!("2020-10".parse::<IsoWeek>().is_err());
        assert!("2019-W53".parse::<IsoWeek>().is_err());
        assert_eq!(serde_json::to_string(&wk).unwrap(), "\"2020-W10\"");
    }

    #[test]
    fn price_parse_exact() {
        assert_eq!("1.081".parse::<Price>().unwrap().units(), 10810);
        assert_eq!("1.08100".parse::<Price>().unwrap().units(), 10810);
        assert_eq!("2".parse::<Price>().unwrap().units(), 20000);
        assert_eq!(".5".parse::<Price>().unwrap().units(), 5000);
        assert_eq!("-1.25".parse::<Price>().unwrap().units(), -12500);
        assert!(matches!("1.00001".parse::<Price>(), Err(DomainError::PriceTooPrecise(_))));
        assert!("abc".parse::<Price>().is_err());
        assert!("1,5".parse::<Price>().is_err());
        assert!("".parse::<Price>().is_err());
        assert_eq!(Price::from_units(10810).to_string(), "1.0810");
        assert_eq!(Price::from_units(-5).to_string(), "-0.0005");
    }

    #[test]
    fn price_midpoint_rounds_half_away() {
        assert_eq!(Price::midpoint(Price::from_units(1), Price::from_units(2)).units(), 2);
        assert_eq!(Price::midpoint(Price::from_units(20000), Price::from_units(20000)).units(), 20000);
        assert_eq!(Price::midpoint(Price::from_units(-1), Price::from_units(-2)).units(), -2);
    }

    #[test]
    fn validate_series_examples() {
        let m = MarketId::new("ES-LLEIDA").unwrap();
        let mut s = MarketSeries::new(m.clone());
        let mut wk = w(2016, 1);
        for _ in 0..322 {
            s.observations.push(obs("ES-LLEIDA", wk, "1.2"));
            wk = wk.succ().unwrap();
        }
        assert!(validate_series(&s).is_ok());

        let mut dup = s.clone();
        dup.observations.insert(10, obs("ES-LLEIDA", dup.observations[10].week, "1.2"));
        let r = validate_series(&dup);
        assert_eq!(r.violations.len(), 1);
        assert!(r.violations[0].to_string().contains("duplicate week"));

        let mut zero = s.clone();
        zero.observations[5].price = Price::from_units(0);
        let r = validate_series(&zero);
        assert!(r.violations[0].to_string().contains("non-positive price"));

        let mut swapped = s.clone();
        swapped.observations.swap(3, 4);
        assert!(matches!(validate_series(&swapped).violations[0], Violation::OutOfOrderWeek { .. }));
    }

    #[test]
    fn calendar_default_entries() {
        let cal = PublicationCalendar::spanish_default();
        let day = |m: &str| cal.weekday(&MarketId::new(m).unwrap()).unwrap();
        assert_eq!(day("ES-ZARAGOZA"), Weekday::Mon);
        assert_eq!(day("ES-SALAMANCA"), Weekday::Mon);
        assert_eq!(day("ES-PONTEVEDRA"), Weekday::Tue);
        assert_eq!(day("ES-HUESCA"), Weekday::Wed);
        assert_eq!(day("ES-LLEIDA"), Weekday::Thu);
        assert_eq!(cal.len(), 7);
        let json = serde_json::to_string(&cal).unwrap();
        let back: PublicationCalendar = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cal);
    }

    #[test]
    fn scenario_parse() {
        assert_eq!("public".parse::<LagScenario>().unwrap(), LagScenario::public());
        assert_eq!("public:3".parse::<LagScenario>().unwrap(), LagScenario::PublicDelayed { delay_weeks: 3 });
        assert_eq!("subscription".parse::<LagScenario>().unwrap(), LagScenario::SubscriptionSameWeek);
        assert!("public:0".parse::<LagScenario>().is_err());
        assert!("nonsense".parse::<LagScenario>().is_err());
    }

    #[test]
    fn market_display_name() {
        assert_eq!(MarketId::new("ES-LLEIDA").unwrap().display_name(), "Lleida");
        assert_eq!(MarketId::new("DE").unwrap().display_name(), "De");
        assert!(MarketId::new("").is_err());
        assert!(MarketId::new("a,b").is_err());
    }
}
