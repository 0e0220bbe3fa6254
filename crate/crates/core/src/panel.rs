//! Panel data model shared by every analysis stage.
//!
//! Dates are carried as integer day offsets from [`DateIndex::start`]; only
//! ingestion and output code converts back to calendar dates. Missing values
//! are tracked by an explicit mask and never encoded as sentinel numbers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schedule::InterventionSchedule;

#[derive(Debug, Error, PartialEq)]
pub enum PanelError {
    #[error("window {start}..{end} outside series of length {len}")]
    Range { start: usize, end: usize, len: usize },
    #[error("series for {unit}/{variable} has {got} values, date index has {expected}")]
    Length { unit: String, variable: Variable, got: usize, expected: usize },
    #[error("invalid commune {id}: {reason}")]
    Commune { id: String, reason: String },
    #[error("duplicate commune id {0}")]
    DuplicateCommune(String),
    #[error("duplicate series for {0}/{1}")]
    DuplicateSeries(String, Variable),
    #[error("series unit {0} does not resolve to a commune")]
    UnknownUnit(String),
    #[error("{variable} series for {unit} violates its value domain at day {day}: {value}")]
    Domain { unit: String, variable: Variable, day: usize, value: f64 },
    #[error("n_days must be positive")]
    EmptyIndex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Commune {
    pub id: String,
    pub name: String,
    pub population: u64,
    pub income_index: f64,
    pub is_rural: bool,
}

impl Commune {
    pub fn validate(&self) -> Result<(), PanelError> {
        if self.population == 0 {
            return Err(PanelError::Commune { id: self.id.clone(), reason: "population must be >= 1".into() });
        }
        if self.id.is_empty() {
            return Err(PanelError::Commune { id: String::new(), reason: "empty id".into() });
        }
        Ok(())
    }
}

/// Contiguous daily calendar shared by all series of one study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateIndex {
    pub start: NaiveDate,
    pub n_days: usize,
}

impl DateIndex {
    pub fn new(start: NaiveDate, n_days: usize) -> Result<Self, PanelError> {
        if n_days == 0 {
            return Err(PanelError::EmptyIndex);
        }
        Ok(Self { start, n_days })
    }

    /// Index covering `start..=end`.
    pub fn spanning(start: NaiveDate, end: NaiveDate) -> Result<Self, PanelError> {
        let days = (end - start).num_days() + 1;
        if days <= 0 {
            return Err(PanelError::EmptyIndex);
        }
        Ok(Self { start, n_days: days as usize })
    }

    /// Signed offset of `date`; may fall outside the index.
    pub fn signed_offset(&self, date: NaiveDate) -> i64 {
        (date - self.start).num_days()
    }

    pub fn offset(&self, date: NaiveDate) -> Option<usize> {
        let d = self.signed_offset(date);
        (d >= 0 && (d as usize) < self.n_days).then_some(d as usize)
    }

    pub fn date(&self, offset: usize) -> NaiveDate {
        self.start + chrono::Duration::days(offset as i64)
    }

    pub fn end(&self) -> NaiveDate {
        self.date(self.n_days - 1)
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        (0..self.n_days).map(|d| self.date(d))
    }

    /// Day range for the half-open calendar interval `[from, to)`, clipped to the index.
    pub fn window(&self, from: NaiveDate, to: NaiveDate) -> Range<usize> {
        let clip = |d: i64| d.clamp(0, self.n_days as i64) as usize;
        let a = clip(self.signed_offset(from));
        let b = clip(self.signed_offset(to));
        a..b.max(a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Score,
    MobIn,
    MobOut,
    MobilityIndex,
    CumCases,
    CumCasesPer100k,
    NewCases,
}

impl Variable {
    pub const ALL: [Variable; 7] = [
        Variable::Score,
        Variable::MobIn,
        Variable::MobOut,
        Variable::MobilityIndex,
        Variable::CumCases,
        Variable::CumCasesPer100k,
        Variable::NewCases,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variable::Score => "score",
            Variable::MobIn => "mob_in",
            Variable::MobOut => "mob_out",
            Variable::MobilityIndex => "mobility_index",
            Variable::CumCases => "cum_cases",
            Variable::CumCasesPer100k => "cum_cases_per_100k",
            Variable::NewCases => "new_cases",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }

    fn is_cumulative(self) -> bool {
        matches!(self, Variable::CumCases | Variable::CumCasesPer100k)
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One variable observed daily for one unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelSeries {
    pub unit_id: String,
    pub variable: Variable,
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
}

impl PanelSeries {
    pub fn complete(unit_id: impl Into<String>, variable: Variable, values: Vec<f64>) -> Self {
        let missing = vec![false; values.len()];
        Self { unit_id: unit_id.into(), variable, values, missing }
    }

    pub fn all_missing(unit_id: impl Into<String>, variable: Variable, len: usize) -> Self {
        Self { unit_id: unit_id.into(), variable, values: vec![0.0; len], missing: vec![true; len] }
    }

    /// Builds a series from optional values; `None` becomes a masked day.
    pub fn from_options(unit_id: impl Into<String>, variable: Variable, values: &[Option<f64>]) -> Self {
        Self {
            unit_id: unit_id.into(),
            variable,
            values: values.iter().map(|v| v.unwrap_or(0.0)).collect(),
            missing: values.iter().map(Option::is_none).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, day: usize) -> Option<f64> {
        match self.missing.get(day) {
            Some(false) => Some(self.values[day]),
            _ => None,
        }
    }

    pub fn observed(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values.iter().zip(&self.missing).enumerate().filter(|(_, (_, m))| !**m).map(|(i, (v, _))| (i, *v))
    }

    pub fn n_missing(&self) -> usize {
        self.missing.iter().filter(|m| **m).count()
    }

    /// Sub-series over the half-open day window, mask preserved.
    pub fn align(&self, window: Range<usize>) -> Result<PanelSeries, PanelError> {
        if window.start > window.end || window.end > self.len() {
            return Err(PanelError::Range { start: window.start, end: window.end, len: self.len() });
        }
        Ok(PanelSeries {
            unit_id: self.unit_id.clone(),
            variable: self.variable,
            values: self.values[window.clone()].to_vec(),
            missing: self.missing[window].to_vec(),
        })
    }

    /// Mean of observed values in the window, `None` if all are missing.
    pub fn window_mean(&self, window: Range<usize>) -> Option<f64> {
        let (sum, n) = window
            .filter_map(|d| self.get(d))
            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    fn check_domain(&self) -> Result<(), PanelError> {
        let err = |day: usize, value: f64| PanelError::Domain {
            unit: self.unit_id.clone(),
            variable: self.variable,
            day,
            value,
        };
        let mut prev: Option<f64> = None;
        for (day, v) in self.observed() {
            if !v.is_finite() {
                return Err(err(day, v));
            }
            if self.variable == Variable::Score && !(0.0..=100.0).contains(&v) {
                return Err(err(day, v));
            }
            if self.variable.is_cumulative() {
                if let Some(p) = prev {
                    if v < p {
                        return Err(err(day, v));
                    }
                }
                prev = Some(v);
            }
        }
        Ok(())
    }
}

/// Start of a half-hour time-of-day interval, stored as minutes after midnight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Slot(u16);

impl Slot {
    pub const MINUTES: u16 = 30;

    pub fn from_minutes(m: u16) -> Option<Self> {
        (m % Self::MINUTES == 0 && m < 24 * 60).then_some(Slot(m))
    }

    pub fn from_hm(h: u16, m: u16) -> Option<Self> {
        if m >= 60 {
            return None;
        }
        Self::from_minutes(h * 60 + m)
    }

    /// Parses `HH:MM`.
    pub fn parse(s: &str) -> Option<Self> {
        let (h, m) = s.split_once(':')?;
        if h.len() != 2 || m.len() != 2 {
            return None;
        }
        Self::from_hm(h.parse().ok()?, m.parse().ok()?)
    }

    pub fn minutes(self) -> u16 {
        self.0
    }

    pub fn index(self) -> usize {
        (self.0 / Self::MINUTES) as usize
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}:{:02}", self.0 / 60, self.0 % 60)
    }
}

/// Set of half-hour slots, as a half-open time-of-day range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRange {
    pub from: Slot,
    pub to_minutes: u16,
}

impl SlotRange {
    /// Morning commute, 06:00 to 08:00.
    pub fn morning() -> Self {
        Self { from: Slot(6 * 60), to_minutes: 8 * 60 }
    }

    pub fn all_day() -> Self {
        Self { from: Slot(0), to_minutes: 24 * 60 }
    }

    pub fn contains(&self, slot: Slot) -> bool {
        slot.0 >= self.from.0 && slot.0 < self.to_minutes
    }
}

/// Directed trip counts between communes for one date and half-hour slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdMatrix {
    pub date: NaiveDate,
    pub slot: Slot,
    pub trips: BTreeMap<(String, String), u64>,
}

impl OdMatrix {
    pub fn total(&self) -> u64 {
        self.trips.values().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionEvent {
    pub device: String,
    pub timestamp: NaiveDateTime,
    pub antenna: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Antenna {
    pub commune: String,
    pub lat: f64,
    pub lon: f64,
}

/// Antenna connection events plus the antenna to commune lookup.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransitionLog {
    events: Vec<TransitionEvent>,
    pub antenna_map: BTreeMap<String, Antenna>,
}

impl TransitionLog {
    /// Sorts events by (device, timestamp). Fails with the first antenna id
    /// missing from the map.
    pub fn new(mut events: Vec<TransitionEvent>, antenna_map: BTreeMap<String, Antenna>) -> Result<Self, String> {
        if let Some(e) = events.iter().find(|e| !antenna_map.contains_key(&e.antenna)) {
            return Err(e.antenna.clone());
        }
        events.sort_by(|a, b| a.device.cmp(&b.device).then(a.timestamp.cmp(&b.timestamp)));
        Ok(Self { events, antenna_map })
    }

    /// Events grouped by device, each device's events in time order.
    pub fn events(&self) -> &[TransitionEvent] {
        &self.events
    }

    pub fn communes(&self) -> BTreeSet<String> {
        self.antenna_map.values().map(|a| a.commune.clone()).collect()
    }
}

/// Everything known about one study area.
#[derive(Clone, Debug)]
pub struct StudyRegion {
    communes: BTreeMap<String, Commune>,
    pub date_index: DateIndex,
    panels: BTreeMap<(String, Variable), PanelSeries>,
    pub schedule: InterventionSchedule,
}

impl StudyRegion {
    /// Every commune is registered with the schedule, so communes without
    /// entries read as never treated.
    pub fn new(communes: Vec<Commune>, date_index: DateIndex, mut schedule: InterventionSchedule) -> Result<Self, PanelError> {
        schedule.register_communes(communes.iter().map(|c| c.id.clone()));
        let mut map = BTreeMap::new();
        for c in communes {
            c.validate()?;
            if map.contains_key(&c.id) {
                return Err(PanelError::DuplicateCommune(c.id));
            }
            map.insert(c.id.clone(), c);
        }
        Ok(Self { communes: map, date_index, panels: BTreeMap::new(), schedule })
    }

    /// Adds a series; the unit must resolve to a commune (or, for scores,
    /// any opaque key is accepted so hexagon series can live here too).
    pub fn insert(&mut self, series: PanelSeries) -> Result<(), PanelError> {
        if series.len() != self.date_index.n_days || series.missing.len() != series.len() {
            return Err(PanelError::Length {
                unit: series.unit_id,
                variable: series.variable,
                got: series.values.len(),
                expected: self.date_index.n_days,
            });
        }
        if !self.communes.contains_key(&series.unit_id) && series.variable != Variable::Score {
            return Err(PanelError::UnknownUnit(series.unit_id));
        }
        series.check_domain()?;
        let key = (series.unit_id.clone(), series.variable);
        if self.panels.contains_key(&key) {
            return Err(PanelError::DuplicateSeries(key.0, key.1));
        }
        self.panels.insert(key, series);
        Ok(())
    }

    /// Inserts or replaces.
    pub fn upsert(&mut self, series: PanelSeries) -> Result<(), PanelError> {
        self.panels.remove(&(series.unit_id.clone(), series.variable));
        self.insert(series)
    }

    pub fn commune(&self, id: &str) -> Option<&Commune> {
        self.communes.get(id)
    }

    pub fn communes(&self) -> impl Iterator<Item = &Commune> {
        self.communes.values()
    }

    pub fn commune_ids(&self) -> Vec<String> {
        self.communes.keys().cloned().collect()
    }

    pub fn series(&self, unit: &str, variable: Variable) -> Option<&PanelSeries> {
        self.panels.get(&(unit.to_string(), variable))
    }

    /// All commune series of one variable, keyed by commune id.
    pub fn variable(&self, variable: Variable) -> BTreeMap<String, &PanelSeries> {
        self.panels
            .iter()
            .filter(|((u, v), _)| *v == variable && self.communes.contains_key(u))
            .map(|((u, _), s)| (u.clone(), s))
            .collect()
    }

    pub fn populations(&self) -> BTreeMap<String, u64> {
        self.communes.values().map(|c| (c.id.clone(), c.population)).collect()
    }

    /// Derives `cum_cases_per_100k` from `cum_cases` for every commune that has it.
    pub fn derive_case_rates(&mut self) -> Result<(), PanelError> {
        let derived: Vec<PanelSeries> = self
            .variable(Variable::CumCases)
            .into_iter()
            .map(|(id, s)| {
                let pop = self.communes[&id].population as f64;
                PanelSeries {
                    unit_id: id,
                    variable: Variable::CumCasesPer100k,
                    values: s.values.iter().map(|v| v * 1e5 / pop).collect(),
                    missing: s.missing.clone(),
                }
            })
            .collect();
        for s in derived {
            self.upsert(s)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn align_examples() {
        let s = PanelSeries::complete("a", Variable::Score, vec![5.0, 6.0, 7.0, 8.0]);
        assert_eq!(s.align(0..4).unwrap(), s);
        assert!(s.align(2..2).unwrap().is_empty());
        assert_eq!(s.align(0..3).unwrap().values, vec![5.0, 6.0, 7.0]);
        assert!(matches!(s.align(1..5), Err(PanelError::Range { .. })));
    }

    #[test]
    fn study_window_length() {
        let idx = DateIndex::spanning(d("2020-03-02"), d("2020-11-05")).unwrap();
        assert_eq!(idx.offset(d("2020-03-02")), Some(0));
        assert_eq!(idx.window(d("2020-02-20"), d("2020-03-31")), 0..29);
        assert_eq!(idx.date(idx.n_days - 1), d("2020-11-05"));
    }

    #[test]
    fn slot_parsing() {
        assert_eq!(Slot::parse("06:30").unwrap().minutes(), 390);
        assert!(Slot::parse("06:15").is_none());
        assert!(Slot::parse("24:00").is_none());
        assert!(Slot::parse("6:00").is_none());
        assert_eq!(Slot::parse("07:30").unwrap().to_string(), "07:30");
        let m = SlotRange::morning();
        assert!(m.contains(Slot::parse("07:30").unwrap()));
        assert!(!m.contains(Slot::parse("08:00").unwrap()));
    }

    #[test]
    fn region_rejects_bad_series() {
        let idx = DateIndex::new(d("2020-03-02"), 3).unwrap();
        let c = Commune { id: "13101".into(), name: "Santiago".into(), population: 10, income_index: 1.0, is_rural: false };
        let mut r = StudyRegion::new(vec![c], idx, InterventionSchedule::default()).unwrap();
        let cum = PanelSeries::complete("13101", Variable::CumCases, vec![1.0, 3.0, 2.0]);
        assert!(matches!(r.insert(cum), Err(PanelError::Domain { day: 2, .. })));
        let score = PanelSeries::complete("13101", Variable::Score, vec![1.0, 101.0, 2.0]);
        assert!(r.insert(score).is_err());
        let short = PanelSeries::complete("13101", Variable::MobIn, vec![1.0]);
        assert!(matches!(r.insert(short), Err(PanelError::Length { .. })));
        let ghost = PanelSeries::complete("x", Variable::MobIn, vec![1.0; 3]);
        assert!(matches!(r.insert(ghost), Err(PanelError::UnknownUnit(_))));
        let ok = PanelSeries::complete("13101", Variable::CumCases, vec![1.0, 2.0, 2.0]);
        r.insert(ok.clone()).unwrap();
        assert!(matches!(r.insert(ok), Err(PanelError::DuplicateSeries(..))));
        r.derive_case_rates().unwrap();
        assert_eq!(r.series("13101", Variable::CumCasesPer100k).unwrap().values[1], 2e4);
    }

    proptest! {
        #[test]
        fn align_full_window_is_identity(vals in proptest::collection::vec(proptest::option::of(-1e6f64..1e6), 0..40)) {
            let s = PanelSeries::from_options("u", Variable::MobIn, &vals);
            prop_assert_eq!(s.align(0..s.len()).unwrap(), s);
        }
    }
}
