//! Per-commune confinement timelines.

use std::collections::BTreeSet;
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::DateIndex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    PartialLockdown,
    TotalLockdown,
    /// Leaving quarantine. This is the treatment for synthetic control.
    Phase2Transition,
}

impl InterventionKind {
    pub const ALL: [InterventionKind; 3] =
        [InterventionKind::PartialLockdown, InterventionKind::TotalLockdown, InterventionKind::Phase2Transition];

    pub fn as_str(self) -> &'static str {
        match self {
            InterventionKind::PartialLockdown => "partial_lockdown",
            InterventionKind::TotalLockdown => "total_lockdown",
            InterventionKind::Phase2Transition => "phase2_transition",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn is_lockdown(self) -> bool {
        !matches!(self, InterventionKind::Phase2Transition)
    }
}

impl fmt::Display for InterventionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One confinement event. `end` is inclusive; `None` means still in force.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intervention {
    pub commune: String,
    pub start: NaiveDate,
    pub end: Option<NaiveDate>,
    pub kind: InterventionKind,
}

impl Intervention {
    pub fn active_on(&self, date: NaiveDate) -> bool {
        date >= self.start && self.end.is_none_or(|e| date <= e)
    }

    fn overlaps(&self, other: &Intervention) -> bool {
        let starts_before_other_ends = other.end.is_none_or(|e| self.start <= e);
        let other_starts_before_end = self.end.is_none_or(|e| other.start <= e);
        starts_before_other_ends && other_starts_before_end
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("intervention for {commune} ends ({end}) before it starts ({start})")]
    Inverted { commune: String, start: NaiveDate, end: NaiveDate },
    #[error("overlapping {kind} entries for {commune} starting {first} and {second}")]
    Overlap { commune: String, kind: InterventionKind, first: NaiveDate, second: NaiveDate },
    #[error("unknown commune {0}")]
    UnknownCommune(String),
}

/// Validated set of interventions plus the communes it is defined over.
///
/// Communes with no entries are still known to the schedule once registered,
/// so that lookups can distinguish "never treated" from "not in the study".
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InterventionSchedule {
    entries: Vec<Intervention>,
    communes: BTreeSet<String>,
}

impl InterventionSchedule {
    pub fn new(mut entries: Vec<Intervention>) -> Result<Self, ScheduleError> {
        for e in &entries {
            if let Some(end) = e.end {
                if end < e.start {
                    return Err(ScheduleError::Inverted { commune: e.commune.clone(), start: e.start, end });
                }
            }
        }
        entries.sort_by(|a, b| (&a.commune, a.kind, a.start).cmp(&(&b.commune, b.kind, b.start)));
        for pair in entries.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if a.commune == b.commune && a.kind == b.kind && a.overlaps(b) {
                return Err(ScheduleError::Overlap {
                    commune: a.commune.clone(),
                    kind: a.kind,
                    first: a.start,
                    second: b.start,
                });
            }
        }
        let communes = entries.iter().map(|e| e.commune.clone()).collect();
        Ok(Self { entries, communes })
    }

    /// Makes communes known to the schedule even if they have no entries.
    pub fn register_communes<I, S>(&mut self, ids: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.communes.extend(ids.into_iter().map(Into::into));
    }

    pub fn with_communes<I, S>(mut self, ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.register_communes(ids);
        self
    }

    pub fn entries(&self) -> &[Intervention] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn knows(&self, commune: &str) -> bool {
        self.communes.contains(commune)
    }

    pub fn for_commune<'a>(&'a self, commune: &'a str) -> impl Iterator<Item = &'a Intervention> + 'a {
        self.entries.iter().filter(move |e| e.commune == commune)
    }

    /// First start date of `kind` for the commune.
    pub fn first_date(&self, commune: &str, kind: InterventionKind) -> Result<Option<NaiveDate>, ScheduleError> {
        if !self.knows(commune) {
            return Err(ScheduleError::UnknownCommune(commune.to_string()));
        }
        Ok(self.for_commune(commune).filter(|e| e.kind == kind).map(|e| e.start).min())
    }

    /// Day offset of the first `kind` entry for the commune, relative to the
    /// index start (negative if it predates the index).
    pub fn treatment_day(
        &self,
        index: &DateIndex,
        commune: &str,
        kind: InterventionKind,
    ) -> Result<Option<i64>, ScheduleError> {
        Ok(self.first_date(commune, kind)?.map(|d| index.signed_offset(d)))
    }

    /// Kinds active for the commune on the given date.
    pub fn active(&self, commune: &str, date: NaiveDate) -> Vec<InterventionKind> {
        self.for_commune(commune).filter(|e| e.active_on(date)).map(|e| e.kind).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn entry(c: &str, s: &str, e: Option<&str>, kind: InterventionKind) -> Intervention {
        Intervention { commune: c.into(), start: d(s), end: e.map(d), kind }
    }

    #[test]
    fn first_phase2_lifting_for_las_condes() {
        use InterventionKind::*;
        let sched = InterventionSchedule::new(vec![
            entry("Las Condes", "2020-03-26", Some("2020-04-16"), PartialLockdown),
            entry("Las Condes", "2020-07-28", None, Phase2Transition),
        ])
        .unwrap();
        let idx = DateIndex::new(d("2020-03-02"), 249).unwrap();
        let day = sched.treatment_day(&idx, "Las Condes", Phase2Transition).unwrap().unwrap();
        assert_eq!(idx.date(day as usize), d("2020-07-28"));
        assert_eq!(day, 148);
    }

    #[test]
    fn empty_schedule_and_unknown_communes() {
        let idx = DateIndex::new(d("2020-03-02"), 10).unwrap();
        let s = InterventionSchedule::default().with_communes(["13101"]);
        assert_eq!(s.treatment_day(&idx, "13101", InterventionKind::TotalLockdown).unwrap(), None);
        assert_eq!(
            s.treatment_day(&idx, "nope", InterventionKind::TotalLockdown),
            Err(ScheduleError::UnknownCommune("nope".into()))
        );
    }

    #[test]
    fn earliest_of_two_entries() {
        use InterventionKind::*;
        let s = InterventionSchedule::new(vec![
            entry("a", "2020-09-28", None, Phase2Transition),
            entry("a", "2020-08-10", Some("2020-08-20"), Phase2Transition),
        ])
        .unwrap();
        assert_eq!(s.first_date("a", Phase2Transition).unwrap(), Some(d("2020-08-10")));
    }

    #[test]
    fn rejects_overlap_and_inversion() {
        use InterventionKind::*;
        let overlap = InterventionSchedule::new(vec![
            entry("a", "2020-04-01", Some("2020-04-10"), TotalLockdown),
            entry("a", "2020-04-10", None, TotalLockdown),
        ]);
        assert!(matches!(overlap, Err(ScheduleError::Overlap { .. })));
        let other_kind = InterventionSchedule::new(vec![
            entry("a", "2020-04-01", Some("2020-04-10"), TotalLockdown),
            entry("a", "2020-04-05", None, PartialLockdown),
        ]);
        assert!(other_kind.is_ok());
        let inv = InterventionSchedule::new(vec![entry("a", "2020-04-10", Some("2020-04-01"), TotalLockdown)]);
        assert!(matches!(inv, Err(ScheduleError::Inverted { .. })));
    }

    fn arb_entry() -> impl Strategy<Value = (u8, i64, Option<i64>, u8)> {
        (0u8..3, 0i64..100, proptest::option::of(0i64..30), 0u8..3)
    }

    fn build(raw: &[(u8, i64, Option<i64>, u8)]) -> Vec<Intervention> {
        let base = d("2020-03-01");
        raw.iter()
            .map(|(c, s, len, k)| Intervention {
                commune: format!("c{c}"),
                start: base + chrono::Duration::days(*s),
                end: len.map(|l| base + chrono::Duration::days(s + l)),
                kind: InterventionKind::ALL[*k as usize],
            })
            .collect()
    }

    fn brute_force_overlap(es: &[Intervention]) -> bool {
        let probe = |e: &Intervention, day: NaiveDate| e.active_on(day);
        for (i, a) in es.iter().enumerate() {
            for b in &es[i + 1..] {
                if a.commune != b.commune || a.kind != b.kind {
                    continue;
                }
                let base = d("2020-03-01");
                if (0..200).any(|k| {
                    let day = base + chrono::Duration::days(k);
                    probe(a, day) && probe(b, day)
                }) {
                    return true;
                }
            }
        }
        false
    }

    proptest! {
        #[test]
        fn validation_matches_daywise_overlap(raw in proptest::collection::vec(arb_entry(), 0..8)) {
            let es = build(&raw);
            let ok = InterventionSchedule::new(es.clone()).is_ok();
            prop_assert_eq!(ok, !brute_force_overlap(&es));
        }

        #[test]
        fn later_entries_do_not_move_treatment_day(first in 0i64..50, extra in 1i64..50) {
            use InterventionKind::*;
            let base = d("2020-03-01");
            let idx = DateIndex::new(base, 300).unwrap();
            let a = Intervention { commune: "x".into(), start: base + chrono::Duration::days(first), end: Some(base + chrono::Duration::days(first)), kind: Phase2Transition };
            let s1 = InterventionSchedule::new(vec![a.clone()]).unwrap();
            let later = base + chrono::Duration::days(first + extra);
            let b = Intervention { commune: "x".into(), start: later, end: None, kind: Phase2Transition };
            let s2 = InterventionSchedule::new(vec![a, b]).unwrap();
            prop_assert_eq!(s1.treatment_day(&idx, "x", Phase2Transition).unwrap(), s2.treatment_day(&idx, "x", Phase2Transition).unwrap());
        }
    }
}
