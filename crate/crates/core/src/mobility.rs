//! Mobility measures: hexagon percentile scores, commune scores,
//! antenna-transition indices, per-capita flows to high-risk communes and the
//! commune OD graph.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;
use thiserror::Error;

use crate::ingest::{field, write_rows, HexRecord};
use crate::panel::{DateIndex, OdMatrix, PanelSeries, SlotRange, TransitionLog, Variable};
use crate::par::{self, Execution};

#[derive(Debug, Error, PartialEq)]
pub enum MobilityError {
    #[error("hexagon {hex} assigned to both {first} and {second}")]
    ConflictingAssignment { hex: String, first: String, second: String },
    #[error("commune {0} has no assigned hexagons")]
    NoHexagons(String),
    #[error("empty date window")]
    EmptyWindow,
    #[error("risk set is empty")]
    EmptyRiskSet,
    #[error("risk-set commune {0} is not a known commune")]
    UnknownRiskCommune(String),
    #[error("commune {0} has no population")]
    MissingPopulation(String),
    #[error("k must be at least 1")]
    ZeroK,
}

/// Percentile score of each hexagon relative to all hexagons reporting that day.
///
/// `score(h) = 100 * #{g : count(g) <= count(h)} / N`, so ties share the
/// largest empirical-CDF value and the busiest hexagon always scores 100.
pub fn score_counts(counts: &BTreeMap<String, u64>) -> BTreeMap<String, f64> {
    let mut sorted: Vec<u64> = counts.values().copied().collect();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    counts
        .iter()
        .map(|(h, c)| {
            let at_or_below = sorted.partition_point(|v| v <= c);
            (h.clone(), 100.0 * at_or_below as f64 / n)
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct HexScoreGrid {
    pub scores: BTreeMap<NaiveDate, BTreeMap<String, f64>>,
    pub assignment: BTreeMap<String, String>,
}

impl HexScoreGrid {
    pub fn hexagons_of(&self, commune: &str) -> Vec<&str> {
        self.assignment.iter().filter(|(_, c)| *c == commune).map(|(h, _)| h.as_str()).collect()
    }

    pub fn communes(&self) -> BTreeSet<String> {
        self.assignment.values().cloned().collect()
    }
}

pub fn score_hexagons(records: &[HexRecord]) -> Result<HexScoreGrid, MobilityError> {
    let mut assignment: BTreeMap<String, String> = BTreeMap::new();
    let mut by_date: BTreeMap<NaiveDate, BTreeMap<String, u64>> = BTreeMap::new();
    for r in records {
        match assignment.get(&r.hex_id) {
            Some(c) if *c != r.commune_id => {
                return Err(MobilityError::ConflictingAssignment {
                    hex: r.hex_id.clone(),
                    first: c.clone(),
                    second: r.commune_id.clone(),
                })
            }
            Some(_) => {}
            None => {
                assignment.insert(r.hex_id.clone(), r.commune_id.clone());
            }
        }
        by_date.entry(r.date).or_default().insert(r.hex_id.clone(), r.displacements);
    }
    Ok(score_hexagons_by_date(&by_date, assignment))
}

/// Scores every date independently. Dates with no reporting hexagon are
/// skipped with a warning.
pub fn score_hexagons_by_date(
    counts: &BTreeMap<NaiveDate, BTreeMap<String, u64>>,
    assignment: BTreeMap<String, String>,
) -> HexScoreGrid {
    let dates: Vec<(&NaiveDate, &BTreeMap<String, u64>)> = counts.iter().collect();
    let scored = par::map_slice(&dates, Execution::Parallel, |(date, c)| {
        if c.is_empty() {
            log::warn!("no hexagon reports on {date}; date skipped");
            None
        } else {
            Some((**date, score_counts(c)))
        }
    });
    HexScoreGrid { scores: scored.into_iter().flatten().collect(), assignment }
}

/// Daily unweighted mean of the commune's hexagon scores; missing on days
/// where none of its hexagons report.
pub fn commune_score(grid: &HexScoreGrid, commune: &str, index: &DateIndex) -> Result<PanelSeries, MobilityError> {
    let hexes = grid.hexagons_of(commune);
    if hexes.is_empty() {
        return Err(MobilityError::NoHexagons(commune.to_string()));
    }
    let values: Vec<Option<f64>> = index
        .dates()
        .map(|date| {
            let day = grid.scores.get(&date)?;
            let (sum, n) = hexes.iter().filter_map(|h| day.get(*h)).fold((0.0, 0), |(s, n), v| (s + v, n + 1));
            (n > 0).then(|| sum / n as f64)
        })
        .collect();
    Ok(PanelSeries::from_options(commune, Variable::Score, &values))
}

pub fn commune_scores(grid: &HexScoreGrid, index: &DateIndex) -> BTreeMap<String, PanelSeries> {
    grid.communes()
        .into_iter()
        .map(|c| {
            let s = commune_score(grid, &c, index).expect("commune drawn from the assignment");
            (c, s)
        })
        .collect()
}

/// Transition-based mobility panels for every commune.
#[derive(Clone, Debug, PartialEq)]
pub struct MobilityPanels {
    /// Raw transition counts.
    pub raw_in: BTreeMap<String, Vec<u64>>,
    pub raw_out: BTreeMap<String, Vec<u64>>,
    /// Study-wide divisor applied to the raw counts.
    pub scale: f64,
    /// Transitions outside the date index, not counted.
    pub dropped: usize,
}

impl MobilityPanels {
    fn scaled(&self, raw: &BTreeMap<String, Vec<u64>>, variable: Variable) -> BTreeMap<String, PanelSeries> {
        raw.iter()
            .map(|(c, v)| {
                let vals = v.iter().map(|x| *x as f64 / self.scale).collect();
                (c.clone(), PanelSeries::complete(c.clone(), variable, vals))
            })
            .collect()
    }

    pub fn mob_in(&self) -> BTreeMap<String, PanelSeries> {
        self.scaled(&self.raw_in, Variable::MobIn)
    }

    pub fn mob_out(&self) -> BTreeMap<String, PanelSeries> {
        self.scaled(&self.raw_out, Variable::MobOut)
    }

    /// `(MobIn + MobOut) / scale` per commune-day.
    pub fn mobility_index(&self) -> BTreeMap<String, PanelSeries> {
        self.raw_in
            .iter()
            .map(|(c, vin)| {
                let vout = &self.raw_out[c];
                let vals = vin.iter().zip(vout).map(|(a, b)| (a + b) as f64 / self.scale).collect();
                (c.clone(), PanelSeries::complete(c.clone(), Variable::MobilityIndex, vals))
            })
            .collect()
    }

    pub fn total_transitions(&self) -> u64 {
        self.raw_in.values().chain(self.raw_out.values()).flatten().sum()
    }
}

/// Counts antenna transitions per commune-day.
///
/// Consecutive events of one device on different antennas form a transition,
/// dated by the later event. Both ends in commune X count towards MobIn(X);
/// crossing from X to Y counts towards MobOut(X) only. Every commune of the
/// antenna map (plus `extra_communes`) gets a series, zero-filled.
pub fn mobility_indices(log: &TransitionLog, index: &DateIndex, extra_communes: &BTreeSet<String>) -> MobilityPanels {
    let mut communes = log.communes();
    communes.extend(extra_communes.iter().cloned());
    let zeros = vec![0u64; index.n_days];
    let mut raw_in: BTreeMap<String, Vec<u64>> = communes.iter().map(|c| (c.clone(), zeros.clone())).collect();
    let mut raw_out = raw_in.clone();
    let mut dropped = 0;
    for pair in log.events().windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.device != b.device || a.antenna == b.antenna {
            continue;
        }
        let Some(day) = index.offset(b.timestamp.date()) else {
            dropped += 1;
            continue;
        };
        let from = &log.antenna_map[&a.antenna].commune;
        let to = &log.antenna_map[&b.antenna].commune;
        if from == to {
            raw_in.get_mut(from).expect("commune registered")[day] += 1;
        } else {
            raw_out.get_mut(from).expect("commune registered")[day] += 1;
        }
    }
    let cells = (communes.len() * index.n_days).max(1) as f64;
    let total: u64 = raw_in.values().chain(raw_out.values()).flatten().sum();
    let mean = total as f64 / cells;
    let scale = if mean > 0.0 { mean } else { 1.0 };
    MobilityPanels { raw_in, raw_out, scale, dropped }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowVector {
    pub flow: BTreeMap<String, f64>,
    pub risk_set: BTreeSet<String>,
    pub window: (NaiveDate, NaiveDate),
    pub slots: SlotRange,
}

/// Per-capita trips from each commune into the risk set over the half-open
/// date window `[from, to)` and the slot range. Risk-set members get 0.
pub fn flow_vector(
    od: &[OdMatrix],
    risk_set: &BTreeSet<String>,
    window: (NaiveDate, NaiveDate),
    slots: SlotRange,
    populations: &BTreeMap<String, u64>,
) -> Result<FlowVector, MobilityError> {
    if window.0 >= window.1 {
        return Err(MobilityError::EmptyWindow);
    }
    if risk_set.is_empty() {
        return Err(MobilityError::EmptyRiskSet);
    }
    if let Some(r) = risk_set.iter().find(|r| !populations.contains_key(*r)) {
        return Err(MobilityError::UnknownRiskCommune(r.clone()));
    }
    let mut trips: BTreeMap<&str, u64> = BTreeMap::new();
    for m in od.iter().filter(|m| m.date >= window.0 && m.date < window.1 && slots.contains(m.slot)) {
        for ((o, d), t) in &m.trips {
            if risk_set.contains(d) && !risk_set.contains(o) {
                *trips.entry(o.as_str()).or_default() += t;
            }
        }
    }
    if let Some(o) = trips.keys().find(|o| !populations.contains_key(**o)) {
        return Err(MobilityError::MissingPopulation(o.to_string()));
    }
    let mut flow = BTreeMap::new();
    for (c, pop) in populations {
        if *pop == 0 {
            return Err(MobilityError::MissingPopulation(c.clone()));
        }
        let f = if risk_set.contains(c) { 0.0 } else { trips.get(c.as_str()).copied().unwrap_or(0) as f64 / *pop as f64 };
        flow.insert(c.clone(), f);
    }
    Ok(FlowVector { flow, risk_set: risk_set.clone(), window, slots })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RiskRule {
    TopK(usize),
    /// Every commune with a rate at or above the threshold.
    Threshold(f64),
}

/// High-risk communes by case rate. Ties at the cut go to the smaller id.
pub fn risk_set(rates: &BTreeMap<String, f64>, rule: RiskRule) -> Result<BTreeSet<String>, MobilityError> {
    match rule {
        RiskRule::TopK(0) => Err(MobilityError::ZeroK),
        RiskRule::TopK(k) => {
            let mut ranked: Vec<(&String, f64)> = rates.iter().map(|(c, r)| (c, *r)).collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
            Ok(ranked.into_iter().take(k).map(|(c, _)| c.clone()).collect())
        }
        RiskRule::Threshold(t) => Ok(rates.iter().filter(|(_, r)| **r >= t).map(|(c, _)| c.clone()).collect()),
    }
}

/// Case rate per commune on one day, from per-100k cumulative series.
/// Communes missing that day are omitted.
pub fn case_rates_at(series: &BTreeMap<String, &PanelSeries>, day: usize) -> BTreeMap<String, f64> {
    series.iter().filter_map(|(c, s)| s.get(day).map(|v| (c.clone(), v))).collect()
}

/// Directed commune graph weighted by summed trips.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OdGraph {
    pub edges: BTreeMap<(String, String), u64>,
    pub nodes: BTreeSet<String>,
}

impl OdGraph {
    /// Weighted out-degree per node (zero for pure sinks).
    pub fn out_degree(&self) -> BTreeMap<String, u64> {
        let mut deg: BTreeMap<String, u64> = self.nodes.iter().map(|n| (n.clone(), 0)).collect();
        for ((o, _), w) in &self.edges {
            *deg.get_mut(o).expect("edge endpoints are nodes") += w;
        }
        deg
    }

    pub fn in_degree(&self) -> BTreeMap<String, u64> {
        let mut deg: BTreeMap<String, u64> = self.nodes.iter().map(|n| (n.clone(), 0)).collect();
        for ((_, d), w) in &self.edges {
            *deg.get_mut(d).expect("edge endpoints are nodes") += w;
        }
        deg
    }

    pub fn total_weight(&self) -> u64 {
        self.edges.values().sum()
    }

    /// Writes `nodes.csv` (commune_id,outdeg) and `edges.csv` (origin,destination,weight).
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let mut nodes = std::io::BufWriter::new(std::fs::File::create(dir.join("nodes.csv"))?);
        write_rows(
            &mut nodes,
            "commune_id,outdeg",
            self.out_degree().into_iter().map(|(n, d)| format!("{},{d}", field(&n))),
        )?;
        let mut edges = std::io::BufWriter::new(std::fs::File::create(dir.join("edges.csv"))?);
        write_rows(
            &mut edges,
            "origin,destination,weight",
            self.edges.iter().map(|((o, d), w)| format!("{},{},{w}", field(o), field(d))),
        )?;
        edges.flush()
    }
}

/// Sums trips over the window `[from, to)` and slot range. Zero-trip pairs
/// produce no edge.
pub fn od_graph(od: &[OdMatrix], window: (NaiveDate, NaiveDate), slots: SlotRange) -> OdGraph {
    let mut g = OdGraph::default();
    for m in od.iter().filter(|m| m.date >= window.0 && m.date < window.1 && slots.contains(m.slot)) {
        for ((o, d), t) in &m.trips {
            if *t == 0 {
                continue;
            }
            g.nodes.insert(o.clone());
            g.nodes.insert(d.clone());
            *g.edges.entry((o.clone(), d.clone())).or_default() += t;
        }
    }
    g
}

/// Mean of each series over a day window.
pub fn window_means(series: &BTreeMap<String, PanelSeries>, window: Range<usize>) -> BTreeMap<String, Option<f64>> {
    series.iter().map(|(c, s)| (c.clone(), s.window_mean(window.clone()))).collect()
}
