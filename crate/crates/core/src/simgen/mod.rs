//! Synthetic city with planted ground truth.
//!
//! Communes belong to one of four archetypes that fix their income, mobility
//! band, commuting behaviour and confinement timeline. A commute-coupled
//! SEIR epidemic is stepped daily, and every observable table the pipeline
//! ingests is derived from it with seeded noise.

mod cross_section;
pub mod seir;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{self, CaseRecord, CaseTable, HexRecord, IngestError};
use crate::mobility::MobilityPanels;
use crate::panel::{Antenna, Commune, DateIndex, OdMatrix, Slot, StudyRegion, TransitionEvent, TransitionLog};
use crate::region::{self, AssembleError, RegionInputs};
use crate::schedule::{Intervention, InterventionKind, InterventionSchedule};

pub use cross_section::{cross_section, CrossSection, CrossSectionConfig};
pub use seir::{Compartments, Trajectory};

pub mod files {
    pub const HEX_SCORES: &str = "hex_scores.csv";
    pub const OD: &str = "od.csv";
    pub const TRANSITIONS: &str = "transitions.csv";
    pub const ANTENNAS: &str = "antennas.csv";
    pub const CASES: &str = "cases.csv";
    pub const SOCIO: &str = "socio.csv";
    pub const SCHEDULE: &str = "schedule.csv";
    pub const GROUND_TRUTH: &str = "ground_truth.json";
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Assemble(#[from] AssembleError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    Rural,
    Low,
    Mid,
    High,
}

impl Archetype {
    pub fn label(self) -> usize {
        self as usize
    }
}

/// One confinement phase in day offsets; `end` inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub kind: InterventionKind,
    pub start: usize,
    pub end: Option<usize>,
}

impl Phase {
    fn new(kind: InterventionKind, start: usize, end: Option<usize>) -> Self {
        Self { kind, start, end }
    }

    fn active(&self, day: usize) -> bool {
        day >= self.start && self.end.is_none_or(|e| day <= e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeSpec {
    pub archetype: Archetype,
    pub count: usize,
    pub income: (f64, f64),
    pub population: (u64, u64),
    /// Share of residents commuting out on a normal day.
    pub commute_share: f64,
    /// Pull as a commuting destination, before the population factor.
    pub attractiveness: f64,
    /// Typical daily displacements per hexagon.
    pub hex_base: f64,
    pub hexes: (usize, usize),
    /// Expected antenna transitions per day.
    pub transitions: f64,
    /// Baseline contact multiplier (crowding) applied to the transmission rate.
    pub contact: f64,
    pub phases: Vec<Phase>,
}

/// Fractional reduction per intervention kind.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reductions {
    pub partial: f64,
    pub total: f64,
    pub phase2: f64,
}

impl Reductions {
    fn of(&self, kind: InterventionKind) -> f64 {
        match kind {
            InterventionKind::PartialLockdown => self.partial,
            InterventionKind::TotalLockdown => self.total,
            InterventionKind::Phase2Transition => self.phase2,
        }
    }
}

/// Staggered release of quarantine with a planted effect on new cases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftingPlan {
    /// Treated communes; empty picks the first `cohort_size` low-income ids.
    pub cohort: Vec<String>,
    pub cohort_size: usize,
    pub day: usize,
    /// Shift of daily new cases per 100k inhabitants from `day` on.
    pub delta: f64,
    /// Late-lifting communes; empty picks the next `donor_size` low-income ids.
    pub donors: Vec<String>,
    pub donor_size: usize,
    pub donor_day: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CityConfig {
    pub seed: u64,
    pub start: NaiveDate,
    pub n_days: usize,
    pub archetypes: Vec<ArchetypeSpec>,
    pub beta: f64,
    pub sigma: f64,
    pub gamma: f64,
    /// Exposed persons placed in each of the richest communes on day 0.
    pub seed_exposed: f64,
    pub n_seeded: usize,
    pub contact_reduction: Reductions,
    pub mobility_reduction: Reductions,
    /// Compliance is `compliance_base + compliance_slope * income`.
    pub compliance_base: f64,
    pub compliance_slope: f64,
    pub weekend_factor: f64,
    /// Reporting noise sd per 100k is `case_noise_rel * rate + case_noise_abs`.
    pub case_noise_rel: f64,
    pub case_noise_abs: f64,
    /// Log-scale sd of hexagon displacement counts.
    pub hex_noise_sd: f64,
    /// OD matrices are emitted for the first `od_days` days.
    pub od_days: usize,
    pub od_top_destinations: usize,
    pub lifting: LiftingPlan,
}

impl Default for CityConfig {
    fn default() -> Self {
        use InterventionKind::*;
        let spec = |archetype, count, income, population, commute_share, attractiveness, hex_base, hexes, transitions, contact, phases| {
            ArchetypeSpec { archetype, count, income, population, commute_share, attractiveness, hex_base, hexes, transitions, contact, phases }
        };
        Self {
            seed: 1,
            start: NaiveDate::from_ymd_opt(2020, 2, 20).expect("valid date"),
            n_days: 249,
            archetypes: vec![
                spec(Archetype::Rural, 8, (0.05, 0.25), (8_000, 40_000), 0.05, 0.3, 30.0, (2, 3), 4.0, 0.35, vec![]),
                spec(
                    Archetype::Low,
                    18,
                    (0.15, 0.35),
                    (80_000, 300_000),
                    0.35,
                    1.0,
                    90.0,
                    (4, 6),
                    8.0,
                    0.75,
                    vec![Phase::new(TotalLockdown, 85, Some(185)), Phase::new(Phase2Transition, 186, None)],
                ),
                spec(
                    Archetype::Mid,
                    14,
                    (0.4, 0.6),
                    (60_000, 200_000),
                    0.25,
                    2.0,
                    270.0,
                    (4, 6),
                    12.0,
                    0.6,
                    vec![Phase::new(TotalLockdown, 85, Some(170)), Phase::new(Phase2Transition, 171, None)],
                ),
                spec(
                    Archetype::High,
                    12,
                    (0.7, 0.95),
                    (40_000, 150_000),
                    0.1,
                    4.0,
                    810.0,
                    (4, 6),
                    18.0,
                    0.55,
                    vec![
                        Phase::new(PartialLockdown, 35, Some(84)),
                        Phase::new(TotalLockdown, 85, Some(150)),
                        Phase::new(Phase2Transition, 151, None),
                    ],
                ),
            ],
            beta: 0.35,
            sigma: 1.0 / 5.2,
            gamma: 0.1,
            seed_exposed: 20.0,
            n_seeded: 4,
            contact_reduction: Reductions { partial: 0.4, total: 0.8, phase2: 0.5 },
            mobility_reduction: Reductions { partial: 0.3, total: 0.5, phase2: 0.15 },
            compliance_base: 0.55,
            compliance_slope: 0.45,
            weekend_factor: 0.7,
            case_noise_rel: 0.1,
            case_noise_abs: 0.5,
            hex_noise_sd: 0.25,
            od_days: 40,
            od_top_destinations: 8,
            lifting: LiftingPlan {
                cohort: vec![],
                cohort_size: 6,
                day: 200,
                delta: 20.0,
                donors: vec![],
                donor_size: 7,
                donor_day: 235,
            },
        }
    }
}

fn commune_id(k: usize) -> String {
    format!("C{:02}", k + 1)
}

impl CityConfig {
    pub fn n_communes(&self) -> usize {
        self.archetypes.iter().map(|a| a.count).sum()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.n_days == 0 {
            return bad("n_days must be positive".into());
        }
        if self.n_communes() < 3 {
            return bad("at least 3 communes are needed".into());
        }
        for (name, v) in [("beta", self.beta), ("sigma", self.sigma), ("gamma", self.gamma)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be > 0"));
            }
        }
        if self.sigma > 1.0 || self.gamma > 1.0 {
            return bad("sigma and gamma are daily exit fractions and must be <= 1".into());
        }
        for r in [self.contact_reduction, self.mobility_reduction] {
            for v in [r.partial, r.total, r.phase2] {
                if !(v > 0.0 && v <= 1.0) {
                    return bad(format!("reductions must lie in (0, 1], found {v}"));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.compliance_base) || !(0.0..=1.0).contains(&(self.compliance_base + self.compliance_slope)) {
            return bad("compliance must stay within [0, 1] for incomes in [0, 1]".into());
        }
        if !(self.weekend_factor > 0.0 && self.weekend_factor <= 1.0) {
            return bad("weekend_factor must lie in (0, 1]".into());
        }
        if self.case_noise_rel < 0.0 || self.case_noise_abs < 0.0 || self.hex_noise_sd < 0.0 {
            return bad("noise levels must be >= 0".into());
        }
        for a in &self.archetypes {
            if !(0.0..=1.0).contains(&a.income.0) || !(0.0..=1.0).contains(&a.income.1) || a.income.0 > a.income.1 {
                return bad(format!("{:?}: income range must lie in [0, 1]", a.archetype));
            }
            if a.population.0 == 0 || a.population.0 > a.population.1 {
                return bad(format!("{:?}: population range must be positive and ordered", a.archetype));
            }
            if !(0.0..1.0).contains(&a.commute_share) {
                return bad(format!("{:?}: commute share must lie in [0, 1)", a.archetype));
            }
            if a.hexes.0 == 0 || a.hexes.0 > a.hexes.1 || a.hex_base <= 0.0 || a.transitions <= 0.0 || a.attractiveness <= 0.0 || a.contact <= 0.0 {
                return bad(format!("{:?}: mobility parameters must be positive", a.archetype));
            }
        }
        let lp = &self.lifting;
        if !lp.delta.is_finite() {
            return bad("lifting delta must be finite".into());
        }
        if lp.day == 0 || lp.donor_day <= lp.day {
            return bad("donor_day must come after the lifting day, which must be positive".into());
        }
        let n = self.n_communes();
        let ids: BTreeSet<String> = (0..n).map(commune_id).collect();
        for c in lp.cohort.iter().chain(&lp.donors) {
            if !ids.contains(c) {
                return bad(format!("unknown commune {c}"));
            }
        }
        if lp.cohort.iter().any(|c| lp.donors.contains(c)) {
            return bad("cohort and donors overlap".into());
        }
        Ok(())
    }
}

/// Returns `config` with `cohort` released from quarantine on `day` and
/// daily new cases there shifted by `delta` per 100k relative to the
/// counterfactual in which the cohort stays confined.
pub fn plant_lifting_effect(mut config: CityConfig, cohort: Vec<String>, day: usize, delta: f64) -> Result<CityConfig, SimError> {
    if cohort.is_empty() {
        return Err(SimError::Config("empty cohort".into()));
    }
    config.lifting.cohort_size = cohort.len();
    config.lifting.cohort = cohort;
    config.lifting.day = day;
    config.lifting.delta = delta;
    config.validate()?;
    Ok(config)
}

/// Latent epidemic state, in persons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentSeries {
    pub s: Vec<f64>,
    pub e: Vec<f64>,
    pub i: Vec<f64>,
    pub r: Vec<f64>,
    /// New exposures per day.
    pub incidence: Vec<f64>,
    /// Incidence had the cohort stayed confined; equal to `incidence`
    /// outside the cohort.
    pub counterfactual_incidence: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    /// Archetype label per commune: 0 rural, 1 low, 2 mid, 3 high.
    pub labels: BTreeMap<String, usize>,
    pub archetypes: BTreeMap<String, Archetype>,
    pub seeded: Vec<String>,
    /// Coefficients and noise sd of the cross-section generator.
    pub coefficients: BTreeMap<String, f64>,
    pub sigma: f64,
    pub delta: f64,
    pub lift_day: usize,
    pub lift_date: NaiveDate,
    pub cohort: Vec<String>,
    pub donors: Vec<String>,
    pub donor_day: usize,
    pub latent: BTreeMap<String, LatentSeries>,
}

/// Every table of one synthetic study plus its ground truth.
#[derive(Clone, Debug)]
pub struct City {
    pub config: CityConfig,
    pub communes: Vec<Commune>,
    pub schedule: InterventionSchedule,
    pub hex: Vec<HexRecord>,
    pub od: Vec<OdMatrix>,
    pub transitions: TransitionLog,
    pub cases: Vec<CaseRecord>,
    pub truth: GroundTruth,
    /// Observed and counterfactual trajectories, micro-persons.
    pub observed: Trajectory,
    pub counterfactual: Trajectory,
}

struct Layout {
    archetype: Vec<Archetype>,
    spec_of: Vec<usize>,
    income: Vec<f64>,
    population: Vec<u64>,
    hex_factors: Vec<Vec<f64>>,
}

fn layout(cfg: &CityConfig, rng: &mut ChaCha8Rng) -> Layout {
    let mut slots: Vec<usize> = cfg.archetypes.iter().enumerate().flat_map(|(k, a)| std::iter::repeat_n(k, a.count)).collect();
    slots.shuffle(rng);
    let mut income = Vec::with_capacity(slots.len());
    let mut population = Vec::with_capacity(slots.len());
    let mut hex_factors = Vec::with_capacity(slots.len());
    for &k in &slots {
        let a = &cfg.archetypes[k];
        income.push(if a.income.0 < a.income.1 { rng.gen_range(a.income.0..=a.income.1) } else { a.income.0 });
        population.push(rng.gen_range(a.population.0..=a.population.1));
        let nh = rng.gen_range(a.hexes.0..=a.hexes.1);
        hex_factors.push((0..nh).map(|_| rng.gen_range(0.8..1.25)).collect());
    }
    Layout { archetype: slots.iter().map(|&k| cfg.archetypes[k].archetype).collect(), spec_of: slots, income, population, hex_factors }
}

/// Explicit ids win. Otherwise a middle income block of low-income communes
/// is split alternately into donors and cohort, so donors bracket the
/// treated units.
fn roles(cfg: &CityConfig, lay: &Layout, ids: &[String]) -> (Vec<usize>, Vec<usize>) {
    let lp = &cfg.lifting;
    let index_of = |c: &String| ids.iter().position(|i| i == c).expect("validated id");
    let mut low: Vec<usize> = (0..ids.len()).filter(|&k| lay.archetype[k] == Archetype::Low).collect();
    low.sort_by(|a, b| lay.income[*a].total_cmp(&lay.income[*b]).then(a.cmp(b)));
    let mut cohort: Vec<usize> = lp.cohort.iter().map(index_of).collect();
    let mut donors: Vec<usize> = lp.donors.iter().map(index_of).collect();
    let want_c = if lp.cohort.is_empty() { lp.cohort_size } else { 0 };
    let want_d = if lp.donors.is_empty() { lp.donor_size } else { 0 };
    low.retain(|k| !cohort.contains(k) && !donors.contains(k));
    let take = (want_c + want_d).min(low.len());
    let off = (low.len() - take) / 2;
    let (mut c, mut d) = (0, 0);
    for (i, &k) in low[off..off + take].iter().enumerate() {
        if (i % 2 == 0 || c == want_c) && d < want_d {
            donors.push(k);
            d += 1;
        } else if c < want_c {
            cohort.push(k);
            c += 1;
        }
    }
    cohort.sort_unstable();
    donors.sort_unstable();
    (cohort, donors)
}

/// Phases with the release moved to `day`; the last lockdown runs until the
/// day before.
fn release_at(phases: &[Phase], day: usize) -> Vec<Phase> {
    let mut out: Vec<Phase> = never_released(phases)
        .into_iter()
        .filter(|p| p.start < day)
        .map(|p| Phase::new(p.kind, p.start, Some(p.end.map_or(day - 1, |e| e.min(day - 1)))))
        .collect();
    out.push(Phase::new(InterventionKind::Phase2Transition, day, None));
    out
}

/// Phases with the release removed and the last lockdown left open.
fn never_released(phases: &[Phase]) -> Vec<Phase> {
    let mut out: Vec<Phase> = phases.iter().filter(|p| p.kind.is_lockdown()).cloned().collect();
    if let Some(last) = out.iter_mut().max_by_key(|p| p.start) {
        last.end = None;
    }
    out
}

fn daily_factor(phases: &[Phase], red: &Reductions, compliance: f64, day: usize) -> f64 {
    let r = phases.iter().filter(|p| p.active(day)).map(|p| red.of(p.kind)).fold(0.0, f64::max);
    1.0 - r * compliance
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

pub fn generate(config: &CityConfig) -> Result<City, SimError> {
    config.validate()?;
    let cfg = config;
    let n = cfg.n_communes();
    let days = cfg.n_days;
    let ids: Vec<String> = (0..n).map(commune_id).collect();
    let lay = layout(cfg, &mut stream(cfg.seed, 1));
    let index = DateIndex::new(cfg.start, days).map_err(|e| SimError::Config(e.to_string()))?;

    let lp = &cfg.lifting;
    let (cohort, donors) = roles(cfg, &lay, &ids);

    let mut observed_phases: Vec<Vec<Phase>> = lay.spec_of.iter().map(|&s| cfg.archetypes[s].phases.clone()).collect();
    let mut cf_phases = observed_phases.clone();
    for &k in &donors {
        observed_phases[k] = release_at(&observed_phases[k], lp.donor_day);
        cf_phases[k] = observed_phases[k].clone();
    }
    for &k in &cohort {
        let base = observed_phases[k].clone();
        cf_phases[k] = never_released(&base);
        observed_phases[k] = release_at(&base, lp.day);
    }

    let compliance: Vec<f64> = lay.income.iter().map(|y| cfg.compliance_base + cfg.compliance_slope * y).collect();
    let contact: Vec<Vec<f64>> = (0..days)
        .map(|t| {
            (0..n)
                .map(|k| cfg.archetypes[lay.spec_of[k]].contact * daily_factor(&cf_phases[k], &cfg.contact_reduction, compliance[k], t))
                .collect()
        })
        .collect();
    let mobility: Vec<Vec<f64>> = (0..days)
        .map(|t| {
            let wk = matches!(index.date(t).weekday(), Weekday::Sat | Weekday::Sun);
            let w = if wk { cfg.weekend_factor } else { 1.0 };
            (0..n).map(|k| w * daily_factor(&observed_phases[k], &cfg.mobility_reduction, compliance[k], t)).collect()
        })
        .collect();

    // commuting destinations
    let share: Vec<f64> = lay.spec_of.iter().map(|&s| cfg.archetypes[s].commute_share).collect();
    let pull: Vec<f64> =
        (0..n).map(|k| cfg.archetypes[lay.spec_of[k]].attractiveness * (lay.population[k] as f64).sqrt()).collect();
    let commute: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let tot: f64 = (0..n).filter(|&j| j != i).map(|j| pull[j]).sum();
            (0..n).map(|j| if j == i { 0.0 } else { pull[j] / tot }).collect()
        })
        .collect();

    let mut by_income: Vec<usize> = (0..n).collect();
    by_income.sort_by(|a, b| lay.income[*b].total_cmp(&lay.income[*a]).then(a.cmp(b)));
    let seeded: Vec<usize> = by_income.into_iter().take(cfg.n_seeded.min(n)).collect();
    let seeds: Vec<(usize, f64)> = seeded.iter().map(|&k| (k, cfg.seed_exposed)).collect();

    let input = seir::SeirInput {
        populations: &lay.population,
        beta: cfg.beta,
        sigma: cfg.sigma,
        gamma: cfg.gamma,
        commute_share: &share,
        commute: &commute,
        contact: &contact,
        seeds: &seeds,
    };
    let counterfactual = seir::run(&input, days);
    let shift: Vec<i64> =
        cohort.iter().map(|&k| (lp.delta * lay.population[k] as f64 / 1e5 * seir::UNIT).round() as i64).collect();
    let observed = seir::shift_incidence(&counterfactual, &cohort, lp.day, &shift, cfg.sigma, cfg.gamma);

    let communes: Vec<Commune> = (0..n)
        .map(|k| Commune {
            id: ids[k].clone(),
            name: format!("Commune {:02}", k + 1),
            population: lay.population[k],
            income_index: (lay.income[k] * 1e4).round() / 1e4,
            is_rural: lay.archetype[k] == Archetype::Rural,
        })
        .collect();

    let entries: Vec<Intervention> = (0..n)
        .flat_map(|k| {
            let id = ids[k].clone();
            observed_phases[k].iter().map(move |p| Intervention {
                commune: id.clone(),
                start: index.date(p.start),
                end: p.end.map(|e| index.date(e)),
                kind: p.kind,
            })
        })
        .filter(|e| e.start <= index.end())
        .collect();
    let schedule = InterventionSchedule::new(entries).map_err(|e| SimError::Config(e.to_string()))?.with_communes(ids.iter().cloned());

    let hex = hex_records(cfg, &lay, &ids, &mobility, &index);
    let transitions = transition_log(cfg, &lay, &ids, &commute, &mobility, &index);
    let od = od_matrices(cfg, &lay, &ids, &share, &commute, &mobility, &index);
    let cases = case_records(cfg, &lay, &ids, &observed, &index);

    let latent = (0..n)
        .map(|k| {
            let per = |f: &dyn Fn(&Compartments) -> u64| observed.states.iter().map(|s| f(s) as f64 / seir::UNIT).collect();
            (
                ids[k].clone(),
                LatentSeries {
                    s: per(&|s| s.s[k]),
                    e: per(&|s| s.e[k]),
                    i: per(&|s| s.i[k]),
                    r: per(&|s| s.r[k]),
                    incidence: observed.incidence.iter().map(|v| v[k] as f64 / seir::UNIT).collect(),
                    counterfactual_incidence: counterfactual.incidence.iter().map(|v| v[k] as f64 / seir::UNIT).collect(),
                },
            )
        })
        .collect();
    let xs = CrossSectionConfig::default();
    let truth = GroundTruth {
        seed: cfg.seed,
        labels: (0..n).map(|k| (ids[k].clone(), lay.archetype[k].label())).collect(),
        archetypes: (0..n).map(|k| (ids[k].clone(), lay.archetype[k])).collect(),
        seeded: seeded.iter().map(|&k| ids[k].clone()).collect(),
        coefficients: crate::inference::DESIGN_COLUMNS.iter().map(|c| c.to_string()).zip(xs.coefficients).collect(),
        sigma: xs.sigma,
        delta: lp.delta,
        lift_day: lp.day,
        lift_date: cfg.start + Duration::days(lp.day as i64),
        cohort: cohort.iter().map(|&k| ids[k].clone()).collect(),
        donors: donors.iter().map(|&k| ids[k].clone()).collect(),
        donor_day: lp.donor_day,
        latent,
    };
    Ok(City { config: cfg.clone(), communes, schedule, hex, od, transitions, cases, truth, observed, counterfactual })
}

fn hex_records(cfg: &CityConfig, lay: &Layout, ids: &[String], mobility: &[Vec<f64>], index: &DateIndex) -> Vec<HexRecord> {
    let mut rng = stream(cfg.seed, 2);
    let noise = Normal::new(0.0, cfg.hex_noise_sd).expect("sd validated");
    let mut out = Vec::new();
    for (t, mob) in mobility.iter().enumerate() {
        let date = index.date(t);
        for (k, id) in ids.iter().enumerate() {
            let base = cfg.archetypes[lay.spec_of[k]].hex_base * mob[k];
            for (h, f) in lay.hex_factors[k].iter().enumerate() {
                let v = base * f * noise.sample(&mut rng).exp();
                out.push(HexRecord {
                    date,
                    hex_id: format!("H{}-{}", id, h + 1),
                    commune_id: id.clone(),
                    displacements: v.round().max(0.0) as u64,
                });
            }
        }
    }
    out
}

fn antennas(ids: &[String]) -> BTreeMap<String, Antenna> {
    let mut map = BTreeMap::new();
    for (k, id) in ids.iter().enumerate() {
        let (lat, lon) = (-33.30 - 0.03 * (k / 8) as f64, -70.80 + 0.03 * (k % 8) as f64);
        for (s, off) in [("a", 0.004), ("b", -0.004)] {
            map.insert(format!("A{id}{s}"), Antenna { commune: id.clone(), lat: lat + off, lon: lon - off });
        }
    }
    map
}

fn transition_log(
    cfg: &CityConfig,
    lay: &Layout,
    ids: &[String],
    commute: &[Vec<f64>],
    mobility: &[Vec<f64>],
    index: &DateIndex,
) -> TransitionLog {
    let mut rng = stream(cfg.seed, 3);
    let mut events = Vec::new();
    for (t, mob) in mobility.iter().enumerate() {
        let midnight = index.date(t).and_hms_opt(0, 0, 0).expect("valid time");
        for (k, id) in ids.iter().enumerate() {
            let rate = cfg.archetypes[lay.spec_of[k]].transitions * mob[k];
            let n_in = poisson(&mut rng, 0.6 * rate);
            let n_out = poisson(&mut rng, 0.4 * rate);
            for d in 0..n_in + n_out {
                let (from, to) = if d < n_in {
                    (format!("A{id}a"), format!("A{id}b"))
                } else {
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let j = commute[k].iter().position(|c| {
                        acc += c;
                        u < acc
                    });
                    let j = j.unwrap_or_else(|| commute[k].iter().rposition(|c| *c > 0.0).unwrap_or(k));
                    (format!("A{id}a"), format!("A{}a", ids[j]))
                };
                let s0 = rng.gen_range(6 * 3600..21 * 3600);
                let s1 = s0 + rng.gen_range(60..3600);
                let device = format!("D{}-{}-{}", t, id, d);
                events.push(TransitionEvent { device: device.clone(), timestamp: midnight + Duration::seconds(s0), antenna: from });
                events.push(TransitionEvent { device, timestamp: midnight + Duration::seconds(s1), antenna: to });
            }
        }
    }
    TransitionLog::new(events, antennas(ids)).expect("antenna ids generated together")
}

fn od_matrices(
    cfg: &CityConfig,
    lay: &Layout,
    ids: &[String],
    share: &[f64],
    commute: &[Vec<f64>],
    mobility: &[Vec<f64>],
    index: &DateIndex,
) -> Vec<OdMatrix> {
    let mut rng = stream(cfg.seed, 4);
    let morning = Slot::from_hm(7, 0).expect("valid slot");
    let evening = Slot::from_hm(18, 0).expect("valid slot");
    let mut out = Vec::new();
    for (t, mob) in mobility.iter().enumerate().take(cfg.od_days) {
        let date = index.date(t);
        let mut am = BTreeMap::new();
        let mut pm = BTreeMap::new();
        for i in 0..ids.len() {
            let mut dests: Vec<usize> = (0..ids.len()).filter(|&j| j != i).collect();
            dests.sort_by(|a, b| commute[i][*b].total_cmp(&commute[i][*a]).then(a.cmp(b)));
            for &j in dests.iter().take(cfg.od_top_destinations) {
                let mean = lay.population[i] as f64 * share[i] * mob[i] * commute[i][j];
                let go = poisson(&mut rng, mean);
                let back = poisson(&mut rng, mean);
                if go > 0 {
                    am.insert((ids[i].clone(), ids[j].clone()), go);
                }
                if back > 0 {
                    pm.insert((ids[j].clone(), ids[i].clone()), back);
                }
            }
        }
        out.push(OdMatrix { date, slot: morning, trips: am });
        out.push(OdMatrix { date, slot: evening, trips: pm });
    }
    out
}

fn case_records(cfg: &CityConfig, lay: &Layout, ids: &[String], tr: &Trajectory, index: &DateIndex) -> Vec<CaseRecord> {
    let mut rng = stream(cfg.seed, 5);
    let z = Normal::new(0.0, 1.0).expect("unit normal");
    let mut cum = vec![0.0f64; ids.len()];
    let mut out = Vec::with_capacity(ids.len() * tr.incidence.len());
    for (t, inc) in tr.incidence.iter().enumerate() {
        for k in 0..ids.len() {
            let pop = lay.population[k] as f64;
            let rate = inc[k] as f64 / seir::UNIT / pop * 1e5;
            let noisy = (rate + (cfg.case_noise_rel * rate + cfg.case_noise_abs) * z.sample(&mut rng)).max(0.0);
            cum[k] += (noisy * pop / 1e5).round();
            out.push(CaseRecord { date: index.date(t), commune_id: ids[k].clone(), cum_cases: cum[k] });
        }
    }
    out
}

impl City {
    pub fn date_index(&self) -> DateIndex {
        DateIndex::new(self.config.start, self.config.n_days).expect("validated length")
    }

    pub fn case_table(&self) -> CaseTable {
        let mut table = CaseTable::default();
        for r in &self.cases {
            table.series.entry(r.commune_id.clone()).or_default().push((r.date, r.cum_cases));
        }
        table
    }

    /// The study region the ingest path would build from the written files.
    pub fn region(&self) -> Result<(StudyRegion, MobilityPanels), SimError> {
        let cases = self.case_table();
        Ok(region::assemble(RegionInputs {
            communes: self.communes.clone(),
            index: self.date_index(),
            schedule: self.schedule.clone(),
            hex: &self.hex,
            transitions: &self.transitions,
            cases: &cases,
        })?)
    }

    /// Writes every ingest table plus `ground_truth.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), SimError> {
        fs::create_dir_all(dir)?;
        ingest::write_hex_scores(&dir.join(files::HEX_SCORES), &self.hex)?;
        ingest::write_od(&dir.join(files::OD), &self.od)?;
        ingest::write_transitions(&dir.join(files::TRANSITIONS), &dir.join(files::ANTENNAS), &self.transitions)?;
        ingest::write_cases(&dir.join(files::CASES), &self.cases)?;
        ingest::write_socio(&dir.join(files::SOCIO), &self.communes)?;
        ingest::write_schedule(&dir.join(files::SCHEDULE), &self.schedule)?;
        let json = serde_json::to_string(&self.truth)?;
        fs::write(dir.join(files::GROUND_TRUTH), json)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CityConfig {
        let mut cfg = CityConfig::default();
        for (a, n) in cfg.archetypes.iter_mut().zip([2, 5, 3, 3]) {
            a.count = n;
        }
        cfg.n_days = 120;
        cfg.od_days = 10;
        cfg.lifting = LiftingPlan { cohort: vec![], cohort_size: 2, day: 90, delta: 20.0, donors: vec![], donor_size: 2, donor_day: 110 };
        cfg
    }

    #[test]
    fn conservation_and_monotone_cases() {
        let city = generate(&small()).unwrap();
        for st in &city.observed.states {
            for (k, c) in city.communes.iter().enumerate() {
                assert_eq!(st.total(k), c.population * seir::UNIT as u64);
            }
        }
        let mut last: BTreeMap<&str, f64> = BTreeMap::new();
        for r in &city.cases {
            let p = last.insert(&r.commune_id, r.cum_cases).unwrap_or(0.0);
            assert!(r.cum_cases >= p);
        }
    }

    #[test]
    fn deterministic_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate(&small()).unwrap().write_to(a.path()).unwrap();
        generate(&small()).unwrap().write_to(b.path()).unwrap();
        for f in [files::HEX_SCORES, files::OD, files::TRANSITIONS, files::ANTENNAS, files::CASES, files::SOCIO, files::SCHEDULE, files::GROUND_TRUTH] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        let mut other = small();
        other.seed = 2;
        let c = tempfile::tempdir().unwrap();
        generate(&other).unwrap().write_to(c.path()).unwrap();
        assert_ne!(fs::read(a.path().join(files::CASES)).unwrap(), fs::read(c.path().join(files::CASES)).unwrap());
    }

    #[test]
    fn noiseless_gap_is_delta() {
        let city = generate(&small()).unwrap();
        let t = &city.truth;
        assert_eq!(t.cohort.len(), 2);
        for c in &t.cohort {
            let pop = city.communes.iter().find(|x| &x.id == c).unwrap().population as f64;
            let l = &t.latent[c];
            for d in 0..city.config.n_days {
                let gap = (l.incidence[d] - l.counterfactual_incidence[d]) / pop * 1e5;
                let want = if d >= t.lift_day { 20.0 } else { 0.0 };
                assert!((gap - want).abs() < 1e-9, "{c} day {d}: {gap}");
            }
        }
        for c in t.labels.keys().filter(|c| !t.cohort.contains(c)) {
            assert_eq!(t.latent[c].incidence, t.latent[c].counterfactual_incidence);
        }
    }

    #[test]
    fn zero_delta_identical_worlds() {
        let mut cfg = small();
        cfg.lifting.delta = 0.0;
        let city = generate(&cfg).unwrap();
        assert_eq!(city.observed, city.counterfactual);
    }

    #[test]
    fn schedule_and_roles() {
        let city = generate(&small()).unwrap();
        let idx = city.date_index();
        for c in &city.truth.cohort {
            let d = city.schedule.treatment_day(&idx, c, InterventionKind::Phase2Transition).unwrap();
            assert_eq!(d, Some(90));
        }
        for c in &city.truth.donors {
            let d = city.schedule.treatment_day(&idx, c, InterventionKind::Phase2Transition).unwrap();
            assert_eq!(d, Some(110));
        }
        let rural: Vec<&Commune> = city.communes.iter().filter(|c| c.is_rural).collect();
        assert_eq!(rural.len(), 2);
        assert!(rural.iter().all(|c| city.schedule.for_commune(&c.id).next().is_none()));
    }

    #[test]
    fn release_keeps_lockdown_until_lift() {
        use InterventionKind::*;
        let base = vec![Phase::new(TotalLockdown, 85, Some(185)), Phase::new(Phase2Transition, 186, None)];
        assert_eq!(release_at(&base, 235), vec![Phase::new(TotalLockdown, 85, Some(234)), Phase::new(Phase2Transition, 235, None)]);
        assert_eq!(release_at(&base, 150), vec![Phase::new(TotalLockdown, 85, Some(149)), Phase::new(Phase2Transition, 150, None)]);
        assert_eq!(never_released(&base), vec![Phase::new(TotalLockdown, 85, None)]);
    }

    #[test]
    fn region_assembles() {
        let city = generate(&small()).unwrap();
        let (region, panels) = city.region().unwrap();
        assert_eq!(region.variable(crate::Variable::Score).len(), 13);
        assert_eq!(region.variable(crate::Variable::CumCasesPer100k).len(), 13);
        assert!(panels.total_transitions() > 0);
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = small();
        cfg.beta = 0.0;
        assert!(matches!(generate(&cfg), Err(SimError::Config(_))));
        let cfg = small();
        assert!(plant_lifting_effect(cfg.clone(), vec!["C99".into()], 50, 1.0).is_err());
        let ok = plant_lifting_effect(cfg, vec!["C01".into()], 50, 5.0).unwrap();
        assert_eq!(ok.lifting.cohort, vec!["C01".to_string()]);
    }
}
