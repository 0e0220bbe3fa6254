//! Synthetic control and ridge-augmented synthetic control for staggered
//! interventions, with placebo diagnostics.

mod ascm;
mod weights;

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ascm::{
    ascm_fit, default_lambda_grid, lambda_cv_errors, placebo_distribution, placebo_rank, LambdaChoice, Placebo, ScmFit,
    ScmProblem,
};
pub use weights::{scm_weights, SimplexWeights, KKT_TOL};

use crate::panel::{StudyRegion, Variable};
use crate::par::{self, Execution};
use crate::schedule::{InterventionKind, ScheduleError};

#[derive(Debug, Error, PartialEq)]
pub enum ScmError {
    #[error("no donors")]
    NoDonors,
    #[error("need at least 3 donors, have {0}")]
    TooFewDonors(usize),
    #[error("malformed problem: {0}")]
    Shape(String),
    #[error("non-finite outcome value")]
    NonFinite,
    #[error("weights did not converge after {iterations} iterations (KKT residual {residual:e})")]
    Convergence { residual: f64, iterations: usize },
    #[error("invalid lambda grid: {0}")]
    BadGrid(String),
    #[error("every treated commune was excluded: {}", .0.iter().map(|(c, r)| format!("{c} ({r})")).collect::<Vec<_>>().join("; "))]
    AllExcluded(Vec<(String, String)>),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Daily new cases per 100k, smoothed by a centered moving average.
    #[default]
    NewCasesPer100k,
    MobilityIndex,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DonorRule {
    /// Every non-cohort commune untreated through the unit's post window.
    CleanControls,
    /// A fixed pool. A unit's post window is cut where the first pool member
    /// becomes treated.
    Explicit(Vec<String>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StaggeredConfig {
    pub outcome: Outcome,
    /// Moving-average width in days; 1 disables smoothing.
    pub smoothing: usize,
    pub pre_window: usize,
    pub post_window: usize,
    pub donor_rule: DonorRule,
    pub lambda: LambdaChoice,
    pub treatment_kind: InterventionKind,
    /// Restrict donors to the treated unit's cluster.
    pub clusters: Option<BTreeMap<String, usize>>,
}

impl Default for StaggeredConfig {
    fn default() -> Self {
        Self {
            outcome: Outcome::NewCasesPer100k,
            smoothing: 7,
            pre_window: 42,
            post_window: 28,
            donor_rule: DonorRule::CleanControls,
            lambda: LambdaChoice::default(),
            treatment_kind: InterventionKind::Phase2Transition,
            clusters: None,
        }
    }
}

/// Centered moving average with the window truncated at both ends.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let n = values.len();
    let w = window.max(1);
    let (back, fwd) = ((w - 1) / 2, w / 2);
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(back);
            let hi = (t + fwd + 1).min(n);
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Raw daily outcome per commune, `None` where unobserved.
pub fn outcome_series(region: &StudyRegion, outcome: Outcome) -> BTreeMap<String, Vec<Option<f64>>> {
    let n = region.date_index.n_days;
    let pops = region.populations();
    match outcome {
        Outcome::MobilityIndex => region
            .variable(Variable::MobilityIndex)
            .into_iter()
            .map(|(c, s)| (c, (0..n).map(|d| s.get(d)).collect()))
            .collect(),
        Outcome::NewCasesPer100k => {
            let new = region.variable(Variable::NewCases);
            region
                .variable(Variable::CumCases)
                .into_iter()
                .map(|(c, cum)| {
                    let per = 1e5 / pops[&c] as f64;
                    let vals = match new.get(&c) {
                        Some(s) => (0..n).map(|d| s.get(d).map(|v| v * per)).collect(),
                        None => (0..n)
                            .map(|d| if d == 0 { None } else { Some((cum.get(d)? - cum.get(d - 1)?) * per) })
                            .collect(),
                    };
                    (c, vals)
                })
                .collect()
        }
    }
}

/// Smooths `raw[from..to]`, each side of `split` separately so that no
/// value before `split` depends on data at or after it.
fn segment(raw: &[Option<f64>], from: usize, split: usize, to: usize, width: usize) -> Option<Vec<f64>> {
    let lo = from.saturating_sub(width / 2);
    let pre: Vec<f64> = raw[lo..split].iter().copied().collect::<Option<_>>()?;
    let post: Vec<f64> = raw[split..to].iter().copied().collect::<Option<_>>()?;
    let mut out = moving_average(&pre, width)[from - lo..].to_vec();
    out.extend(moving_average(&post, width));
    Some(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnitFit {
    pub fit: ScmFit,
    pub problem: ScmProblem,
    pub treatment_day: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StaggeredFit {
    pub units: Vec<UnitFit>,
    pub excluded: Vec<(String, String)>,
    /// Event days `-pre_window .. post_window`.
    pub event_days: Vec<i64>,
    pub avg_gap: Vec<f64>,
    pub n_treated: Vec<usize>,
    /// Mean of the per-unit average post-window gaps.
    pub att: f64,
}

/// Treatment day of each cohort commune from the region's schedule.
pub fn cohort_treatment_days(
    region: &StudyRegion,
    cohort: &[String],
    kind: InterventionKind,
) -> Result<BTreeMap<String, Option<i64>>, ScmError> {
    cohort
        .iter()
        .map(|c| Ok((c.clone(), region.schedule.treatment_day(&region.date_index, c, kind)?)))
        .collect()
}

fn build_problem(
    region: &StudyRegion,
    series: &BTreeMap<String, Vec<Option<f64>>>,
    cohort: &BTreeSet<String>,
    unit: &str,
    t: i64,
    cfg: &StaggeredConfig,
) -> Result<(ScmProblem, usize), String> {
    let n = region.date_index.n_days as i64;
    if t < cfg.pre_window as i64 {
        return Err(format!("only {t} days before treatment"));
    }
    if t >= n {
        return Err("treated after the study window".into());
    }
    let t = t as usize;
    let mut post = cfg.post_window.min(n as usize - t);
    if post < cfg.post_window {
        log::warn!("{unit}: post window cut to {post} days by the end of the data");
    }
    let donor_day = |c: &str| -> Result<Option<i64>, String> {
        region.schedule.treatment_day(&region.date_index, c, cfg.treatment_kind).map_err(|e| e.to_string())
    };
    let pool: Vec<String> = match &cfg.donor_rule {
        DonorRule::CleanControls => {
            let mut pool = Vec::new();
            for c in region.commune_ids() {
                if cohort.contains(&c) || c == unit {
                    continue;
                }
                match donor_day(&c)? {
                    Some(d) if d < (t + post) as i64 => {}
                    _ => pool.push(c),
                }
            }
            pool
        }
        DonorRule::Explicit(list) => {
            let mut earliest: Option<i64> = None;
            for c in list {
                if let Some(d) = donor_day(c)? {
                    earliest = Some(earliest.map_or(d, |e| e.min(d)));
                }
            }
            if let Some(e) = earliest {
                let room = e - t as i64;
                if room <= 0 {
                    return Err("explicit donors treated no later than this unit".into());
                }
                if (room as usize) < post {
                    log::warn!("{unit}: post window cut to {room} days where the first donor becomes treated");
                    post = room as usize;
                }
            }
            list.iter().filter(|c| c.as_str() != unit).cloned().collect()
        }
    };
    let pool: Vec<String> = match &cfg.clusters {
        Some(labels) => {
            let own = labels.get(unit);
            pool.into_iter().filter(|c| own.is_some() && labels.get(c) == own).collect()
        }
        None => pool,
    };
    let from = t - cfg.pre_window;
    let raw = series.get(unit).ok_or("no outcome series")?;
    let treated = segment(raw, from, t, t + post, cfg.smoothing).ok_or("missing outcome values")?;
    let mut donor_ids = Vec::new();
    let mut donors = Vec::new();
    for c in pool {
        match series.get(&c).and_then(|s| segment(s, from, t, t + post, cfg.smoothing)) {
            Some(d) => {
                donor_ids.push(c);
                donors.push(d);
            }
            None => log::warn!("{unit}: donor {c} dropped for incomplete outcome data"),
        }
    }
    if donors.is_empty() {
        return Err("no eligible donors".into());
    }
    Ok((ScmProblem { treated_id: unit.to_string(), treated, donor_ids, donors, pre_len: cfg.pre_window }, t))
}

/// Per-unit ASCM in event time, averaged across the cohort.
pub fn staggered_ascm(
    region: &StudyRegion,
    cohort: &BTreeMap<String, Option<i64>>,
    cfg: &StaggeredConfig,
    exec: Execution,
) -> Result<StaggeredFit, ScmError> {
    if cfg.pre_window < 2 {
        return Err(ScmError::Shape(format!("pre-window of {} days", cfg.pre_window)));
    }
    let series = outcome_series(region, cfg.outcome);
    let members: BTreeSet<String> = cohort.keys().cloned().collect();
    let mut excluded = Vec::new();
    let mut problems = Vec::new();
    for (unit, day) in cohort {
        let built = match day {
            None => Err("never treated".to_string()),
            Some(t) => build_problem(region, &series, &members, unit, *t, cfg),
        };
        match built {
            Ok(p) => problems.push(p),
            Err(reason) => {
                log::warn!("excluding {unit}: {reason}");
                excluded.push((unit.clone(), reason));
            }
        }
    }
    if problems.is_empty() {
        return Err(ScmError::AllExcluded(excluded));
    }
    let fits = par::map_slice(&problems, exec, |(p, _)| ascm_fit(p, &cfg.lambda, Execution::Sequential));
    let mut units = Vec::new();
    for ((problem, t), fit) in problems.into_iter().zip(fits) {
        units.push(UnitFit { fit: fit?, problem, treatment_day: t });
    }

    let pre = cfg.pre_window as i64;
    let event_days: Vec<i64> = (-pre..cfg.post_window as i64).collect();
    let mut sums = vec![0.0; event_days.len()];
    let mut n_treated = vec![0usize; event_days.len()];
    for u in &units {
        for (k, g) in u.fit.gap.iter().enumerate() {
            sums[k] += g;
            n_treated[k] += 1;
        }
    }
    let avg_gap = sums.iter().zip(&n_treated).map(|(s, n)| if *n > 0 { s / *n as f64 } else { f64::NAN }).collect();
    let att = units.iter().map(|u| u.fit.att).sum::<f64>() / units.len() as f64;
    Ok(StaggeredFit { units, excluded, event_days, avg_gap, n_treated, att })
}

/// Cohort-level placebo: each donor is treated in place of every unit whose
/// pool contains it, and its pseudo effects are averaged.
pub fn staggered_placebo(fit: &StaggeredFit, lambda: &LambdaChoice, exec: Execution) -> Result<Placebo, ScmError> {
    let mut jobs: Vec<(usize, usize)> = Vec::new();
    for (u, unit) in fit.units.iter().enumerate() {
        if unit.problem.donors.len() >= 2 {
            jobs.extend((0..unit.problem.donors.len()).map(|j| (u, j)));
        }
    }
    let results = par::map_slice(&jobs, exec, |&(u, j)| {
        let p = &fit.units[u].problem;
        let mut sub = p.clone();
        sub.treated_id = sub.donor_ids.remove(j);
        sub.treated = sub.donors.remove(j);
        ascm_fit(&sub, lambda, Execution::Sequential).map(|f| (sub.treated_id, f.att))
    });
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in results {
        let (id, att) = r?;
        let e = acc.entry(id).or_default();
        e.0 += att;
        e.1 += 1;
    }
    if acc.len() < 3 {
        return Err(ScmError::TooFewDonors(acc.len()));
    }
    let pseudo: Vec<(String, f64)> = acc.into_iter().map(|(id, (s, n))| (id, s / n as f64)).collect();
    let vals: Vec<f64> = pseudo.iter().map(|p| p.1).collect();
    Ok(Placebo { true_att: fit.att, rank: placebo_rank(fit.att, &vals), pseudo })
}

pub fn write_gap_csv(fit: &StaggeredFit, path: &Path) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["event_day", "avg_gap", "n_treated"])?;
    for ((d, g), n) in fit.event_days.iter().zip(&fit.avg_gap).zip(&fit.n_treated) {
        if *n > 0 {
            w.write_record([d.to_string(), g.to_string(), n.to_string()])?;
        }
    }
    w.flush()
}

pub fn write_weights_csv(fit: &StaggeredFit, path: &Path) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["treated", "donor", "weight"])?;
    for u in &fit.units {
        for (d, wt) in u.fit.donor_ids.iter().zip(&u.fit.weights) {
            w.write_record([u.fit.treated_id.as_str(), d.as_str(), &wt.to_string()])?;
        }
    }
    w.flush()
}

pub fn write_placebo_csv(placebo: &Placebo, path: &Path) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["donor", "pseudo_att"])?;
    for (d, a) in &placebo.pseudo {
        w.write_record([d.as_str(), &a.to_string()])?;
    }
    w.flush()
}
