use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use super::{ols_fit, InferenceError};
use crate::panel::{DateIndex, PanelSeries, StudyRegion, Variable};
use crate::par::{self, Execution};

/// Pearson correlation; `None` with fewer than two points or zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    if n < 2 {
        return None;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a[..n].iter().zip(&b[..n]) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Per-date cross-sectional correlation.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrEvolution {
    pub r: Vec<Option<f64>>,
    /// Communes with both values on each date.
    pub n: Vec<usize>,
}

fn cross_section(a: &BTreeMap<String, &PanelSeries>, b: &BTreeMap<String, &PanelSeries>, day: usize) -> (Vec<f64>, Vec<f64>) {
    a.iter()
        .filter_map(|(c, sa)| Some((sa.get(day)?, b.get(c)?.get(day)?)))
        .unzip()
}

/// Pearson r across communes of `a` against `b` on every date. Dates with
/// fewer than three paired communes or zero variance are missing.
pub fn cross_sectional_corr(region: &StudyRegion, a: Variable, b: Variable, exec: Execution) -> CorrEvolution {
    let sa = region.variable(a);
    let sb = region.variable(b);
    let per_day = par::map_indices(region.date_index.n_days, exec, |day| {
        let (x, y) = cross_section(&sa, &sb, day);
        let r = if x.len() >= 3 { pearson(&x, &y) } else { None };
        if x.len() >= 3 && r.is_none() {
            log::warn!("zero variance on {}; correlation missing", region.date_index.date(day));
        }
        (r, x.len())
    });
    let (r, n) = per_day.into_iter().unzip();
    CorrEvolution { r, n }
}

/// R-squared of the single-predictor regression with intercept across
/// communes on one day.
pub fn r_squared_snapshot(region: &StudyRegion, day: usize, predictor: Variable, response: Variable) -> Result<f64, InferenceError> {
    if day >= region.date_index.n_days {
        return Err(InferenceError::DayOutOfRange(day));
    }
    let (x, y) = cross_section(&region.variable(predictor), &region.variable(response), day);
    if x.len() < 3 {
        return Err(InferenceError::TooFewUnits(x.len()));
    }
    let names = ["(Intercept)".to_string(), predictor.as_str().to_string()];
    let rows: Vec<Vec<f64>> = x.iter().map(|v| vec![1.0, *v]).collect();
    Ok(ols_fit(&names, &rows, &y)?.r_squared)
}

/// Symmetric commune-by-commune correlation matrix over time.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrMatrix {
    pub ids: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

/// Pairwise-complete correlation of every pair of series; pairs with fewer
/// than three shared observed days are missing.
pub fn mobility_corr_matrix(series: &BTreeMap<String, &PanelSeries>, exec: Execution) -> CorrMatrix {
    let ids: Vec<String> = series.keys().cloned().collect();
    let list: Vec<&PanelSeries> = series.values().copied().collect();
    let n = ids.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let vals = par::map_slice(&pairs, exec, |&(i, j)| {
        let (x, y): (Vec<f64>, Vec<f64>) = list[i].observed().filter_map(|(d, v)| list[j].get(d).map(|w| (v, w))).unzip();
        if x.len() < 3 {
            return None;
        }
        if i == j {
            return pearson(&x, &y).map(|_| 1.0);
        }
        pearson(&x, &y)
    });
    let mut values = vec![vec![None; n]; n];
    for (&(i, j), v) in pairs.iter().zip(vals) {
        values[i][j] = v;
        values[j][i] = v;
    }
    CorrMatrix { ids, values }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `date,r,n`, empty `r` where missing.
pub fn corr_evolution_csv(evo: &CorrEvolution, index: &DateIndex, path: &Path) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["date", "r", "n"])?;
    for (day, (r, n)) in evo.r.iter().zip(&evo.n).enumerate() {
        w.write_record([index.date(day).to_string(), opt(*r), n.to_string()])?;
    }
    w.flush()
}

pub fn corr_matrix_csv(m: &CorrMatrix, path: &Path) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(std::iter::once("commune_id").chain(m.ids.iter().map(String::as_str)))?;
    for (id, row) in m.ids.iter().zip(&m.values) {
        w.write_record(std::iter::once(id.clone()).chain(row.iter().map(|v| opt(*v))))?;
    }
    w.flush()
}
