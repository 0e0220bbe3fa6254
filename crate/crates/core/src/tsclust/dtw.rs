use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::PanelSeries;
use crate::par::{self, Execution};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepPattern {
    /// Unit weight on every step.
    Symmetric1,
    /// Diagonal steps weigh 2, horizontal and vertical steps 1.
    #[default]
    Symmetric2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DtwConfig {
    pub step_pattern: StepPattern,
    /// Sakoe-Chiba band radius in days; `None` leaves warping unconstrained.
    pub window: Option<usize>,
    /// Divide the symmetric2 cost by `len(x) + len(y)`.
    pub normalize: bool,
}

impl Default for DtwConfig {
    fn default() -> Self {
        Self { step_pattern: StepPattern::Symmetric2, window: None, normalize: false }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DtwError {
    #[error("empty series")]
    Empty,
    #[error("band radius must be at least 1")]
    ZeroWindow,
    #[error("band radius {window} admits no path between lengths {n} and {m}")]
    Infeasible { window: usize, n: usize, m: usize },
    #[error("normalization is only defined for symmetric2")]
    NormalizeSymmetric1,
    #[error("series {i} vs {j}: {source}")]
    Pair { i: usize, j: usize, source: Box<DtwError> },
    #[error("need at least 2 series, got {0}")]
    TooFew(usize),
    #[error("series {0} has no observed values")]
    AllMissing(String),
    #[error("non-finite value in series")]
    NonFinite,
}

/// Minimal cumulative absolute-difference cost over monotone warping paths.
pub fn dtw_distance(x: &[f64], y: &[f64], cfg: &DtwConfig) -> Result<f64, DtwError> {
    let (n, m) = (x.len(), y.len());
    if n == 0 || m == 0 {
        return Err(DtwError::Empty);
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(DtwError::NonFinite);
    }
    if cfg.normalize && cfg.step_pattern == StepPattern::Symmetric1 {
        return Err(DtwError::NormalizeSymmetric1);
    }
    let band = match cfg.window {
        Some(0) => return Err(DtwError::ZeroWindow),
        Some(w) if n.abs_diff(m) > w => return Err(DtwError::Infeasible { window: w, n, m }),
        Some(w) => w,
        None => usize::MAX,
    };
    let diag_weight = match cfg.step_pattern {
        StepPattern::Symmetric1 => 1.0,
        StepPattern::Symmetric2 => 2.0,
    };

    // Two rolling rows over y; cells outside the band stay infinite.
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![f64::INFINITY; m];
    for i in 0..n {
        cur.fill(f64::INFINITY);
        let lo = i.saturating_sub(band);
        let hi = i.saturating_add(band).min(m - 1);
        for j in lo..=hi {
            let cost = (x[i] - y[j]).abs();
            if i == 0 && j == 0 {
                cur[0] = cost;
                continue;
            }
            let mut best = f64::INFINITY;
            if i > 0 && j > 0 {
                best = best.min(prev[j - 1] + diag_weight * cost);
            }
            if i > 0 {
                best = best.min(prev[j] + cost);
            }
            if j > 0 {
                best = best.min(cur[j - 1] + cost);
            }
            cur[j] = best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let total = prev[m - 1];
    Ok(if cfg.normalize { total / (n + m) as f64 } else { total })
}

/// Dense symmetric matrix of pairwise distances.
#[derive(Clone, Debug, PartialEq)]
pub struct DistMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    /// Builds from a row-major square matrix, without validation.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), n, "distance matrix must be square");
            m.data[i * n..(i + 1) * n].copy_from_slice(r);
        }
        m
    }

    /// Absolute differences between scalar points.
    pub fn from_points(points: &[f64]) -> Self {
        let rows: Vec<Vec<f64>> = points.iter().map(|a| points.iter().map(|b| (a - b).abs()).collect()).collect();
        Self::from_rows(&rows)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Sub-matrix on the given indices, in that order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| idx.iter().map(|&j| self.get(i, j)).collect()).collect();
        Self::from_rows(&rows)
    }

    /// First violation of: finite, non-negative, zero diagonal, symmetric.
    pub fn check(&self) -> Result<(), String> {
        for i in 0..self.n {
            if self.get(i, i) != 0.0 {
                return Err(format!("non-zero diagonal at {i}"));
            }
            for j in 0..self.n {
                let v = self.get(i, j);
                if !v.is_finite() || v < 0.0 {
                    return Err(format!("invalid distance {v} at ({i}, {j})"));
                }
                let w = self.get(j, i);
                if (v - w).abs() > 1e-9 * v.abs().max(w.abs()).max(1.0) {
                    return Err(format!("asymmetric at ({i}, {j}): {v} vs {w}"));
                }
            }
        }
        Ok(())
    }
}

pub fn distance_matrix(series: &[Vec<f64>], cfg: &DtwConfig) -> Result<DistMatrix, DtwError> {
    distance_matrix_with(series, cfg, Execution::Parallel)
}

/// Pairwise DTW over the upper triangle, mirrored.
pub fn distance_matrix_with(series: &[Vec<f64>], cfg: &DtwConfig, exec: Execution) -> Result<DistMatrix, DtwError> {
    let n = series.len();
    if n < 2 {
        return Err(DtwError::TooFew(n));
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let dists = par::map_slice(&pairs, exec, |&(i, j)| {
        dtw_distance(&series[i], &series[j], cfg).map_err(|e| DtwError::Pair { i, j, source: Box::new(e) })
    });
    let mut out = DistMatrix::zeros(n);
    for (&(i, j), d) in pairs.iter().zip(dists) {
        out.set(i, j, d?);
    }
    Ok(out)
}

/// Linearly interpolates interior gaps and extends the ends flat.
pub fn fill_missing(series: &PanelSeries) -> Result<Vec<f64>, DtwError> {
    let obs: Vec<(usize, f64)> = series.observed().collect();
    if obs.is_empty() {
        return Err(DtwError::AllMissing(series.unit_id.clone()));
    }
    let mut out = vec![0.0; series.len()];
    let (first, last) = (obs[0], obs[obs.len() - 1]);
    out[..first.0].fill(first.1);
    out[last.0..].fill(last.1);
    for w in obs.windows(2) {
        let ((a, va), (b, vb)) = (w[0], w[1]);
        for (k, slot) in out[a..b].iter_mut().enumerate() {
            *slot = va + (vb - va) * k as f64 / (b - a) as f64;
        }
    }
    Ok(out)
}
