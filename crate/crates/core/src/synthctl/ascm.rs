//! Ridge-augmented synthetic control.

use nalgebra::{DMatrix, DVector};

use super::weights::scm_weights;
use super::ScmError;
use crate::par::{self, Execution};

/// One treated unit against a donor pool, aligned in event time.
#[derive(Clone, Debug, PartialEq)]
pub struct ScmProblem {
    pub treated_id: String,
    /// Treated outcome over pre then post window.
    pub treated: Vec<f64>,
    pub donor_ids: Vec<String>,
    /// Donor outcomes, same layout as `treated`.
    pub donors: Vec<Vec<f64>>,
    pub pre_len: usize,
}

impl ScmProblem {
    pub fn post_len(&self) -> usize {
        self.treated.len() - self.pre_len
    }

    pub fn validate(&self) -> Result<(), ScmError> {
        if self.donors.is_empty() {
            return Err(ScmError::NoDonors);
        }
        if self.pre_len < 2 {
            return Err(ScmError::Shape(format!("pre-window of {} days", self.pre_len)));
        }
        if self.pre_len > self.treated.len() {
            return Err(ScmError::Shape("pre-window longer than series".into()));
        }
        if self.donor_ids.len() != self.donors.len() {
            return Err(ScmError::Shape("donor ids and series differ in count".into()));
        }
        if self.donor_ids.contains(&self.treated_id) {
            return Err(ScmError::Shape(format!("{} is both treated and donor", self.treated_id)));
        }
        if let Some(d) = self.donors.iter().position(|d| d.len() != self.treated.len()) {
            return Err(ScmError::Shape(format!("donor {} has {} values", self.donor_ids[d], self.donors[d].len())));
        }
        if self.treated.iter().chain(self.donors.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(ScmError::NonFinite);
        }
        Ok(())
    }

    fn without_donor(&self, j: usize) -> ScmProblem {
        let mut p = self.clone();
        p.treated_id = p.donor_ids.remove(j);
        p.treated = p.donors.remove(j);
        p
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LambdaChoice {
    Fixed(f64),
    /// Leave-one-donor-out search over the grid, or the default grid.
    CrossValidate(Option<Vec<f64>>),
}

impl Default for LambdaChoice {
    fn default() -> Self {
        LambdaChoice::CrossValidate(None)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScmFit {
    pub treated_id: String,
    pub donor_ids: Vec<String>,
    pub weights: Vec<f64>,
    /// Ridge direction over pre-period days.
    pub ridge_coefficients: Vec<f64>,
    /// Donor weight adjustments implied by the ridge term; they sum to zero.
    pub ridge_adjustment: Vec<f64>,
    pub lambda: f64,
    /// Treated minus synthetic over pre then post window.
    pub gap: Vec<f64>,
    pub synthetic_scm: Vec<f64>,
    pub pre_len: usize,
    pub att: f64,
    pub kkt_residual: f64,
}

impl ScmFit {
    pub fn pre_gap(&self) -> &[f64] {
        &self.gap[..self.pre_len]
    }

    pub fn post_gap(&self) -> &[f64] {
        &self.gap[self.pre_len..]
    }
}

/// Default grid: 20 log-spaced points from 1e-3 to 1e3 times the pooled
/// donor pre-period variance.
pub fn default_lambda_grid(problem: &ScmProblem) -> Vec<f64> {
    let vals: Vec<f64> = problem.donors.iter().flat_map(|d| d[..problem.pre_len].iter().copied()).collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
    let scale = if var > 0.0 { var } else { 1.0 };
    (0..20).map(|k| scale * 10f64.powf(-3.0 + 6.0 * k as f64 / 19.0)).collect()
}

/// Eigen-decomposition of the donor Gram matrix `K = X_c X_c^T`, where
/// `X_c` holds the donor pre-period outcomes centered across donors.
struct Ridge {
    xc: DMatrix<f64>,
    q: DMatrix<f64>,
    mu: DVector<f64>,
}

impl Ridge {
    fn new(problem: &ScmProblem) -> Self {
        let (j, t0) = (problem.donors.len(), problem.pre_len);
        let mut xc = DMatrix::from_fn(j, t0, |a, t| problem.donors[a][t]);
        for t in 0..t0 {
            let m = xc.column(t).mean();
            xc.column_mut(t).add_scalar_mut(-m);
        }
        let k = &xc * xc.transpose();
        let eig = k.symmetric_eigen();
        Self { xc, q: eig.eigenvectors, mu: eig.eigenvalues }
    }

    /// `(K + lambda)^+ v`, dropping numerically null directions.
    fn k_solve(&self, v: &DVector<f64>, lambda: f64) -> DVector<f64> {
        let top = self.mu.iter().fold(0.0f64, |m, x| m.max(*x));
        let mut c = self.q.transpose() * v;
        for (ci, mu) in c.iter_mut().zip(self.mu.iter()) {
            *ci = if *mu <= top * 1e-12 { 0.0 } else { *ci / (mu + lambda) };
        }
        &self.q * c
    }

    /// Ridge direction `d = (X_c^T X_c + lambda)^{-1} r` restricted to the
    /// donor row space, and the donor adjustment `a = X_c d`.
    fn solve(&self, r: &[f64], lambda: f64) -> (Vec<f64>, Vec<f64>) {
        let r = DVector::from_column_slice(r);
        let a = self.k_solve(&(&self.xc * r), lambda);
        let d = self.xc.transpose() * self.k_solve(&a, 0.0);
        (d.iter().copied().collect(), a.iter().copied().collect())
    }
}

fn synthetic(weights: &[f64], donors: &[Vec<f64>], t: usize) -> f64 {
    weights.iter().zip(donors).map(|(w, d)| w * d[t]).sum()
}

fn fit_with_lambda(problem: &ScmProblem, scm: &[f64], kkt: f64, ridge: &Ridge, lambda: f64) -> ScmFit {
    let pre = problem.pre_len;
    let n = problem.treated.len();
    let synthetic_scm: Vec<f64> = (0..n).map(|t| synthetic(scm, &problem.donors, t)).collect();
    let r: Vec<f64> = (0..pre).map(|t| problem.treated[t] - synthetic_scm[t]).collect();
    let (d, a) = ridge.solve(&r, lambda);
    let j = problem.donors.len() as f64;
    let gap: Vec<f64> = (0..n)
        .map(|t| {
            let mean = problem.donors.iter().map(|d| d[t]).sum::<f64>() / j;
            let correction: f64 = a.iter().zip(&problem.donors).map(|(aj, d)| aj * (d[t] - mean)).sum();
            problem.treated[t] - synthetic_scm[t] - correction
        })
        .collect();
    let post = &gap[pre..];
    let att = if post.is_empty() { f64::NAN } else { post.iter().sum::<f64>() / post.len() as f64 };
    ScmFit {
        treated_id: problem.treated_id.clone(),
        donor_ids: problem.donor_ids.clone(),
        weights: scm.to_vec(),
        ridge_coefficients: d,
        ridge_adjustment: a,
        lambda,
        gap,
        synthetic_scm,
        pre_len: pre,
        att,
        kkt_residual: kkt,
    }
}

/// Leave-one-donor-out error of post-window predictions for each lambda.
pub fn lambda_cv_errors(problem: &ScmProblem, grid: &[f64], exec: Execution) -> Result<Vec<f64>, ScmError> {
    let j = problem.donors.len();
    if j < 2 {
        return Ok(vec![0.0; grid.len()]);
    }
    let per_donor = par::map_indices(j, exec, |k| -> Result<Vec<f64>, ScmError> {
        let sub = problem.without_donor(k);
        let w = scm_weights(&sub.treated[..sub.pre_len], &sub.donors.iter().map(|d| d[..sub.pre_len].to_vec()).collect::<Vec<_>>())?;
        let ridge = Ridge::new(&sub);
        Ok(grid
            .iter()
            .map(|&l| {
                let f = fit_with_lambda(&sub, &w.weights, w.kkt_residual, &ridge, l);
                let post = f.post_gap();
                let pre = f.pre_gap();
                // without a post window the held-out pre fit is all there is
                let errs = if post.is_empty() { pre } else { post };
                errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64
            })
            .collect())
    });
    let mut total = vec![0.0; grid.len()];
    for errs in per_donor {
        for (t, e) in total.iter_mut().zip(errs?) {
            *t += e / j as f64;
        }
    }
    Ok(total)
}

/// SCM weights plus a ridge correction with penalty `lambda`, chosen by
/// cross-validation unless fixed.
pub fn ascm_fit(problem: &ScmProblem, lambda: &LambdaChoice, exec: Execution) -> Result<ScmFit, ScmError> {
    problem.validate()?;
    let pre = problem.pre_len;
    let pre_donors: Vec<Vec<f64>> = problem.donors.iter().map(|d| d[..pre].to_vec()).collect();
    let w = scm_weights(&problem.treated[..pre], &pre_donors)?;
    let ridge = Ridge::new(problem);
    let chosen = match lambda {
        LambdaChoice::Fixed(l) if *l >= 0.0 && l.is_finite() => *l,
        LambdaChoice::Fixed(l) => return Err(ScmError::BadGrid(format!("lambda {l}"))),
        LambdaChoice::CrossValidate(grid) => {
            let grid = grid.clone().unwrap_or_else(|| default_lambda_grid(problem));
            if grid.is_empty() || grid.iter().any(|l| !l.is_finite() || *l < 0.0) {
                return Err(ScmError::BadGrid(format!("{grid:?}")));
            }
            let errs = lambda_cv_errors(problem, &grid, exec)?;
            // ties go to the larger penalty
            let mut best = 0;
            for k in 1..grid.len() {
                if errs[k] < errs[best] || (errs[k] == errs[best] && grid[k] > grid[best]) {
                    best = k;
                }
            }
            grid[best]
        }
    };
    Ok(fit_with_lambda(problem, &w.weights, w.kkt_residual, &ridge, chosen))
}

/// Pseudo-effects from treating each donor in turn.
#[derive(Clone, Debug, PartialEq)]
pub struct Placebo {
    pub true_att: f64,
    pub pseudo: Vec<(String, f64)>,
    /// 1-based rank of the true effect by absolute size among all effects.
    pub rank: usize,
}

pub fn placebo_rank(true_att: f64, pseudo: &[f64]) -> usize {
    1 + pseudo.iter().filter(|p| p.abs() > true_att.abs()).count()
}

pub fn placebo_distribution(problem: &ScmProblem, lambda: &LambdaChoice, exec: Execution) -> Result<Placebo, ScmError> {
    problem.validate()?;
    if problem.donors.len() < 3 {
        return Err(ScmError::TooFewDonors(problem.donors.len()));
    }
    let truth = ascm_fit(problem, lambda, exec)?;
    let pseudo = par::map_indices(problem.donors.len(), exec, |k| {
        let sub = problem.without_donor(k);
        ascm_fit(&sub, lambda, Execution::Sequential).map(|f| (sub.treated_id, f.att))
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let vals: Vec<f64> = pseudo.iter().map(|p| p.1).collect();
    Ok(Placebo { true_att: truth.att, rank: placebo_rank(truth.att, &vals), pseudo })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn wave(k: usize, len: usize) -> Vec<f64> {
        (0..len).map(|t| 10.0 + (t as f64 * 0.3 + k as f64).sin() * (1.0 + k as f64 * 0.2) + 0.1 * k as f64 * t as f64).collect()
    }

    fn problem(treated: Vec<f64>, donors: Vec<Vec<f64>>, pre: usize) -> ScmProblem {
        ScmProblem {
            treated_id: "T".into(),
            treated,
            donor_ids: (0..donors.len()).map(|k| format!("D{k}")).collect(),
            donors,
            pre_len: pre,
        }
    }

    #[test]
    fn exact_match_donor_att_is_raw_difference() {
        let donors: Vec<Vec<f64>> = (0..5).map(|k| wave(k, 30)).collect();
        let mut treated = donors[2].clone();
        for v in &mut treated[20..] {
            *v += 3.0;
        }
        let f = ascm_fit(&problem(treated.clone(), donors.clone(), 20), &LambdaChoice::default(), Execution::Sequential).unwrap();
        let raw: f64 = (20..30).map(|t| treated[t] - donors[2][t]).sum::<f64>() / 10.0;
        assert_abs_diff_eq!(f.att, raw, epsilon = 1e-6);
        assert_abs_diff_eq!(f.att, 3.0, epsilon = 1e-6);
    }

    #[test]
    fn large_lambda_recovers_scm() {
        let donors: Vec<Vec<f64>> = (0..4).map(|k| wave(k, 25)).collect();
        let treated = wave(7, 25);
        let f = ascm_fit(&problem(treated.clone(), donors, 15), &LambdaChoice::Fixed(1e12), Execution::Sequential).unwrap();
        for t in 0..25 {
            assert_abs_diff_eq!(f.gap[t], treated[t] - f.synthetic_scm[t], epsilon = 1e-6);
        }
    }

    #[test]
    fn zero_lambda_interpolates_when_spanned() {
        // more donors than pre days, treated outside the hull
        let noise = |x: f64| ((x * 12.9898).sin() * 43758.5453).fract();
        let donors: Vec<Vec<f64>> = (0..8).map(|k| (0..12).map(|t| noise((k * 12 + t) as f64)).collect()).collect();
        let treated: Vec<f64> = (0..12).map(|t| 3.0 + noise(1000.0 + t as f64)).collect();
        let f = ascm_fit(&problem(treated, donors, 5), &LambdaChoice::Fixed(0.0), Execution::Sequential).unwrap();
        for g in f.pre_gap() {
            assert!(g.abs() < 1e-8, "{:?}", f.pre_gap());
        }
        assert_abs_diff_eq!(f.ridge_adjustment.iter().sum::<f64>(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn treated_post_data_does_not_reach_pre_gap() {
        let donors: Vec<Vec<f64>> = (0..5).map(|k| wave(k, 30)).collect();
        let a = wave(9, 30);
        let mut b = a.clone();
        for v in &mut b[20..] {
            *v *= 5.0;
        }
        let la = LambdaChoice::Fixed(1.0);
        let fa = ascm_fit(&problem(a, donors.clone(), 20), &la, Execution::Sequential).unwrap();
        let fb = ascm_fit(&problem(b, donors, 20), &la, Execution::Sequential).unwrap();
        assert_eq!(fa.pre_gap(), fb.pre_gap());
    }

    #[test]
    fn placebo_cardinality_and_rank() {
        let donors: Vec<Vec<f64>> = (0..3).map(|k| wave(k, 20)).collect();
        let p = placebo_distribution(&problem(wave(5, 20), donors.clone(), 12), &LambdaChoice::Fixed(1.0), Execution::Parallel).unwrap();
        assert_eq!(p.pseudo.len(), 3);
        assert!((1..=4).contains(&p.rank));
        assert_eq!(placebo_rank(5.0, &[1.0, -6.0, 2.0]), 2);
        assert!(matches!(
            placebo_distribution(&problem(wave(5, 20), donors[..2].to_vec(), 12), &LambdaChoice::Fixed(1.0), Execution::Parallel),
            Err(ScmError::TooFewDonors(2))
        ));
    }

    #[test]
    fn ridge_matches_definition() {
        // wide and rank deficient: 5 donors, 10 pre days
        let noise = |x: f64| ((x * 78.233).sin() * 43758.5453).fract();
        let donors: Vec<Vec<f64>> = (0..5).map(|k| (0..10).map(|t| noise((k * 10 + t) as f64)).collect()).collect();
        let p = problem(vec![0.0; 10], donors, 10);
        let ridge = Ridge::new(&p);
        let r: Vec<f64> = (0..10).map(|t| noise(500.0 + t as f64)).collect();
        let lambda = 0.3;
        let (d, a) = ridge.solve(&r, lambda);
        // (X^T X + lambda) d = r on the row space: X (X^T X + lambda) d = X r
        let xd = &ridge.xc * DVector::from_column_slice(&d);
        let lhs = &ridge.xc * (ridge.xc.transpose() * &xd + DVector::from_column_slice(&d) * lambda);
        let rhs = &ridge.xc * DVector::from_column_slice(&r);
        assert!((lhs - rhs).amax() < 1e-10);
        assert!((xd - DVector::from_column_slice(&a)).amax() < 1e-10);
    }

    #[test]
    fn bad_grid() {
        let donors: Vec<Vec<f64>> = (0..3).map(|k| wave(k, 20)).collect();
        let p = problem(wave(5, 20), donors, 12);
        assert!(matches!(ascm_fit(&p, &LambdaChoice::CrossValidate(Some(vec![])), Execution::Sequential), Err(ScmError::BadGrid(_))));
        assert!(matches!(ascm_fit(&p, &LambdaChoice::Fixed(-1.0), Execution::Sequential), Err(ScmError::BadGrid(_))));
    }

    proptest! {
        #[test]
        fn ascm_pre_fit_never_worse(seed in proptest::collection::vec(-3.0f64..3.0, 6 * 16), lambda in 0.0f64..100.0) {
            let rows: Vec<Vec<f64>> = seed.chunks(16).map(<[f64]>::to_vec).collect();
            let p = problem(rows[0].clone(), rows[1..].to_vec(), 10);
            let f = ascm_fit(&p, &LambdaChoice::Fixed(lambda), Execution::Sequential).unwrap();
            let scm_sse: f64 = (0..10).map(|t| (p.treated[t] - f.synthetic_scm[t]).powi(2)).sum();
            let ascm_sse: f64 = f.pre_gap().iter().map(|g| g * g).sum();
            prop_assert!(ascm_sse <= scm_sse * (1.0 + 1e-12) + 1e-12, "{} > {} lambda {}", ascm_sse, scm_sse, f.lambda);
            let cv = ascm_fit(&p, &LambdaChoice::default(), Execution::Parallel).unwrap();
            let seq = ascm_fit(&p, &LambdaChoice::default(), Execution::Sequential).unwrap();
            prop_assert_eq!(cv, seq);
        }
    }
}
