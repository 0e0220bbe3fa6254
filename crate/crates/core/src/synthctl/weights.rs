//! Simplex-constrained least squares by a primal active-set method.

use nalgebra::{DMatrix, DVector};

use super::ScmError;

pub const KKT_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct SimplexWeights {
    pub weights: Vec<f64>,
    /// Scaled KKT residual of the returned point.
    pub kkt_residual: f64,
    pub iterations: usize,
}

struct Quad {
    g: DMatrix<f64>,
    c: DVector<f64>,
    reg: f64,
    scale: f64,
}

impl Quad {
    fn new(target: &[f64], donors: &[Vec<f64>]) -> Self {
        let j = donors.len();
        let g = DMatrix::from_fn(j, j, |a, b| donors[a].iter().zip(&donors[b]).map(|(x, y)| x * y).sum());
        let c = DVector::from_fn(j, |a, _| donors[a].iter().zip(target).map(|(x, y)| x * y).sum());
        let mean_diag = (0..j).map(|a| g[(a, a)]).sum::<f64>() / j as f64;
        let gmax = g.iter().fold(0.0f64, |m, v: &f64| m.max(v.abs()));
        let cmax = c.iter().fold(0.0f64, |m, v: &f64| m.max(v.abs()));
        Self { g, c, reg: 1e-12 * mean_diag.max(f64::MIN_POSITIVE), scale: 1.0 + 2.0 * (gmax + cmax) }
    }

    /// Gradient of `|x1 - X0^T w|^2`, optionally with the tiny ridge term.
    fn grad(&self, w: &DVector<f64>, with_reg: bool) -> DVector<f64> {
        let mut gr = (&self.g * w - &self.c) * 2.0;
        if with_reg {
            gr += w * (2.0 * self.reg);
        }
        gr
    }

    fn kkt_residual(&self, w: &DVector<f64>) -> f64 {
        let gr = self.grad(w, false);
        let free: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
        let nu = -free.iter().map(|&i| gr[i]).sum::<f64>() / free.len().max(1) as f64;
        let stat = free.iter().map(|&i| (gr[i] + nu).abs()).fold(0.0, f64::max);
        let dual = (0..w.len()).filter(|&i| w[i] <= 0.0).map(|i| (-(gr[i] + nu)).max(0.0)).fold(0.0, f64::max);
        let primal = (w.sum() - 1.0).abs() + w.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max);
        (stat + dual) / self.scale + primal
    }
}

/// Weights on the probability simplex minimizing the squared distance
/// between `target` and the weighted donor combination. Starts from uniform
/// weights, so results are deterministic.
pub fn scm_weights(target: &[f64], donors: &[Vec<f64>]) -> Result<SimplexWeights, ScmError> {
    let j = donors.len();
    if j == 0 {
        return Err(ScmError::NoDonors);
    }
    if let Some(d) = donors.iter().position(|d| d.len() != target.len()) {
        return Err(ScmError::Shape(format!("donor {d} has {} values, target has {}", donors[d].len(), target.len())));
    }
    if target.iter().chain(donors.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(ScmError::NonFinite);
    }
    if j == 1 {
        return Ok(SimplexWeights { weights: vec![1.0], kkt_residual: 0.0, iterations: 0 });
    }
    let q = Quad::new(target, donors);
    let h = (&q.g + DMatrix::identity(j, j) * q.reg) * 2.0;
    let mut w = DVector::from_element(j, 1.0 / j as f64);
    let mut active = vec![false; j];
    let max_iter = 50 * j + 100;
    let step_tol = 1e-11;

    for iter in 1..=max_iter {
        let residual = q.kkt_residual(&w);
        if residual <= KKT_TOL * 1e-4 {
            return Ok(SimplexWeights { weights: w.iter().copied().collect(), kkt_residual: residual, iterations: iter });
        }
        let free: Vec<usize> = (0..j).filter(|&i| !active[i]).collect();
        let gr = q.grad(&w, true);
        let hf = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
        let gf = DVector::from_fn(free.len(), |a, _| gr[free[a]]);
        let ones = DVector::from_element(free.len(), 1.0);
        // Newton step on the free face: p = -H^{-1}(g + mu 1) with 1^T p = 0
        let chol = hf.clone().cholesky().ok_or(ScmError::Convergence { residual: q.kkt_residual(&w), iterations: iter })?;
        let hg = chol.solve(&gf);
        let h1 = chol.solve(&ones);
        let mu = -hg.sum() / h1.sum();
        let p = -(hg + h1 * mu);
        let pmax = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));

        if pmax <= step_tol {
            let nu = -free.iter().map(|&i| gr[i]).sum::<f64>() / free.len() as f64;
            let worst = (0..j)
                .filter(|&i| active[i])
                .map(|i| (i, (gr[i] + nu) / q.scale))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            match worst {
                Some((i, lambda)) if lambda < -KKT_TOL * 1e-2 => active[i] = false,
                _ => {
                    let kkt_residual = q.kkt_residual(&w);
                    if kkt_residual > KKT_TOL {
                        return Err(ScmError::Convergence { residual: kkt_residual, iterations: iter });
                    }
                    return Ok(SimplexWeights { weights: w.iter().copied().collect(), kkt_residual, iterations: iter });
                }
            }
            continue;
        }

        let mut alpha = 1.0;
        let mut blocking = None;
        for (a, &i) in free.iter().enumerate() {
            if p[a] < 0.0 {
                let r = -w[i] / p[a];
                if r < alpha {
                    alpha = r;
                    blocking = Some(i);
                }
            }
        }
        for (a, &i) in free.iter().enumerate() {
            w[i] += alpha * p[a];
        }
        if let Some(i) = blocking {
            w[i] = 0.0;
            active[i] = true;
        }
        // keep the iterate on the simplex despite rounding
        for v in w.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let s = w.sum();
        w /= s;
    }
    Err(ScmError::Convergence { residual: q.kkt_residual(&w), iterations: max_iter })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn spec_examples() {
        let t = vec![1.0, 2.0, 3.0];
        let w = scm_weights(&t, &[t.clone()]).unwrap();
        assert_eq!(w.weights, vec![1.0]);

        let w = scm_weights(&[1.0, 1.0], &[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        assert_abs_diff_eq!(w.weights[0], 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(w.weights[1], 0.5, epsilon = 1e-10);

        // 1-D, target beyond the hull: all weight on the nearest donor
        let w = scm_weights(&[5.0], &[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert_abs_diff_eq!(w.weights[2], 1.0, epsilon = 1e-12);
        assert!(w.kkt_residual <= KKT_TOL);

        assert_eq!(scm_weights(&[1.0], &[]), Err(ScmError::NoDonors));
    }

    #[test]
    fn exact_match_among_many() {
        let noise = |x: f64| ((x * 12.9898).sin() * 43758.5453).fract();
        let donors: Vec<Vec<f64>> = (0..6).map(|d| (0..10).map(|t| noise((d * 10 + t) as f64) * 5.0).collect()).collect();
        let w = scm_weights(&donors[3], &donors).unwrap();
        assert_abs_diff_eq!(w.weights[3], 1.0, epsilon = 1e-8);
    }

    fn objective(t: &[f64], d: &[Vec<f64>], w: &[f64]) -> f64 {
        t.iter().enumerate().map(|(k, x)| (x - d.iter().zip(w).map(|(r, wi)| wi * r[k]).sum::<f64>()).powi(2)).sum()
    }

    proptest! {
        #[test]
        fn optimal_and_feasible(t in proptest::collection::vec(-5.0f64..5.0, 6), d in proptest::collection::vec(-5.0f64..5.0, 24)) {
            let donors: Vec<Vec<f64>> = d.chunks(6).map(<[f64]>::to_vec).collect();
            let w = scm_weights(&t, &donors).unwrap();
            prop_assert!(w.weights.iter().all(|v| *v >= 0.0));
            prop_assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.kkt_residual <= KKT_TOL);
            // no vertex or edge midpoint does better
            let f = objective(&t, &donors, &w.weights);
            for a in 0..4 {
                for b in 0..4 {
                    let mut v = vec![0.0; 4];
                    v[a] += 0.5;
                    v[b] += 0.5;
                    prop_assert!(f <= objective(&t, &donors, &v) + 1e-9);
                }
            }
        }

        #[test]
        fn donor_order_invariant(t in proptest::collection::vec(-5.0f64..5.0, 8), d in proptest::collection::vec(-5.0f64..5.0, 40), rot in 1usize..5) {
            let donors: Vec<Vec<f64>> = d.chunks(8).map(<[f64]>::to_vec).collect();
            let mut perm = donors.clone();
            perm.rotate_left(rot);
            let a = scm_weights(&t, &donors).unwrap().weights;
            let mut b = scm_weights(&t, &perm).unwrap().weights;
            b.rotate_right(rot);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-10, "{a:?} vs {b:?}");
            }
        }
    }
}
