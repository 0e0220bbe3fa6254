//! Cluster validity indices evaluated purely through a distance matrix.
//!
//! Centroid-based indices use cluster medoids as centers and the medoid of
//! the whole data set as the global center, since DTW space has no mean.
//!
//! Ranges: `sil` in [-1, 1]; `sf` in [0, 1); `ch`, `db`, `db_star`, `dunn`
//! and `cop` in [0, +inf]. Degenerate ratios (zero denominators) give +inf
//! when the numerator is positive and 0 when it is also zero; no index is
//! ever NaN.

use serde::Serialize;
use thiserror::Error;

use super::dtw::DistMatrix;
use super::hclust::ClusterSolution;

#[derive(Debug, Error, PartialEq)]
pub enum CviError {
    #[error("validity indices need k >= 2, got {0}")]
    SingleCluster(usize),
    #[error("cluster {0} is empty")]
    EmptyCluster(usize),
    #[error("{labels} labels for {points} points")]
    SizeMismatch { labels: usize, points: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Cvi {
    /// Silhouette (maximize).
    pub sil: f64,
    /// Score Function (maximize).
    pub sf: f64,
    /// Calinski-Harabasz (maximize).
    pub ch: f64,
    /// Davies-Bouldin (minimize).
    pub db: f64,
    /// Modified Davies-Bouldin, DB* (minimize).
    pub db_star: f64,
    /// Dunn (maximize).
    pub dunn: f64,
    /// COP (minimize).
    pub cop: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

fn medoid(d: &DistMatrix, members: &[usize]) -> usize {
    members
        .iter()
        .map(|&i| (members.iter().map(|&j| d.get(i, j)).sum::<f64>(), i))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, i)| i)
        .expect("non-empty member list")
}

pub fn validity_indices(d: &DistMatrix, solution: &ClusterSolution) -> Result<Cvi, CviError> {
    let n = d.len();
    let k = solution.k;
    if k < 2 {
        return Err(CviError::SingleCluster(k));
    }
    if solution.labels.len() != n {
        return Err(CviError::SizeMismatch { labels: solution.labels.len(), points: n });
    }
    let clusters: Vec<Vec<usize>> = (1..=k).map(|l| solution.members(l)).collect();
    if let Some(l) = clusters.iter().position(Vec::is_empty) {
        return Err(CviError::EmptyCluster(l + 1));
    }
    let centers: Vec<usize> = clusters.iter().map(|m| medoid(d, m)).collect();
    let all: Vec<usize> = (0..n).collect();
    let global = medoid(d, &all);
    let sizes: Vec<f64> = clusters.iter().map(|m| m.len() as f64).collect();
    // mean distance of members to their center
    let scatter: Vec<f64> = clusters
        .iter()
        .zip(&centers)
        .map(|(m, &c)| m.iter().map(|&i| d.get(i, c)).sum::<f64>() / m.len() as f64)
        .collect();

    let sil = silhouette(d, &solution.labels, &clusters);

    let bcd = clusters.iter().zip(&centers).map(|(m, &c)| m.len() as f64 * d.get(c, global)).sum::<f64>()
        / (n as f64 * k as f64);
    let wcd: f64 = scatter.iter().sum();
    let sf = 1.0 - 1.0 / (bcd - wcd).exp().exp();

    let between: f64 = centers.iter().zip(&sizes).map(|(&c, nk)| nk * d.get(c, global).powi(2)).sum();
    let within: f64 =
        clusters.iter().zip(&centers).map(|(m, &c)| m.iter().map(|&i| d.get(i, c).powi(2)).sum::<f64>()).sum();
    let ch = if n > k { ratio(between * (n - k) as f64, within * (k - 1) as f64) } else { 0.0 };

    let mut db = 0.0;
    let mut db_star = 0.0;
    for a in 0..k {
        let mut worst = 0.0f64;
        let mut max_spread = 0.0f64;
        let mut min_sep = f64::INFINITY;
        for b in (0..k).filter(|b| *b != a) {
            let sep = d.get(centers[a], centers[b]);
            worst = worst.max(ratio(scatter[a] + scatter[b], sep));
            max_spread = max_spread.max(scatter[a] + scatter[b]);
            min_sep = min_sep.min(sep);
        }
        db += worst;
        db_star += ratio(max_spread, min_sep);
    }
    db /= k as f64;
    db_star /= k as f64;

    let mut min_between = f64::INFINITY;
    let mut max_diameter = 0.0f64;
    for (a, ma) in clusters.iter().enumerate() {
        for &i in ma {
            for &j in ma {
                max_diameter = max_diameter.max(d.get(i, j));
            }
        }
        for mb in &clusters[a + 1..] {
            for &i in ma {
                for &j in mb {
                    min_between = min_between.min(d.get(i, j));
                }
            }
        }
    }
    let dunn = ratio(min_between, max_diameter);

    let mut cop = 0.0;
    for (a, m) in clusters.iter().enumerate() {
        let farthest_outsider = (0..n)
            .filter(|i| solution.labels[*i] != a + 1)
            .map(|i| m.iter().map(|&j| d.get(i, j)).fold(0.0, f64::max))
            .fold(f64::INFINITY, f64::min);
        cop += sizes[a] * ratio(scatter[a], farthest_outsider);
    }
    cop /= n as f64;

    Ok(Cvi { sil, sf, ch, db, db_star, dunn, cop })
}

/// Mean silhouette width; members of singleton clusters score 0.
fn silhouette(d: &DistMatrix, labels: &[usize], clusters: &[Vec<usize>]) -> f64 {
    let n = labels.len();
    let total: f64 = (0..n)
        .map(|i| {
            let own = &clusters[labels[i] - 1];
            if own.len() == 1 {
                return 0.0;
            }
            let a = own.iter().map(|&j| d.get(i, j)).sum::<f64>() / (own.len() - 1) as f64;
            let b = clusters
                .iter()
                .enumerate()
                .filter(|(l, _)| l + 1 != labels[i])
                .map(|(_, m)| m.iter().map(|&j| d.get(i, j)).sum::<f64>() / m.len() as f64)
                .fold(f64::INFINITY, f64::min);
            let den = a.max(b);
            if den > 0.0 {
                (b - a) / den
            } else {
                0.0
            }
        })
        .sum();
    total / n as f64
}

/// Adjusted Rand index between two labelings of the same units.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same units");
    let n = a.len();
    let mut table = std::collections::HashMap::<(usize, usize), u64>::new();
    let mut rows = std::collections::HashMap::<usize, u64>::new();
    let mut cols = std::collections::HashMap::<usize, u64>::new();
    for (x, y) in a.iter().zip(b) {
        *table.entry((*x, *y)).or_default() += 1;
        *rows.entry(*x).or_default() += 1;
        *cols.entry(*y).or_default() += 1;
    }
    let c2 = |m: u64| (m * m.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.values().map(|&m| c2(m)).sum();
    let sum_a: f64 = rows.values().map(|&m| c2(m)).sum();
    let sum_b: f64 = cols.values().map(|&m| c2(m)).sum();
    let total = c2(n as u64);
    let expected = if total > 0.0 { sum_a * sum_b / total } else { 0.0 };
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tsclust::{cut, hcluster};
    use proptest::prelude::*;

    fn sol(labels: Vec<usize>, d: &DistMatrix) -> ClusterSolution {
        let k = *labels.iter().max().unwrap();
        let medoids = (1..=k)
            .map(|l| {
                let m: Vec<usize> = labels.iter().enumerate().filter(|(_, x)| **x == l).map(|(i, _)| i).collect();
                medoid(d, &m)
            })
            .collect();
        ClusterSolution { k, labels, medoids }
    }

    #[test]
    fn tight_pairs_far_apart() {
        let d = DistMatrix::from_points(&[0.0, 1.0, 100.0, 101.0]);
        let c = validity_indices(&d, &sol(vec![1, 1, 2, 2], &d)).unwrap();
        // outer points: a = 1, b = 100.5; inner points: a = 1, b = 99.5
        let expected = ((100.5 - 1.0) / 100.5 + (99.5 - 1.0) / 99.5) / 2.0;
        assert!((c.sil - expected).abs() < 1e-12);
        assert!(c.sil > 0.9);
        assert!(c.dunn > 90.0);
        assert!(c.db < 0.02);
    }

    #[test]
    fn singletons_have_zero_silhouette() {
        let d = DistMatrix::from_points(&[0.0, 3.0, 7.0]);
        let c = validity_indices(&d, &sol(vec![1, 2, 3], &d)).unwrap();
        assert_eq!(c.sil, 0.0);
        assert_eq!(c.dunn, f64::INFINITY);
        assert_eq!(c.cop, 0.0);
    }

    #[test]
    fn errors() {
        let d = DistMatrix::from_points(&[0.0, 3.0, 7.0]);
        let one = ClusterSolution { k: 1, labels: vec![1, 1, 1], medoids: vec![1] };
        assert_eq!(validity_indices(&d, &one), Err(CviError::SingleCluster(1)));
        let hole = ClusterSolution { k: 3, labels: vec![1, 1, 3], medoids: vec![0, 0, 2] };
        assert_eq!(validity_indices(&d, &hole), Err(CviError::EmptyCluster(2)));
    }

    #[test]
    fn misplacing_a_point_lowers_silhouette() {
        let pts = [0.0, 1.0, 2.0, 10.0, 11.0, 12.0];
        let d = DistMatrix::from_points(&pts);
        let good = validity_indices(&d, &sol(vec![1, 1, 1, 2, 2, 2], &d)).unwrap();
        let bad = validity_indices(&d, &sol(vec![1, 1, 2, 2, 2, 2], &d)).unwrap();
        assert!(bad.sil < good.sil);
        assert!(bad.ch < good.ch);
        assert!(bad.db > good.db);
    }

    #[test]
    fn ari_examples() {
        assert_eq!(adjusted_rand_index(&[1, 1, 2, 2], &[2, 2, 1, 1]), 1.0);
        // classic example: 6 points, two labelings
        let ari = adjusted_rand_index(&[1, 1, 1, 2, 2, 2], &[1, 1, 2, 2, 3, 3]);
        // contingency: [[2,1,0],[0,1,2]] -> index 2, sums a=6, b=3, total=15
        let expected = (2.0 - 6.0 * 3.0 / 15.0) / (0.5 * 9.0 - 18.0 / 15.0);
        assert!((ari - expected).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn ranges_on_random_partitions(points in proptest::collection::vec(-100.0f64..100.0, 4..25), k in 2usize..6, seed in any::<u64>()) {
            let n = points.len();
            let k = k.min(n);
            let d = DistMatrix::from_points(&points);
            let mut labels: Vec<usize> = (0..n).map(|i| i % k + 1).collect();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                labels.swap(i, (s >> 33) as usize % (i + 1));
            }
            let c = validity_indices(&d, &sol(labels, &d)).unwrap();
            prop_assert!((-1.0..=1.0).contains(&c.sil));
            prop_assert!((0.0..1.0).contains(&c.sf) || c.sf == 1.0);
            for v in [c.ch, c.db, c.db_star, c.dunn, c.cop] {
                prop_assert!(v >= 0.0 && !v.is_nan());
            }
            prop_assert!(c.db_star >= c.db - 1e-12);
        }

        #[test]
        fn hierarchical_cut_is_valid_input(points in proptest::collection::vec(-100.0f64..100.0, 3..20)) {
            let d = DistMatrix::from_points(&points);
            let den = hcluster(&d).unwrap();
            for k in 2..points.len().min(6) {
                let s = cut(&den, k, &d).unwrap();
                prop_assert!(validity_indices(&d, &s).is_ok());
            }
        }
    }
}
