use thiserror::Error;

use super::dtw::DistMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("invalid distance matrix: {0}")]
    InvalidMatrix(String),
    #[error("need at least 2 units, got {0}")]
    TooFew(usize),
    #[error("k = {k} outside 2..={n}")]
    BadK { k: usize, n: usize },
    #[error("dendrogram has {dendrogram} leaves but distance matrix has {matrix}")]
    SizeMismatch { dendrogram: usize, matrix: usize },
}

/// One agglomeration step. Leaves are clusters `0..n`; the cluster created
/// by merge `s` has id `n + s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dendrogram {
    pub n: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    /// Leaves in left-to-right drawing order.
    pub fn leaf_order(&self) -> Vec<usize> {
        if self.merges.is_empty() {
            return (0..self.n).collect();
        }
        let mut out = Vec::with_capacity(self.n);
        let mut stack = vec![self.n + self.merges.len() - 1];
        while let Some(c) = stack.pop() {
            if c < self.n {
                out.push(c);
            } else {
                let m = self.merges[c - self.n];
                stack.push(m.b);
                stack.push(m.a);
            }
        }
        out
    }
}

/// Complete-linkage agglomerative clustering.
///
/// The inter-cluster distance is the maximum over cross pairs. Among equally
/// close pairs the one with the lexicographically smallest
/// (smaller id, larger id) merges first.
pub fn hcluster(d: &DistMatrix) -> Result<Dendrogram, ClusterError> {
    let n = d.len();
    if n < 2 {
        return Err(ClusterError::TooFew(n));
    }
    d.check().map_err(ClusterError::InvalidMatrix)?;

    // active[slot] = (cluster id, size); dist is indexed by slot.
    let mut active: Vec<Option<(usize, usize)>> = (0..n).map(|i| Some((i, 1))).collect();
    let mut dist: Vec<Vec<f64>> = (0..n).map(|i| d.row(i).to_vec()).collect();
    let mut merges = Vec::with_capacity(n - 1);

    for step in 0..n - 1 {
        let mut best: Option<(f64, usize, usize, (usize, usize))> = None;
        for p in 0..n {
            let Some((id_p, _)) = active[p] else { continue };
            for q in p + 1..n {
                let Some((id_q, _)) = active[q] else { continue };
                let key = (id_p.min(id_q), id_p.max(id_q));
                let h = dist[p][q];
                let better = match best {
                    None => true,
                    Some((bh, _, _, bkey)) => h < bh || (h == bh && key < bkey),
                };
                if better {
                    best = Some((h, p, q, key));
                }
            }
        }
        let (height, p, q, (a, b)) = best.expect("at least two active clusters");
        let size = active[p].unwrap().1 + active[q].unwrap().1;
        merges.push(Merge { a, b, height, size });
        for r in 0..n {
            if r != p && r != q && active[r].is_some() {
                let v = dist[p][r].max(dist[q][r]);
                dist[p][r] = v;
                dist[r][p] = v;
            }
        }
        active[p] = Some((n + step, size));
        active[q] = None;
    }
    Ok(Dendrogram { n, merges })
}

/// Flat partition with one representative (medoid) per cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterSolution {
    pub k: usize,
    /// Label in `1..=k` for each unit.
    pub labels: Vec<usize>,
    /// Unit index of each cluster's medoid; entry `l - 1` is for label `l`.
    pub medoids: Vec<usize>,
}

impl ClusterSolution {
    pub fn members(&self, label: usize) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, l)| **l == label).map(|(i, _)| i).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        (1..=self.k).map(|l| self.labels.iter().filter(|x| **x == l).count()).collect()
    }

    /// Relabels clusters in ascending order of the mean of `value` over members.
    pub fn ordered_by(&self, value: &[f64]) -> ClusterSolution {
        let mut means: Vec<(f64, usize)> = (1..=self.k)
            .map(|l| {
                let m = self.members(l);
                (m.iter().map(|&i| value[i]).sum::<f64>() / m.len() as f64, l)
            })
            .collect();
        means.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut new_of_old = vec![0; self.k + 1];
        for (new, (_, old)) in means.iter().enumerate() {
            new_of_old[*old] = new + 1;
        }
        let mut medoids = vec![0; self.k];
        for (old, m) in self.medoids.iter().enumerate() {
            medoids[new_of_old[old + 1] - 1] = *m;
        }
        ClusterSolution { k: self.k, labels: self.labels.iter().map(|l| new_of_old[*l]).collect(), medoids }
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Cuts the dendrogram into `k` clusters by undoing its last `k - 1` merges.
///
/// Labels follow the smallest member index of each cluster. The medoid is
/// the member with the smallest summed distance to the rest of its
/// cluster, ties going to the lower index.
pub fn cut(dendrogram: &Dendrogram, k: usize, d: &DistMatrix) -> Result<ClusterSolution, ClusterError> {
    let n = dendrogram.n;
    if k < 2 || k > n {
        return Err(ClusterError::BadK { k, n });
    }
    if d.len() != n {
        return Err(ClusterError::SizeMismatch { dendrogram: n, matrix: d.len() });
    }
    let mut parent: Vec<usize> = (0..2 * n).collect();
    for (s, m) in dendrogram.merges.iter().take(n - k).enumerate() {
        let new = n + s;
        let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
        parent[ra] = new;
        parent[rb] = new;
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    let mut label_of_root = std::collections::HashMap::new();
    let labels: Vec<usize> = roots
        .iter()
        .map(|r| {
            let next = label_of_root.len() + 1;
            *label_of_root.entry(*r).or_insert(next)
        })
        .collect();
    let mut sol = ClusterSolution { k, labels, medoids: Vec::with_capacity(k) };
    for l in 1..=k {
        let members = sol.members(l);
        let medoid = members
            .iter()
            .map(|&i| (members.iter().map(|&j| d.get(i, j)).sum::<f64>(), i))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .expect("cluster non-empty")
            .1;
        sol.medoids.push(medoid);
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn three_points_hand_run() {
        let d = DistMatrix::from_points(&[0.0, 1.0, 10.0]);
        let den = hcluster(&d).unwrap();
        assert_eq!(den.merges[0], Merge { a: 0, b: 1, height: 1.0, size: 2 });
        // complete linkage: max(|0-10|, |1-10|) = 10
        assert_eq!(den.merges[1], Merge { a: 2, b: 3, height: 10.0, size: 3 });
        let two = cut(&den, 2, &d).unwrap();
        assert_eq!(two.labels, vec![1, 1, 2]);
        assert_eq!(two.medoids, vec![0, 2]);
        assert_eq!(den.leaf_order(), vec![2, 0, 1]);
    }

    #[test]
    fn two_units_and_singletons() {
        let d = DistMatrix::from_points(&[3.0, 5.5]);
        let den = hcluster(&d).unwrap();
        assert_eq!(den.merges.len(), 1);
        assert_eq!(den.merges[0].height, 2.5);
        let d4 = DistMatrix::from_points(&[0.0, 4.0, 9.0, 20.0]);
        let s = cut(&hcluster(&d4).unwrap(), 4, &d4).unwrap();
        assert_eq!(s.labels, vec![1, 2, 3, 4]);
        assert_eq!(s.medoids, vec![0, 1, 2, 3]);
    }

    #[test]
    fn equal_distances_follow_id_order() {
        let rows = vec![vec![1.0; 4]; 4]
            .into_iter()
            .enumerate()
            .map(|(i, mut r)| {
                r[i] = 0.0;
                r
            })
            .collect::<Vec<_>>();
        let d = DistMatrix::from_rows(&rows);
        let den = hcluster(&d).unwrap();
        let pairs: Vec<(usize, usize)> = den.merges.iter().map(|m| (m.a, m.b)).collect();
        assert_eq!(pairs, vec![(0, 1), (2, 3), (4, 5)]);
    }

    #[test]
    fn rejects_bad_matrices() {
        let asym = DistMatrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0]]);
        assert!(matches!(hcluster(&asym), Err(ClusterError::InvalidMatrix(_))));
        let neg = DistMatrix::from_rows(&[vec![0.0, -1.0], vec![-1.0, 0.0]]);
        assert!(matches!(hcluster(&neg), Err(ClusterError::InvalidMatrix(_))));
        let d = DistMatrix::from_points(&[0.0, 1.0, 2.0]);
        let den = hcluster(&d).unwrap();
        assert_eq!(cut(&den, 1, &d), Err(ClusterError::BadK { k: 1, n: 3 }));
        assert_eq!(cut(&den, 4, &d), Err(ClusterError::BadK { k: 4, n: 3 }));
    }

    #[test]
    fn ordering_by_value() {
        let d = DistMatrix::from_points(&[50.0, 10.0, 52.0, 11.0]);
        let s = cut(&hcluster(&d).unwrap(), 2, &d).unwrap();
        assert_eq!(s.labels, vec![1, 2, 1, 2]);
        let o = s.ordered_by(&[50.0, 10.0, 52.0, 11.0]);
        assert_eq!(o.labels, vec![2, 1, 2, 1]);
        assert_eq!(o.medoids[0], s.medoids[1]);
    }

    // Partition as a set of sets so label numbering does not matter.
    fn partition(labels: &[usize], perm: &[usize]) -> std::collections::BTreeSet<Vec<usize>> {
        let k = *labels.iter().max().unwrap();
        (1..=k)
            .map(|l| {
                let mut v: Vec<usize> =
                    labels.iter().enumerate().filter(|(_, x)| **x == l).map(|(i, _)| perm[i]).collect();
                v.sort();
                v
            })
            .collect()
    }

    proptest! {
        #[test]
        fn heights_monotone_and_order_invariant(points in proptest::collection::vec(0.0f64..1000.0, 3..15), k in 2usize..4, seed in any::<u64>()) {
            let d = DistMatrix::from_points(&points);
            let den = hcluster(&d).unwrap();
            prop_assert!(den.merges.windows(2).all(|w| w[0].height <= w[1].height));
            prop_assert_eq!(den.merges.last().unwrap().size, points.len());
            let mut sorted = den.leaf_order();
            sorted.sort();
            prop_assert_eq!(sorted, (0..points.len()).collect::<Vec<_>>());

            // permute the input and compare partitions in original indices
            let n = points.len();
            let mut perm: Vec<usize> = (0..n).collect();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let permuted: Vec<f64> = perm.iter().map(|&i| points[i]).collect();
            let dp = DistMatrix::from_points(&permuted);
            let k = k.min(n);
            let a = cut(&den, k, &d).unwrap();
            let b = cut(&hcluster(&dp).unwrap(), k, &dp).unwrap();
            let distinct = {
                let mut all: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| d.get(i, j)).collect();
                all.sort_by(f64::total_cmp);
                all.windows(2).all(|w| w[0] != w[1])
            };
            if distinct {
                let identity: Vec<usize> = (0..n).collect();
                prop_assert_eq!(partition(&a.labels, &identity), partition(&b.labels, &perm));
            }
        }
    }
}
