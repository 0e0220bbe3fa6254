//! Time-series clustering under dynamic time warping.
//!
//! Pipeline: [`fill_missing`] → [`distance_matrix`] → [`hcluster`] →
//! [`cut`] → [`validity_indices`].

mod cvi;
mod dtw;
mod hclust;

pub use cvi::{adjusted_rand_index, validity_indices, Cvi, CviError};
pub use dtw::{distance_matrix, distance_matrix_with, dtw_distance, fill_missing, DistMatrix, DtwConfig, DtwError, StepPattern};
pub use hclust::{cut, hcluster, ClusterError, ClusterSolution, Dendrogram, Merge};

use std::io;
use std::path::Path;

use crate::ingest::{field, write_rows};

fn create(path: &Path) -> io::Result<io::BufWriter<std::fs::File>> {
    std::fs::File::create(path).map(io::BufWriter::new)
}

/// `merge,a,b,height`, one row per merge. Following the R convention, a
/// negative entry `-i` is leaf `i` (1-based) and a positive entry `s` is the
/// cluster formed by merge `s`.
pub fn write_dendrogram_csv(d: &Dendrogram, path: &Path) -> io::Result<()> {
    let id = |c: usize| if c < d.n { -(c as i64 + 1) } else { (c - d.n + 1) as i64 };
    write_rows(
        &mut create(path)?,
        "merge,a,b,height",
        d.merges.iter().enumerate().map(|(s, m)| format!("{},{},{},{}", s + 1, id(m.a), id(m.b), m.height)),
    )
}

/// `unit,label`, in unit order.
pub fn write_clusters_csv(units: &[String], solution: &ClusterSolution, path: &Path) -> io::Result<()> {
    write_rows(
        &mut create(path)?,
        "unit,label",
        units.iter().zip(&solution.labels).map(|(u, l)| format!("{},{l}", field(u))),
    )
}

pub fn write_cvi_csv(rows: &[(usize, Cvi)], path: &Path) -> io::Result<()> {
    write_rows(
        &mut create(path)?,
        "k,Sil,SF,CH,DB,DBstar,Dunn,COP",
        rows.iter().map(|(k, c)| format!("{k},{},{},{},{},{},{},{}", c.sil, c.sf, c.ch, c.db, c.db_star, c.dunn, c.cop)),
    )
}
