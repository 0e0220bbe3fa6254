//! Cross-sectional regression and correlation analysis.

mod corr;
mod design;
mod ols;
mod report;

use thiserror::Error;

pub use corr::{
    corr_evolution_csv, corr_matrix_csv, cross_sectional_corr, mobility_corr_matrix, pearson, r_squared_snapshot,
    CorrEvolution, CorrMatrix,
};
pub use design::{build_design, DesignMatrix, DroppedRow, Response, DESIGN_COLUMNS};
pub use ols::{ols_fit, Coefficient, FitReport, OlsError};
pub use report::{format_fit_report, signif_stars, write_fit_csv};

#[derive(Debug, Error, PartialEq)]
pub enum InferenceError {
    #[error("empty date window")]
    EmptyWindow,
    #[error("empty risk set")]
    EmptyRiskSet,
    #[error("day {0} outside the date index")]
    DayOutOfRange(usize),
    #[error("fewer than 3 usable communes ({0})")]
    TooFewUnits(usize),
    #[error(transparent)]
    Ols(#[from] OlsError),
}
