//! Analytics for epidemic and human-mobility panel data.
//!
//! The crate covers the full pipeline: ingesting commune-level panels,
//! percentile mobility scoring, DTW-based hierarchical clustering with
//! validity indices, flow regression, cross-sectional correlation,
//! augmented synthetic control, and a synthetic-city generator with
//! planted ground truth for every estimator.

pub mod ingest;
pub mod inference;
pub mod mobility;
pub mod panel;
pub mod region;
pub mod par;
pub mod schedule;
pub mod simgen;
pub mod synthctl;
pub mod tsclust;

pub use panel::{Commune, DateIndex, OdMatrix, PanelSeries, Slot, StudyRegion, TransitionLog, Variable};
pub use schedule::{InterventionKind, InterventionSchedule};
