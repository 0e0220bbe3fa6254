//! Assembles a [`StudyRegion`] from parsed input tables.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::ingest::{CaseTable, HexRecord};
use crate::mobility::{self, MobilityError, MobilityPanels};
use crate::panel::{Commune, DateIndex, PanelError, StudyRegion, TransitionLog};
use crate::schedule::InterventionSchedule;

#[derive(Debug, Error)]
pub enum AssembleError {
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Mobility(#[from] MobilityError),
    #[error("{0} appears in an input table but not in the socio table")]
    UnknownCommune(String),
}

pub struct RegionInputs<'a> {
    pub communes: Vec<Commune>,
    pub index: DateIndex,
    pub schedule: InterventionSchedule,
    pub hex: &'a [HexRecord],
    pub transitions: &'a TransitionLog,
    pub cases: &'a CaseTable,
}

/// Region with commune scores, transition panels, cumulative cases and
/// per-100k rates attached. Returns the raw mobility panels alongside.
pub fn assemble(inputs: RegionInputs) -> Result<(StudyRegion, MobilityPanels), AssembleError> {
    let known: BTreeSet<String> = inputs.communes.iter().map(|c| c.id.clone()).collect();
    let mut region = StudyRegion::new(inputs.communes, inputs.index, inputs.schedule)?;

    let grid = mobility::score_hexagons(inputs.hex)?;
    for (c, s) in mobility::commune_scores(&grid, &inputs.index) {
        if !known.contains(&c) {
            return Err(AssembleError::UnknownCommune(c));
        }
        region.insert(s)?;
    }

    if let Some(c) = inputs.transitions.communes().into_iter().find(|c| !known.contains(c)) {
        return Err(AssembleError::UnknownCommune(c));
    }
    let panels = mobility::mobility_indices(inputs.transitions, &inputs.index, &known);
    for s in panels.mob_in().into_values().chain(panels.mob_out().into_values()).chain(panels.mobility_index().into_values()) {
        region.insert(s)?;
    }

    for s in inputs.cases.to_panels(&inputs.index) {
        if !known.contains(&s.unit_id) {
            return Err(AssembleError::UnknownCommune(s.unit_id));
        }
        region.insert(s)?;
    }
    region.derive_case_rates()?;
    Ok((region, panels))
}
