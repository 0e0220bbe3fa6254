use std::collections::BTreeMap;
use std::ops::Range;

use super::InferenceError;
use crate::mobility::FlowVector;
use crate::panel::{StudyRegion, Variable};

pub const DESIGN_COLUMNS: [&str; 6] = ["(Intercept)", "MobIn", "MobOut", "Flow", "Score", "MobOut:Flow"];

/// Outcome used as the regression response.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    #[default]
    CumCases,
    CumCasesPer100k,
}

impl Response {
    fn variable(self) -> Variable {
        match self {
            Response::CumCases => Variable::CumCases,
            Response::CumCasesPer100k => Variable::CumCasesPer100k,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DroppedRow {
    pub commune: String,
    pub missing: Vec<&'static str>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    pub columns: Vec<String>,
    pub row_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub response: Vec<f64>,
    pub dropped: Vec<DroppedRow>,
}

/// Cross-sectional design over `window`: window means of mobility-in,
/// mobility-out and score, the flow vector, their interaction, and the
/// response at the last window day. Communes missing any value are dropped.
pub fn build_design(
    region: &StudyRegion,
    flow: &FlowVector,
    window: Range<usize>,
    response: Response,
) -> Result<DesignMatrix, InferenceError> {
    if window.is_empty() {
        return Err(InferenceError::EmptyWindow);
    }
    if window.end > region.date_index.n_days {
        return Err(InferenceError::DayOutOfRange(window.end - 1));
    }
    if flow.risk_set.is_empty() {
        return Err(InferenceError::EmptyRiskSet);
    }
    let mean_of = |v: Variable| -> BTreeMap<String, f64> {
        region.variable(v).into_iter().filter_map(|(c, s)| s.window_mean(window.clone()).map(|m| (c, m))).collect()
    };
    let mob_in = mean_of(Variable::MobIn);
    let mob_out = mean_of(Variable::MobOut);
    let score = mean_of(Variable::Score);
    let last = window.end - 1;
    let resp: BTreeMap<String, f64> =
        region.variable(response.variable()).into_iter().filter_map(|(c, s)| s.get(last).map(|v| (c, v))).collect();

    let mut out = DesignMatrix {
        columns: DESIGN_COLUMNS.iter().map(|s| s.to_string()).collect(),
        row_ids: Vec::new(),
        rows: Vec::new(),
        response: Vec::new(),
        dropped: Vec::new(),
    };
    for id in region.commune_ids() {
        let vals = [mob_in.get(&id), mob_out.get(&id), flow.flow.get(&id), score.get(&id), resp.get(&id)];
        let missing: Vec<&'static str> = ["MobIn", "MobOut", "Flow", "Score", response.variable().as_str()]
            .into_iter()
            .zip(&vals)
            .filter(|(_, v)| v.is_none())
            .map(|(n, _)| n)
            .collect();
        if !missing.is_empty() {
            out.dropped.push(DroppedRow { commune: id, missing });
            continue;
        }
        let [mi, mo, f, s, y] = vals.map(|v| *v.expect("checked"));
        out.row_ids.push(id);
        out.rows.push(vec![1.0, mi, mo, f, s, mo * f]);
        out.response.push(y);
    }
    Ok(out)
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{Commune, DateIndex, PanelSeries, SlotRange};
    use crate::schedule::InterventionSchedule;
    use chrono::NaiveDate;

    fn region(n: usize) -> StudyRegion {
        let communes = (0..n)
            .map(|i| Commune {
                id: format!("C{i}"),
                name: format!("c{i}"),
                population: 1000,
                income_index: 0.5,
                is_rural: false,
            })
            .collect();
        let idx = DateIndex::new(NaiveDate::from_ymd_opt(2020, 2, 20).unwrap(), 5).unwrap();
        let mut r = StudyRegion::new(communes, idx, InterventionSchedule::default()).unwrap();
        for i in 0..n {
            let id = format!("C{i}");
            let f = i as f64;
            r.insert(PanelSeries::complete(&id, Variable::MobIn, vec![f, f + 2.0, f, f, f])).unwrap();
            r.insert(PanelSeries::complete(&id, Variable::MobOut, vec![2.0 * f; 5])).unwrap();
            r.insert(PanelSeries::complete(&id, Variable::Score, vec![10.0 + f; 5])).unwrap();
            r.insert(PanelSeries::complete(&id, Variable::CumCases, vec![1.0, 2.0, 3.0, 4.0, 5.0 + f])).unwrap();
        }
        r
    }

    fn flow(n: usize) -> FlowVector {
        let d = NaiveDate::from_ymd_opt(2020, 2, 20).unwrap();
        FlowVector {
            flow: (0..n).map(|i| (format!("C{i}"), if i == 0 { 0.0 } else { 0.1 * i as f64 })).collect(),
            risk_set: ["C0".to_string()].into(),
            window: (d, d),
            slots: SlotRange::morning(),
        }
    }

    #[test]
    fn columns_and_rows() {
        let d = build_design(&region(4), &flow(4), 0..5, Response::CumCases).unwrap();
        assert_eq!(d.columns.len(), 6);
        assert_eq!(d.n_rows(), 4);
        // risk-set member has zero flow and zero interaction
        assert_eq!(d.rows[0][3], 0.0);
        assert_eq!(d.rows[0][5], 0.0);
        let r2 = &d.rows[2];
        assert_eq!(r2[1], 2.4);
        assert_eq!(r2[5], r2[2] * r2[3]);
        assert_eq!(d.response[2], 7.0);
    }

    #[test]
    fn single_day_window_uses_that_day() {
        let d = build_design(&region(3), &flow(3), 1..2, Response::CumCases).unwrap();
        assert_eq!(d.rows[1][1], 3.0);
        assert_eq!(d.response[1], 2.0);
    }

    #[test]
    fn drops_incomplete_rows() {
        let mut r = region(4);
        r.upsert(PanelSeries::all_missing("C3", Variable::Score, 5)).unwrap();
        let d = build_design(&r, &flow(4), 0..5, Response::CumCases).unwrap();
        assert_eq!(d.n_rows(), 3);
        assert_eq!(d.dropped, vec![DroppedRow { commune: "C3".into(), missing: vec!["Score"] }]);
        assert_eq!(build_design(&r, &flow(4), 2..2, Response::CumCases), Err(InferenceError::EmptyWindow));
        let mut f = flow(4);
        f.risk_set.clear();
        assert_eq!(build_design(&r, &f, 0..5, Response::CumCases), Err(InferenceError::EmptyRiskSet));
    }
}
