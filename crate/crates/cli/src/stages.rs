//! One function per subcommand. Each writes its documented outputs and a
//! manifest into the output directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use serde_json::json;

use mobiscope_core::ingest::{self, CaseTable, HexRecord};
use mobiscope_core::inference::{
    build_design, corr_evolution_csv, corr_matrix_csv, cross_sectional_corr, format_fit_report, mobility_corr_matrix, ols_fit,
    write_fit_csv,
};
use mobiscope_core::mobility::{self, case_rates_at, flow_vector, od_graph, FlowVector, MobilityPanels, RiskRule};
use mobiscope_core::panel::{Commune, DateIndex, OdMatrix, StudyRegion, TransitionLog};
use mobiscope_core::par::Execution;
use mobiscope_core::region::{assemble, RegionInputs};
use mobiscope_core::simgen::{self, CityConfig};
use mobiscope_core::synthctl::{
    cohort_treatment_days, staggered_ascm, staggered_placebo, write_gap_csv, write_placebo_csv, write_weights_csv, DonorRule,
    LambdaChoice, StaggeredConfig,
};
use mobiscope_core::tsclust::{
    cut, distance_matrix_with, fill_missing, hcluster, validity_indices, write_clusters_csv, write_cvi_csv, write_dendrogram_csv,
};
use mobiscope_core::{InterventionKind, Variable};

use crate::config::{self, Lambda, PipelineConfig};
use crate::logging;
use crate::manifest::Manifest;
use crate::CliError;

pub const STAGES: [&str; 6] = ["validate", "mobility", "cluster", "regress", "corr", "scm"];

/// Parsed inputs and the assembled region.
pub struct Data {
    pub communes: Vec<Commune>,
    pub od: Vec<OdMatrix>,
    pub cases: CaseTable,
    pub region: StudyRegion,
    pub panels: MobilityPanels,
    pub input_files: Vec<PathBuf>,
}

fn study_index(cfg: &PipelineConfig, cases: &CaseTable) -> Result<DateIndex, CliError> {
    let dates: Vec<NaiveDate> = cases.series.values().flatten().map(|(d, _)| *d).collect();
    let start = cfg.study.start.or_else(|| dates.iter().min().copied());
    let end = cfg.study.end.or_else(|| dates.iter().max().copied());
    match (start, end) {
        (Some(s), Some(e)) if s <= e => DateIndex::spanning(s, e).map_err(|e| CliError::Validation(e.to_string())),
        (Some(s), Some(e)) => Err(CliError::Config(format!("study window ends ({e}) before it starts ({s})"))),
        _ => Err(CliError::Validation("case file has no rows and no study window is configured".into())),
    }
}

pub fn load(cfg: &PipelineConfig) -> Result<Data, CliError> {
    let files = cfg.inputs.files();
    let path = |name: &str| files.iter().find(|(n, _)| *n == name).map(|(_, p)| p.clone()).expect("known input");
    let communes = ingest::read_socio(&path("socio"))?;
    let known: BTreeSet<String> = communes.iter().map(|c| c.id.clone()).collect();
    let hex: Vec<HexRecord> = ingest::read_hex_scores(&path("hex_scores"))?;
    let od = ingest::read_od(&path("od"), Some(&known))?;
    let transitions: TransitionLog = ingest::read_transitions(&path("transitions"), &path("antennas"))?;
    let cases = ingest::read_cases(&path("cases"))?;
    let schedule = ingest::read_schedule(&path("schedule"))?;
    let index = study_index(cfg, &cases)?;
    let (region, panels) = assemble(RegionInputs {
        communes: communes.clone(),
        index,
        schedule,
        hex: &hex,
        transitions: &transitions,
        cases: &cases,
    })?;
    Ok(Data { communes, od, cases, region, panels, input_files: files.into_iter().map(|(_, p)| p).collect() })
}

fn config_json(cfg: &PipelineConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn finish(cfg: &PipelineConfig, data: &Data, stage: &str, outputs: &[PathBuf], extra: impl FnOnce(&mut Manifest)) -> Result<(), CliError> {
    let mut m = Manifest::new(stage, cfg.seed, config_json(cfg));
    m.add_inputs(&data.input_files)?;
    m.add_outputs(outputs)?;
    m.warnings = logging::take_warnings();
    extra(&mut m);
    m.write(&cfg.output_dir)?;
    Ok(())
}

fn day_of(index: &DateIndex, date: NaiveDate, what: &str) -> Result<usize, CliError> {
    index.offset(date).ok_or_else(|| CliError::Config(format!("{what} {date} lies outside the study window")))
}

fn flow(cfg: &PipelineConfig, data: &Data) -> Result<FlowVector, CliError> {
    let m = &cfg.mobility;
    let region = &data.region;
    let cutoff = day_of(&region.date_index, m.risk_cutoff, "mobility.risk_cutoff")?;
    let rates = case_rates_at(&region.variable(Variable::CumCasesPer100k), cutoff);
    let risk = mobility::risk_set(&rates, RiskRule::TopK(m.risk_k)).map_err(|e| CliError::Runtime(e.to_string()))?;
    flow_vector(&data.od, &risk, (m.flow_from, m.flow_to + Duration::days(1)), m.slots.range(), &region.populations())
        .map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn validate(cfg: &PipelineConfig, data: &Data) -> Result<(), CliError> {
    let repairs: Vec<serde_json::Value> = data
        .cases
        .repairs
        .iter()
        .map(|r| json!({"commune_id": r.commune_id, "date": r.date.to_string(), "reported": r.reported, "repaired": r.repaired}))
        .collect();
    let summary = json!({
        "communes": data.communes.len(),
        "days": data.region.date_index.n_days,
        "start": data.region.date_index.start.to_string(),
        "od_matrices": data.od.len(),
        "transitions_dropped": data.panels.dropped,
    });
    finish(cfg, data, "validate", &[], |m| {
        m.repairs = repairs;
        m.config["summary"] = summary;
    })
}

pub fn mobility_stage(cfg: &PipelineConfig, data: &Data) -> Result<(), CliError> {
    let m = &cfg.mobility;
    let from = m.graph_from.unwrap_or(m.flow_from);
    let to = m.graph_to.unwrap_or(m.flow_to);
    let graph = od_graph(&data.od, (from, to + Duration::days(1)), m.slots.range());
    graph.write(&cfg.output_dir)?;
    let fv = flow(cfg, data)?;
    let flow_path = cfg.output_dir.join("flow.csv");
    let mut w = std::io::BufWriter::new(fs::File::create(&flow_path)?);
    ingest::write_rows(
        &mut w,
        "commune_id,flow,in_risk_set",
        fv.flow.iter().map(|(c, f)| format!("{},{f},{}", ingest::field(c), fv.risk_set.contains(c))),
    )?;
    let outputs = ["nodes.csv", "edges.csv", "flow.csv"].map(|f| cfg.output_dir.join(f));
    finish(cfg, data, "mobility", &outputs, |_| {})
}

pub fn cluster_stage(cfg: &PipelineConfig, data: &Data) -> Result<(), CliError> {
    let c = &cfg.cluster;
    let series = data.region.variable(c.variable);
    let ids: Vec<String> = series.keys().cloned().collect();
    let n = ids.len();
    if c.k_max > n || c.cut > n || c.cut < 2 {
        return Err(CliError::Config(format!(
            "cluster: k range {}..{} and cut {} must lie within [2, {n}] ({n} series)",
            c.k_min, c.k_max, c.cut
        )));
    }
    let values: Vec<Vec<f64>> =
        series.values().map(|s| fill_missing(s)).collect::<Result<_, _>>().map_err(|e| CliError::Runtime(e.to_string()))?;
    let d = distance_matrix_with(&values, &c.dtw, Execution::Parallel).map_err(|e| CliError::Runtime(e.to_string()))?;
    let dendro = hcluster(&d).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut rows = Vec::new();
    for k in c.k_min..=c.k_max {
        let sol = cut(&dendro, k, &d).map_err(|e| CliError::Runtime(e.to_string()))?;
        rows.push((k, validity_indices(&d, &sol).map_err(|e| CliError::Runtime(e.to_string()))?));
    }
    let chosen = cut(&dendro, c.cut, &d).map_err(|e| CliError::Runtime(e.to_string()))?;
    let out = |f: &str| cfg.output_dir.join(f);
    write_dendrogram_csv(&dendro, &out("dendrogram.csv"))?;
    write_clusters_csv(&ids, &chosen, &out("clusters.csv"))?;
    write_cvi_csv(&rows, &out("cvi.csv"))?;
    finish(cfg, data, "cluster", &[out("dendrogram.csv"), out("clusters.csv"), out("cvi.csv")], |_| {})
}

pub fn regress_stage(cfg: &PipelineConfig, data: &Data) -> Result<(), CliError> {
    let r = &cfg.regress;
    let index = &data.region.date_index;
    let from = day_of(index, r.from, "regress.from")?;
    let to = day_of(index, r.to, "regress.to")?;
    let fv = flow(cfg, data)?;
    let design = build_design(&data.region, &fv, from..to + 1, r.response).map_err(|e| CliError::Runtime(e.to_string()))?;
    for d in &design.dropped {
        log::warn!("{} dropped from the design: missing {}", d.commune, d.missing.join(", "));
    }
    let fit = ols_fit(&design.columns, &design.rows, &design.response).map_err(|e| CliError::Runtime(e.to_string()))?;
    let txt = cfg.output_dir.join("fit_report.txt");
    let csv = cfg.output_dir.join("fit_report.csv");
    fs::write(&txt, format_fit_report(&fit))?;
    write_fit_csv(&fit, &csv)?;
    let summary = json!({"n": fit.n, "r_squared": fit.r_squared, "risk_set": fv.risk_set});
    finish(cfg, data, "regress", &[txt, csv], |m| m.config["summary"] = summary)
}

pub fn corr_stage(cfg: &PipelineConfig, data: &Data) -> Result<(), CliError> {
    let evo = cross_sectional_corr(&data.region, cfg.corr.a, cfg.corr.b, Execution::Parallel);
    let matrix = mobility_corr_matrix(&data.region.variable(cfg.corr.matrix_variable), Execution::Parallel);
    let e = cfg.output_dir.join("corr_evolution.csv");
    let m = cfg.output_dir.join("corr_matrix.csv");
    corr_evolution_csv(&evo, &data.region.date_index, &e)?;
    corr_matrix_csv(&matrix, &m)?;
    finish(cfg, data, "corr", &[e, m], |_| {})
}

fn read_clusters(path: &Path) -> Result<BTreeMap<String, usize>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("scm.same_cluster needs {} from the cluster stage: {e}", path.display())))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let (u, k) = l.rsplit_once(',').ok_or_else(|| CliError::Runtime(format!("bad clusters.csv row `{l}`")))?;
            let k = k.parse().map_err(|_| CliError::Runtime(format!("bad clusters.csv label `{k}`")))?;
            Ok((u.to_string(), k))
        })
        .collect()
}

pub fn scm_stage(cfg: &PipelineConfig, data: &Data) -> Result<(), CliError> {
    let s = &cfg.scm;
    let region = &data.region;
    let kind = InterventionKind::Phase2Transition;
    let cohort: Vec<String> = if !s.cohort.is_empty() {
        s.cohort.clone()
    } else if let Some(date) = s.cohort_date {
        let mut out = Vec::new();
        for c in region.commune_ids() {
            if region.schedule.first_date(&c, kind).map_err(|e| CliError::Runtime(e.to_string()))? == Some(date) {
                out.push(c);
            }
        }
        if out.is_empty() {
            return Err(CliError::Config(format!("scm.cohort_date {date}: no commune is released on that date")));
        }
        out
    } else {
        return Err(CliError::Config("scm: set either `cohort` or `cohort_date`".into()));
    };
    let days = cohort_treatment_days(region, &cohort, kind).map_err(|e| CliError::Config(e.to_string()))?;
    let lambda = match s.lambda {
        Lambda::Cv => LambdaChoice::CrossValidate(None),
        Lambda::Fixed(l) => LambdaChoice::Fixed(l),
    };
    let sc = StaggeredConfig {
        outcome: s.outcome,
        smoothing: s.smoothing,
        pre_window: s.pre_window,
        post_window: s.post_window,
        donor_rule: if s.donors.is_empty() { DonorRule::CleanControls } else { DonorRule::Explicit(s.donors.clone()) },
        lambda: lambda.clone(),
        treatment_kind: kind,
        clusters: if s.same_cluster { Some(read_clusters(&cfg.output_dir.join("clusters.csv"))?) } else { None },
    };
    let fit = staggered_ascm(region, &days, &sc, Execution::Parallel).map_err(|e| CliError::Runtime(e.to_string()))?;
    let out = |f: &str| cfg.output_dir.join(f);
    write_gap_csv(&fit, &out("gap.csv"))?;
    write_weights_csv(&fit, &out("weights.csv"))?;
    let placebo = match staggered_placebo(&fit, &lambda, Execution::Parallel) {
        Ok(p) => Some(p),
        Err(e) => {
            log::warn!("placebo distribution unavailable: {e}");
            None
        }
    };
    match &placebo {
        Some(p) => write_placebo_csv(p, &out("placebo.csv"))?,
        None => fs::write(out("placebo.csv"), "donor,pseudo_att\n")?,
    }
    let summary = json!({
        "cohort": cohort,
        "att": fit.att,
        "treated": fit.units.iter().map(|u| json!({"commune_id": u.problem.treated_id, "att": u.fit.att, "lambda": u.fit.lambda})).collect::<Vec<_>>(),
        "excluded": fit.excluded,
        "placebo_rank": placebo.as_ref().map(|p| p.rank),
        "placebo_size": placebo.as_ref().map(|p| p.pseudo.len() + 1),
    });
    finish(cfg, data, "scm", &[out("gap.csv"), out("weights.csv"), out("placebo.csv")], |m| m.config["summary"] = summary)
}

pub fn run_stage(stage: &str, cfg: &PipelineConfig, data: &Data) -> Result<(), CliError> {
    match stage {
        "validate" => validate(cfg, data),
        "mobility" => mobility_stage(cfg, data),
        "cluster" => cluster_stage(cfg, data),
        "regress" => regress_stage(cfg, data),
        "corr" => corr_stage(cfg, data),
        "scm" => scm_stage(cfg, data),
        other => unreachable!("unknown stage {other}"),
    }
}

pub fn run_all(cfg: &PipelineConfig) -> Result<(), CliError> {
    let data = load(cfg).map_err(|e| CliError::stage("validate", e))?;
    for stage in STAGES {
        log::info!("stage {stage}");
        run_stage(stage, cfg, &data).map_err(|e| CliError::stage(stage, e))?;
    }
    Ok(())
}

/// Writes simulated inputs, ground truth and a ready-to-run pipeline config.
pub fn simgen_stage(city_cfg: &CityConfig, out: &Path) -> Result<(), CliError> {
    let city = simgen::generate(city_cfg).map_err(|e| match e {
        simgen::SimError::Config(m) => CliError::Config(m),
        other => CliError::Runtime(other.to_string()),
    })?;
    city.write_to(out).map_err(|e| CliError::Runtime(e.to_string()))?;
    let pipeline = config::for_simulated(Path::new("."), city_cfg.seed, city.truth.lift_date);
    let cfg_path = out.join("mobiscope.toml");
    fs::write(&cfg_path, toml::to_string(&pipeline).map_err(|e| CliError::Runtime(e.to_string()))?)?;
    let names = [
        simgen::files::HEX_SCORES,
        simgen::files::OD,
        simgen::files::TRANSITIONS,
        simgen::files::ANTENNAS,
        simgen::files::CASES,
        simgen::files::SOCIO,
        simgen::files::SCHEDULE,
        simgen::files::GROUND_TRUTH,
        "mobiscope.toml",
    ];
    let mut m = Manifest::new("simgen", city_cfg.seed, serde_json::to_value(city_cfg).expect("config serializes"));
    m.add_outputs(&names.map(|n| out.join(n)))?;
    m.warnings = logging::take_warnings();
    m.write(out)?;
    Ok(())
}
