//! Pipeline configuration file.
//!
//! TOML with one section per stage. Only `[inputs] dir` is required; every
//! other key has a documented default. Relative paths resolve against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use mobiscope_core::inference::Response;
use mobiscope_core::panel::SlotRange;
use mobiscope_core::synthctl::Outcome;
use mobiscope_core::tsclust::DtwConfig;
use mobiscope_core::Variable;

use crate::CliError;

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid literal date")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Worker cap; 0 uses every core.
    #[serde(default)]
    pub threads: usize,
    pub inputs: Inputs,
    #[serde(default)]
    pub study: Study,
    #[serde(default)]
    pub mobility: MobilityCfg,
    #[serde(default)]
    pub cluster: ClusterCfg,
    #[serde(default)]
    pub regress: RegressCfg,
    #[serde(default)]
    pub corr: CorrCfg,
    #[serde(default)]
    pub scm: ScmCfg,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub dir: PathBuf,
    #[serde(default = "Inputs::hex")]
    pub hex_scores: PathBuf,
    #[serde(default = "Inputs::od")]
    pub od: PathBuf,
    #[serde(default = "Inputs::transitions")]
    pub transitions: PathBuf,
    #[serde(default = "Inputs::antennas")]
    pub antennas: PathBuf,
    #[serde(default = "Inputs::cases")]
    pub cases: PathBuf,
    #[serde(default = "Inputs::socio")]
    pub socio: PathBuf,
    #[serde(default = "Inputs::schedule")]
    pub schedule: PathBuf,
}

impl Inputs {
    fn hex() -> PathBuf {
        "hex_scores.csv".into()
    }
    fn od() -> PathBuf {
        "od.csv".into()
    }
    fn transitions() -> PathBuf {
        "transitions.csv".into()
    }
    fn antennas() -> PathBuf {
        "antennas.csv".into()
    }
    fn cases() -> PathBuf {
        "cases.csv".into()
    }
    fn socio() -> PathBuf {
        "socio.csv".into()
    }
    fn schedule() -> PathBuf {
        "schedule.csv".into()
    }

    /// (name, resolved path) of every input file.
    pub fn files(&self) -> Vec<(&'static str, PathBuf)> {
        [
            ("hex_scores", &self.hex_scores),
            ("od", &self.od),
            ("transitions", &self.transitions),
            ("antennas", &self.antennas),
            ("cases", &self.cases),
            ("socio", &self.socio),
            ("schedule", &self.schedule),
        ]
        .into_iter()
        .map(|(n, p)| (n, self.dir.join(p)))
        .collect()
    }
}

/// Study calendar; both ends inclusive. Defaults to the span of the case file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Study {
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slots {
    #[default]
    Morning,
    AllDay,
}

impl Slots {
    pub fn range(self) -> SlotRange {
        match self {
            Slots::Morning => SlotRange::morning(),
            Slots::AllDay => SlotRange::all_day(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MobilityCfg {
    /// Size of the high-risk set, ranked by cases per 100k on `risk_cutoff`.
    pub risk_k: usize,
    pub risk_cutoff: NaiveDate,
    /// Flow window, both ends inclusive.
    pub flow_from: NaiveDate,
    pub flow_to: NaiveDate,
    pub slots: Slots,
    /// OD graph window, both ends inclusive; defaults to the flow window.
    pub graph_from: Option<NaiveDate>,
    pub graph_to: Option<NaiveDate>,
}

impl Default for MobilityCfg {
    fn default() -> Self {
        Self {
            risk_k: 7,
            risk_cutoff: date(2020, 3, 30),
            flow_from: date(2020, 2, 20),
            flow_to: date(2020, 3, 30),
            slots: Slots::Morning,
            graph_from: None,
            graph_to: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterCfg {
    pub variable: Variable,
    pub dtw: DtwConfig,
    pub k_min: usize,
    pub k_max: usize,
    /// Number of clusters written to clusters.csv.
    pub cut: usize,
}

impl Default for ClusterCfg {
    fn default() -> Self {
        Self { variable: Variable::Score, dtw: DtwConfig::default(), k_min: 2, k_max: 6, cut: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressCfg {
    /// Window for covariate means, both ends inclusive.
    pub from: NaiveDate,
    pub to: NaiveDate,
    pub response: Response,
}

impl Default for RegressCfg {
    fn default() -> Self {
        Self { from: date(2020, 2, 20), to: date(2020, 3, 30), response: Response::CumCases }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrCfg {
    pub a: Variable,
    pub b: Variable,
    /// Series compared pairwise in corr_matrix.csv.
    pub matrix_variable: Variable,
}

impl Default for CorrCfg {
    fn default() -> Self {
        Self { a: Variable::MobilityIndex, b: Variable::CumCasesPer100k, matrix_variable: Variable::MobilityIndex }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lambda {
    Cv,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScmCfg {
    /// Treated communes. When empty, every commune first released on
    /// `cohort_date` is treated.
    pub cohort: Vec<String>,
    pub cohort_date: Option<NaiveDate>,
    pub outcome: Outcome,
    pub smoothing: usize,
    pub pre_window: usize,
    pub post_window: usize,
    /// Fixed donor pool; empty means clean controls.
    pub donors: Vec<String>,
    pub lambda: Lambda,
    /// Keep only donors from the treated unit's cluster (needs clusters.csv).
    pub same_cluster: bool,
}

impl Default for ScmCfg {
    fn default() -> Self {
        Self {
            cohort: vec![],
            cohort_date: None,
            outcome: Outcome::NewCasesPer100k,
            smoothing: 7,
            pre_window: 42,
            post_window: 28,
            donors: vec![],
            lambda: Lambda::Cv,
            same_cluster: false,
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {}", origin.display(), e.message())))?;
        let base = origin.parent().unwrap_or(Path::new(""));
        let resolve = |p: &Path| if p.is_relative() { base.join(p).components().collect() } else { p.to_path_buf() };
        cfg.inputs.dir = resolve(&cfg.inputs.dir);
        cfg.output_dir = resolve(&cfg.output_dir);
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let err = |e: std::io::Error| CliError::Config(format!("{}: {e}", path.display()));
        let text = std::fs::read_to_string(path).map_err(err)?;
        // Absolute origin so the echoed config does not depend on the working directory.
        Self::parse(&text, &path.canonicalize().map_err(err)?)
    }

    pub fn check(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.cluster.k_min < 2 || self.cluster.k_min > self.cluster.k_max {
            return bad(format!("cluster: k range {}..{} must satisfy 2 <= k_min <= k_max", self.cluster.k_min, self.cluster.k_max));
        }
        if self.mobility.risk_k == 0 {
            return bad("mobility.risk_k must be >= 1".into());
        }
        if self.mobility.flow_from > self.mobility.flow_to || self.regress.from > self.regress.to {
            return bad("date windows must not be inverted".into());
        }
        if self.scm.pre_window < 2 || self.scm.post_window == 0 || self.scm.smoothing == 0 {
            return bad("scm: pre_window >= 2, post_window >= 1 and smoothing >= 1 are required".into());
        }
        if let Lambda::Fixed(l) = self.scm.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return bad("scm.lambda must be a finite value >= 0".into());
            }
        }
        Ok(())
    }
}

/// Config written next to simulated data so `run-all` works out of the box.
pub fn for_simulated(data_dir: &Path, seed: u64, cohort_date: NaiveDate) -> PipelineConfig {
    PipelineConfig {
        seed,
        output_dir: default_output(),
        threads: 0,
        inputs: Inputs {
            dir: data_dir.to_path_buf(),
            hex_scores: Inputs::hex(),
            od: Inputs::od(),
            transitions: Inputs::transitions(),
            antennas: Inputs::antennas(),
            cases: Inputs::cases(),
            socio: Inputs::socio(),
            schedule: Inputs::schedule(),
        },
        study: Study::default(),
        mobility: MobilityCfg::default(),
        cluster: ClusterCfg::default(),
        regress: RegressCfg::default(),
        corr: CorrCfg::default(),
        scm: ScmCfg { cohort_date: Some(cohort_date), ..ScmCfg::default() },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = PipelineConfig::parse("[inputs]\ndir = \"data\"\n", Path::new("/x/run.toml")).unwrap();
        assert_eq!(cfg.inputs.dir, PathBuf::from("/x/data"));
        assert_eq!(cfg.output_dir, PathBuf::from("/x/out"));
        assert_eq!(cfg.cluster, ClusterCfg::default());
        assert_eq!(cfg.mobility.risk_k, 7);
    }

    #[test]
    fn missing_key_is_named() {
        let err = PipelineConfig::parse("[inputs]\nod = \"od.csv\"\n", Path::new("run.toml")).unwrap_err();
        assert!(err.to_string().contains("dir"), "{err}");
        let err = PipelineConfig::parse("seed = 3\n", Path::new("run.toml")).unwrap_err();
        assert!(err.to_string().contains("inputs"), "{err}");
    }

    #[test]
    fn rejects_bad_k_range_and_unknown_keys() {
        let err = PipelineConfig::parse("[inputs]\ndir = \"d\"\n[cluster]\nk_min = 5\nk_max = 3\n", Path::new("r.toml")).unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
        let err = PipelineConfig::parse("[inputs]\ndir = \"d\"\n[cluster]\nkmax = 3\n", Path::new("r.toml")).unwrap_err();
        assert!(err.to_string().contains("kmax"), "{err}");
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = for_simulated(Path::new("."), 9, date(2020, 9, 7));
        let text = toml::to_string(&cfg).unwrap();
        let back = PipelineConfig::parse(&text, Path::new("run.toml")).unwrap();
        assert_eq!(back.scm.cohort_date, Some(date(2020, 9, 7)));
        assert_eq!(back.seed, 9);
        assert_eq!(back.cluster, cfg.cluster);
    }
}
