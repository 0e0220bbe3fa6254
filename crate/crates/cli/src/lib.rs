//! The `mobiscope` command line: one subcommand per pipeline stage.
//!
//! ```text
//! mobiscope <subcommand> --config <file> [--out DIR] [--threads N] [--seed S]
//! ```
//!
//! Flags override the matching config keys. Exit codes: 0 on success,
//! 2 for config or input validation failures, 1 for runtime errors.

pub mod config;
pub mod logging;
pub mod manifest;
pub mod stages;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

use mobiscope_core::ingest::IngestError;
use mobiscope_core::region::AssembleError;
use mobiscope_core::simgen::CityConfig;

use config::PipelineConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: String, source: Box<CliError> },
}

impl CliError {
    pub fn stage(stage: &str, e: CliError) -> Self {
        match e {
            CliError::Stage { .. } => e,
            other => CliError::Stage { stage: stage.to_string(), source: Box::new(other) },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Validation(_) => 2,
            CliError::Runtime(_) => 1,
            CliError::Stage { source, .. } => source.exit_code(),
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<AssembleError> for CliError {
    fn from(e: AssembleError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "mobiscope", version, about = "Mobility and epidemic panel analysis pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Pipeline config (TOML). For `simgen`, an optional city config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker cap; 0 uses every core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse every input and report repairs.
    Validate,
    /// OD graph and flow into the high-risk set.
    Mobility,
    /// DTW clustering with validity indices.
    Cluster {
        /// Inclusive k range for cvi.csv, e.g. `2..6`.
        #[arg(long, value_parser = parse_k_range)]
        k: Option<(usize, usize)>,
    },
    /// Cross-sectional flow regression.
    Regress,
    /// Correlation evolution and mobility correlation matrix.
    Corr,
    /// Staggered augmented synthetic control with placebo.
    Scm,
    /// Simulated city with ground truth and a matching pipeline config.
    Simgen,
    /// validate, mobility, cluster, regress, corr, scm in order.
    RunAll,
}

fn parse_k_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected LO..HI, got `{s}`"))?;
    let b = b.strip_prefix('=').unwrap_or(b);
    let lo = a.trim().parse().map_err(|_| format!("bad lower bound `{a}`"))?;
    let hi = b.trim().parse().map_err(|_| format!("bad upper bound `{b}`"))?;
    Ok((lo, hi))
}

fn apply_threads(n: usize) {
    if n > 0 && !mobiscope_core::par::limit_threads(n) {
        log::debug!("thread pool already initialised; --threads {n} ignored");
    }
}

fn pipeline_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config <file> is required".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(out) = &cli.out {
        std::fs::create_dir_all(out)?;
        cfg.output_dir = out.canonicalize()?;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Command::Cluster { k: Some((lo, hi)) } = cli.command {
        cfg.cluster.k_min = lo;
        cfg.cluster.k_max = hi;
        cfg.cluster.cut = cfg.cluster.cut.clamp(lo, hi);
    }
    cfg.check()?;
    Ok(cfg)
}

fn city_config(cli: &Cli) -> Result<CityConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", p.display(), e.message())))?
        }
        None => CityConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::Simgen = cli.command {
        let cfg = city_config(&cli)?;
        apply_threads(cli.threads.unwrap_or(0));
        let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&out)?;
        return stages::simgen_stage(&cfg, &out);
    }
    let cfg = pipeline_config(&cli)?;
    apply_threads(cfg.threads);
    std::fs::create_dir_all(&cfg.output_dir)?;
    let stage = match cli.command {
        Command::Validate => "validate",
        Command::Mobility => "mobility",
        Command::Cluster { .. } => "cluster",
        Command::Regress => "regress",
        Command::Corr => "corr",
        Command::Scm => "scm",
        Command::RunAll => return stages::run_all(&cfg),
        Command::Simgen => unreachable!(),
    };
    let data = stages::load(&cfg)?;
    stages::run_stage(stage, &cfg, &data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_range_forms() {
        assert_eq!(parse_k_range("2..6"), Ok((2, 6)));
        assert_eq!(parse_k_range("3..=5"), Ok((3, 5)));
        assert!(parse_k_range("4").is_err());
    }

    #[test]
    fn stage_errors_keep_inner_exit_code() {
        let e = CliError::stage("cluster", CliError::Config("x".into()));
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("cluster"));
        assert_eq!(CliError::stage("scm", CliError::Runtime("y".into())).exit_code(), 1);
    }
}
