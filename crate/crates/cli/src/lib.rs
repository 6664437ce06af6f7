//! Experiment orchestration behind the `cml` binary.

pub mod config;
pub mod experiments;
pub mod svg;
pub mod table;

use std::fs;
use std::path::{Path, PathBuf};

use cml_core::CmlError;
use serde::Serialize;

use config::{Experiment, ExperimentConfig, Overrides, Params};
use svg::{emit_svg, PlotError, PlotSpec};
use table::Table;

pub const TOOLKIT: &str = "cml";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime cap exceeded: {0}")]
    Cap(String),
    #[error(transparent)]
    Core(CmlError),
    #[error(transparent)]
    Plot(#[from] PlotError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl From<CmlError> for CliError {
    fn from(e: CmlError) -> Self {
        match e {
            CmlError::Config(_)
            | CmlError::Domain(_)
            | CmlError::Usage(_)
            | CmlError::Feasibility(_)
            | CmlError::Parameter(_) => CliError::Config(e.to_string()),
            CmlError::CapExceeded(m) => CliError::Cap(m),
            CmlError::Internal(_) => CliError::Core(e),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Cap(_) => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub toolkit: &'static str,
    pub version: &'static str,
    pub experiment: Experiment,
    pub metric: String,
    pub precision: String,
    pub seed: u64,
    /// Set when a runtime cap cut the run short; the tables hold what was finished.
    pub partial: Option<String>,
    pub config: serde_json::Value,
}

/// Data produced by one experiment, before it is written out.
#[derive(Debug, Clone)]
pub struct ResultBundle {
    pub table: Table,
    pub results: serde_json::Value,
    pub plot: Option<PlotSpec>,
    /// Further files as `(suffix, contents)`, written to `<name>.<suffix>`.
    pub extra: Vec<(String, String)>,
    pub partial: Option<String>,
}

impl ResultBundle {
    pub fn new(table: Table, results: serde_json::Value, plot: Option<PlotSpec>) -> Self {
        ResultBundle {
            table,
            results,
            plot,
            extra: Vec::new(),
            partial: None,
        }
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<ResultBundle, CliError> {
    match &cfg.params {
        Params::RunOrbit(p) => experiments::run_orbit(cfg, p),
        Params::Sweep(p) => experiments::sweep(cfg, p),
        Params::EscapeTime(p) => experiments::escape(cfg, p),
        Params::GeometryTrace(p) => experiments::geometry(cfg, p),
        Params::LemmaConstants(p) => experiments::lemma(p),
        Params::Density(p) => experiments::density(cfg, p),
        Params::Stability(p) => experiments::stability(p),
    }
}

pub fn metadata(cfg: &ExperimentConfig, partial: Option<String>) -> Metadata {
    Metadata {
        toolkit: TOOLKIT,
        version: VERSION,
        experiment: cfg.experiment,
        metric: cfg.metric.to_string(),
        precision: cfg.precision.to_string(),
        seed: cfg.seed,
        partial,
        config: cfg.to_json(),
    }
}

/// Files written by one invocation.
#[derive(Debug, Clone)]
pub struct Written {
    pub files: Vec<PathBuf>,
    pub partial: Option<String>,
}

pub fn write_bundle(cfg: &ExperimentConfig, b: &ResultBundle, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir)?;
    let path = |ext: &str| dir.join(format!("{}.{ext}", cfg.name));
    let mut files = Vec::new();

    let csv = path("csv");
    b.table.write_csv(&csv)?;
    files.push(csv);

    let json = path("json");
    let doc = serde_json::json!({
        "metadata": metadata(cfg, b.partial.clone()),
        "results": b.results,
    });
    fs::write(&json, serde_json::to_string_pretty(&doc).expect("bundle serializes") + "\n")?;
    files.push(json);

    if let Some(spec) = &b.plot {
        let svg = path("svg");
        fs::write(&svg, emit_svg(&b.table, spec)?)?;
        files.push(svg);
    } else {
        log::warn!("nothing to plot for {}", cfg.name);
    }
    for (suffix, body) in &b.extra {
        let p = path(suffix);
        fs::write(&p, body)?;
        files.push(p);
    }
    Ok(files)
}

/// Loads the config, runs the experiment and writes its bundle.
pub fn execute(exp: Experiment, config: &Path, ov: &Overrides) -> Result<Written, CliError> {
    let mut cfg = ExperimentConfig::from_path(config, exp, ov)?;
    experiments::resolve(&mut cfg)?;
    log::info!("running {} as '{}' (seed {}, {})", exp, cfg.name, cfg.seed, cfg.precision);
    let bundle = run(&cfg)?;
    let files = write_bundle(&cfg, &bundle, Path::new(&cfg.out))?;
    Ok(Written {
        files,
        partial: bundle.partial,
    })
}
