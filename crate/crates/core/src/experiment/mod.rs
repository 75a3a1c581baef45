//! Declarative experiments: config, sweep execution, CSV and manifest output.
//!
//! Every random stream is derived from the master seed and the
//! `(point, run)` path, so points and runs can be computed in any order and
//! on any number of threads with identical artifacts.

mod config;
mod output;
mod runner;

use std::path::{Path, PathBuf};

pub use config::{
    defaults, EvaluationBlock, ExperimentConfig, Preset, SolversBlock, SweepAxis, SweepBlock, SweepPoint, TrainingBlock,
};
pub use output::{
    write_artifacts, Manifest, ManifestPoint, AUDIT_SCHEMA, BEST_RESPONSE_SCHEMA, ERRORS_SCHEMA, MANIFEST_SCHEMA,
    NASH_SCHEMA, RESULTS_SCHEMA, STRATEGIES_SCHEMA, SUMMARY_SCHEMA, WELFARE_MATRIX_SCHEMA, WELFARE_SCHEMA,
};
pub use runner::{
    execute, solver_seed, ExperimentOutcome, NashOutcome, PointError, PointOutcome, RunOutcome, RunSeeds,
};

use crate::error::{CrdError, Result};

#[derive(Debug)]
pub struct RunReport {
    pub outcome: ExperimentOutcome,
    pub manifest: Manifest,
    pub output_dir: PathBuf,
}

impl RunReport {
    pub fn failed(&self) -> bool {
        self.outcome.failed()
    }
}

/// Resolves the output directory: an explicit override wins over the config.
fn output_dir(config: &ExperimentConfig, out: Option<&Path>) -> Result<PathBuf> {
    out.map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| CrdError::invalid("output_dir", "no output directory given"))
}

pub fn run_config(config: &ExperimentConfig, out: Option<&Path>) -> Result<RunReport> {
    let dir = output_dir(config, out)?;
    let outcome = execute(config)?;
    let manifest = write_artifacts(&outcome, &dir)?;
    Ok(RunReport {
        outcome,
        manifest,
        output_dir: dir,
    })
}

/// Loads, validates and runs the experiment described by a config file.
pub fn run_experiment(path: &Path, out: Option<&Path>) -> Result<RunReport> {
    run_config(&ExperimentConfig::load(path)?, out)
}

/// Re-runs the experiment recorded in a manifest into `out`.
pub fn run_from_manifest(manifest: &Path, out: &Path) -> Result<RunReport> {
    let m = Manifest::load(manifest)?;
    m.verify()?;
    let report = run_config(&m.config, Some(out))?;
    if report.manifest.runs != m.runs || report.manifest.points != m.points {
        return Err(CrdError::ManifestMismatch(
            "re-run produced a different seed table".into(),
        ));
    }
    Ok(report)
}
