use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::runner::{solver_seed, ExperimentOutcome, RunSeeds};
use crate::error::{CrdError, Result};
use crate::learner::save_population;

pub const RESULTS_SCHEMA: &str = "crd.results.v1";
pub const SUMMARY_SCHEMA: &str = "crd.summary.v1";
pub const STRATEGIES_SCHEMA: &str = "crd.strategies.v1";
pub const NASH_SCHEMA: &str = "crd.nash.v1";
pub const BEST_RESPONSE_SCHEMA: &str = "crd.best_response.v1";
pub const WELFARE_SCHEMA: &str = "crd.welfare.v1";
pub const WELFARE_MATRIX_SCHEMA: &str = "crd.welfare_matrix.v1";
pub const AUDIT_SCHEMA: &str = "crd.audit.v1";
pub const ERRORS_SCHEMA: &str = "crd.errors.v1";
pub const MANIFEST_SCHEMA: &str = "crd.manifest.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestPoint {
    pub index: usize,
    pub r: f64,
    pub delta: f64,
    pub solver_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub version: String,
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub points: Vec<ManifestPoint>,
    pub runs: Vec<RunSeeds>,
    pub files: Vec<String>,
    pub errors: usize,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CrdError::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(CrdError::Format {
                path: path.to_path_buf(),
                reason: format!("schema `{}` is not {MANIFEST_SCHEMA}", m.schema),
            });
        }
        Ok(m)
    }

    /// Checks that the recorded hash and seeds follow from the embedded config.
    pub fn verify(&self) -> Result<()> {
        let hash = self.config.hash();
        if hash != self.config_sha256 {
            return Err(CrdError::ManifestMismatch(format!(
                "config hash {hash} differs from recorded {}",
                self.config_sha256
            )));
        }
        for s in &self.runs {
            if RunSeeds::derive(self.config.seed, s.point, s.run) != *s {
                return Err(CrdError::ManifestMismatch(format!(
                    "seeds for point {} run {} do not derive from the master seed",
                    s.point, s.run
                )));
            }
        }
        for p in &self.points {
            if solver_seed(self.config.seed, p.index) != p.solver_seed {
                return Err(CrdError::ManifestMismatch(format!("solver seed for point {}", p.index)));
            }
        }
        Ok(())
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

struct Table {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl Table {
    fn create(dir: &Path, name: &str, schema: &str, header: &[&str]) -> Result<Self> {
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CrdError::io(parent, e))?;
        }
        let file = File::create(&path).map_err(|e| CrdError::io(&path, e))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "# schema: {schema}").map_err(|e| CrdError::io(&path, e))?;
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(header)?;
        Ok(Table { path, writer })
    }

    fn row(&mut self, fields: &[String]) -> Result<()> {
        self.writer.write_record(fields)?;
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| CrdError::io(&self.path, e))
    }
}

/// Writes every artifact of an outcome into `dir` and returns the manifest.
pub fn write_artifacts(outcome: &ExperimentOutcome, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| CrdError::io(dir, e))?;
    let cfg = &outcome.config;
    let mut files = Vec::new();

    if cfg.training.enabled {
        files.extend(["results.csv", "summary.csv", "strategies.csv"].map(String::from));
        write_results(outcome, dir)?;
        write_summary(outcome, dir)?;
        write_strategies(outcome, dir, &mut files)?;
    }
    if cfg.solvers.nash {
        write_nash(outcome, dir)?;
        files.extend(["nash.csv", "best_response.csv"].map(String::from));
    }
    if cfg.solvers.welfare {
        write_welfare(outcome, dir, &mut files)?;
    }
    if cfg.solvers.audit {
        write_audit(outcome, dir)?;
        files.push("audit.csv".into());
    }
    let errors = outcome.errors().count();
    if errors > 0 {
        write_errors(outcome, dir)?;
        files.push("errors.csv".into());
    }

    let manifest = Manifest {
        schema: MANIFEST_SCHEMA.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: cfg.hash(),
        config: cfg.clone(),
        points: outcome
            .points
            .iter()
            .map(|p| ManifestPoint {
                index: p.point.index,
                r: p.point.risk,
                delta: p.point.diversity,
                solver_seed: solver_seed(cfg.seed, p.point.index),
            })
            .collect(),
        runs: outcome
            .points
            .iter()
            .flat_map(|p| p.runs.iter().map(|r| r.seeds))
            .collect(),
        files,
        errors,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(&path, text).map_err(|e| CrdError::io(&path, e))?;
    Ok(manifest)
}

fn point_cols(p: &super::runner::PointOutcome) -> [String; 3] {
    [p.point.index.to_string(), num(p.point.risk), num(p.point.diversity)]
}

fn write_results(outcome: &ExperimentOutcome, dir: &Path) -> Result<()> {
    let mut t = Table::create(
        dir,
        "results.csv",
        RESULTS_SCHEMA,
        &[
            "experiment",
            "point",
            "r",
            "delta",
            "run",
            "seed",
            "eta",
            "eta_stderr",
            "mean_pi_L",
            "mean_pi_H",
            "rollouts",
            "realized_steps",
        ],
    )?;
    for p in &outcome.points {
        for run in &p.runs {
            let rep = &run.report;
            let mut row = vec![outcome.config.name.clone()];
            row.extend(point_cols(p));
            row.extend([
                run.seeds.run.to_string(),
                run.seeds.run_seed.to_string(),
                num(rep.eta),
                num(rep.eta_stderr),
                num(rep.mean_pi_low),
                num(rep.mean_pi_high),
                rep.rollouts.to_string(),
                run.population.provenance.realized_steps.to_string(),
            ]);
            t.row(&row)?;
        }
    }
    t.finish()
}

fn write_summary(outcome: &ExperimentOutcome, dir: &Path) -> Result<()> {
    let mut t = Table::create(
        dir,
        "summary.csv",
        SUMMARY_SCHEMA,
        &[
            "experiment",
            "point",
            "r",
            "delta",
            "runs",
            "eta_mean",
            "eta_std",
            "pi_L_mean",
            "pi_L_std",
            "pi_H_mean",
            "pi_H_std",
        ],
    )?;
    for p in &outcome.points {
        let Some(a) = p.aggregate() else { continue };
        let mut row = vec![outcome.config.name.clone()];
        row.extend(point_cols(p));
        row.extend([
            a.runs.to_string(),
            num(a.eta.mean),
            num(a.eta.std),
            num(a.mean_pi_low.mean),
            num(a.mean_pi_low.std),
            num(a.mean_pi_high.mean),
            num(a.mean_pi_high.std),
        ]);
        t.row(&row)?;
    }
    t.finish()
}

fn write_strategies(outcome: &ExperimentOutcome, dir: &Path, files: &mut Vec<String>) -> Result<()> {
    let mut t = Table::create(
        dir,
        "strategies.csv",
        STRATEGIES_SCHEMA,
        &[
            "point", "r", "delta", "run", "id", "class", "q_c", "q_d", "pi", "updates",
        ],
    )?;
    let pop_dir = dir.join("populations");
    fs::create_dir_all(&pop_dir).map_err(|e| CrdError::io(&pop_dir, e))?;
    for p in &outcome.points {
        for run in &p.runs {
            for (a, &pi) in run.population.agents.iter().zip(&run.population.cooperation) {
                let mut row = point_cols(p).to_vec();
                row.extend([
                    run.seeds.run.to_string(),
                    a.id.to_string(),
                    a.class.as_str().to_string(),
                    num(a.q.cooperate()),
                    num(a.q.defect()),
                    num(pi),
                    a.updates.to_string(),
                ]);
                t.row(&row)?;
            }
            let name = format!("populations/point{}_run{}.csv", p.point.index, run.seeds.run);
            save_population(&run.population, &dir.join(&name))?;
            files.push(name);
        }
    }
    t.finish()
}

fn write_nash(outcome: &ExperimentOutcome, dir: &Path) -> Result<()> {
    let mut t = Table::create(
        dir,
        "nash.csv",
        NASH_SCHEMA,
        &[
            "point",
            "r",
            "delta",
            "pi_L",
            "pi_H",
            "residual",
            "refined_pi_L",
            "refined_pi_H",
        ],
    )?;
    let mut br = Table::create(
        dir,
        "best_response.csv",
        BEST_RESPONSE_SCHEMA,
        &[
            "point",
            "r",
            "delta",
            "class",
            "opponent_pi",
            "response_min",
            "response_max",
        ],
    )?;
    for p in &outcome.points {
        let Some(n) = &p.nash else { continue };
        for np in &n.points {
            let mut row = point_cols(p).to_vec();
            let (rl, rh) = np.refined.map(|r| (num(r.pi_low), num(r.pi_high))).unwrap_or_default();
            row.extend([
                num(np.profile.pi_low),
                num(np.profile.pi_high),
                num(np.residual),
                rl,
                rh,
            ]);
            t.row(&row)?;
        }
        for curve in [&n.low, &n.high] {
            for (opp, lo, hi) in curve.rows() {
                let mut row = point_cols(p).to_vec();
                row.extend([curve.class.as_str().to_string(), num(opp), num(lo), num(hi)]);
                br.row(&row)?;
            }
        }
    }
    t.finish()?;
    br.finish()
}

fn write_welfare(outcome: &ExperimentOutcome, dir: &Path, files: &mut Vec<String>) -> Result<()> {
    files.push("welfare_grid.csv".into());
    let mut t = Table::create(
        dir,
        "welfare_grid.csv",
        WELFARE_SCHEMA,
        &[
            "point",
            "r",
            "delta",
            "max_welfare",
            "argmax_pi_L",
            "argmax_pi_H",
            "argmax_cells",
            "matrix",
        ],
    )?;
    for p in &outcome.points {
        let Some(w) = &p.welfare else { continue };
        let best = w.best();
        let matrix = if outcome.config.solvers.welfare_matrix {
            let name = format!("welfare/point{}.csv", p.point.index);
            write_matrix(w, &dir.join(&name))?;
            files.push(name.clone());
            name
        } else {
            String::new()
        };
        let mut row = point_cols(p).to_vec();
        row.extend([
            num(w.max),
            num(best.pi_low),
            num(best.pi_high),
            w.argmax.len().to_string(),
            matrix,
        ]);
        t.row(&row)?;
    }
    t.finish()
}

/// Dense matrix: rows are low-risk strategies, columns high-risk ones.
fn write_matrix(w: &crate::analytic::WelfareGrid, path: &Path) -> Result<()> {
    let dir = path.parent().expect("matrix path has a parent");
    let name = path.file_name().expect("matrix path has a name").to_string_lossy();
    let values = w.grid.values();
    let mut header = vec!["pi_L\\pi_H".to_string()];
    header.extend(values.iter().map(|&v| num(v)));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::create(dir, &name, WELFARE_MATRIX_SCHEMA, &header_refs)?;
    for (i, &pl) in values.iter().enumerate() {
        let mut row = vec![num(pl)];
        row.extend((0..values.len()).map(|j| num(w.at(i, j))));
        t.row(&row)?;
    }
    t.finish()
}

fn write_audit(outcome: &ExperimentOutcome, dir: &Path) -> Result<()> {
    let mut t = Table::create(
        dir,
        "audit.csv",
        AUDIT_SCHEMA,
        &[
            "point",
            "r",
            "delta",
            "source",
            "run",
            "nash_index",
            "deviant",
            "class",
            "current",
            "proposed",
            "payoff_delta",
            "ci_half_width",
            "method",
        ],
    )?;
    for p in &outcome.points {
        let class_of = |i: usize| p.point.params.class_of(i);
        let mut emit = |source: &str, run: String, nash: String, a: &crate::analytic::AuditResult| {
            let mut row = point_cols(p).to_vec();
            row.extend([
                source.to_string(),
                run,
                nash,
                a.deviant.to_string(),
                class_of(a.deviant).as_str().to_string(),
                num(a.current),
                num(a.proposed),
                num(a.delta),
                num(a.ci_half_width),
                a.method.as_str().to_string(),
            ]);
            t.row(&row)
        };
        if let Some(n) = &p.nash {
            for (k, a) in &n.audits {
                emit("nash", String::new(), k.to_string(), a)?;
            }
        }
        for run in &p.runs {
            for a in &run.audits {
                emit("trained", run.seeds.run.to_string(), String::new(), a)?;
            }
        }
    }
    t.finish()
}

fn write_errors(outcome: &ExperimentOutcome, dir: &Path) -> Result<()> {
    let mut t = Table::create(dir, "errors.csv", ERRORS_SCHEMA, &["point", "run", "stage", "message"])?;
    for e in outcome.errors() {
        t.row(&[
            e.point.to_string(),
            e.run.map(|r| r.to_string()).unwrap_or_default(),
            e.stage.to_string(),
            e.message.clone(),
        ])?;
    }
    t.finish()
}
