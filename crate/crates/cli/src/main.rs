use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crd_core::analytic::{deviation_audit, AuditOptions, DEFAULT_AUDIT_SAMPLES};
use crd_core::evaluator::{evaluate, EvaluationConfig, Partition};
use crd_core::experiment::{self, ExperimentConfig, Preset, SweepAxis, SweepBlock};
use crd_core::learner::{load_population, save_population, train};
use crd_core::seeds::rng_from;
use crd_core::PayoffSpec;

#[derive(Parser)]
#[command(name = "crd", version, about = "Collective risk dilemma simulator and solvers")]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full experiment: train, evaluate, solve, audit.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Re-run the experiment recorded in a manifest instead of a config.
        #[arg(long, conflicts_with_all = ["config", "preset"])]
        manifest: Option<PathBuf>,
    },
    /// Train populations for every sweep point and run; write snapshots.
    Train {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Estimate the group achievement rate of a saved population.
    Evaluate {
        #[arg(long)]
        population: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        rollouts: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Draw one partition and keep it for every rollout.
        #[arg(long)]
        fixed_partition: bool,
    },
    /// Class-based Nash points and best-response curves.
    Nash {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Class-based welfare grid.
    Welfare {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Expected payoff change of single agents deviating in a saved population.
    Audit {
        #[arg(long)]
        population: PathBuf,
        /// Agent to audit; all agents when omitted.
        #[arg(long)]
        deviant: Option<usize>,
        #[arg(long, default_value_t = 0.0)]
        proposed: f64,
        #[arg(long, default_value_t = DEFAULT_AUDIT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Show the default experiment config.
    Defaults {
        #[arg(long, required = true)]
        print: bool,
        #[arg(long, value_parser = parse_preset)]
        preset: Option<Preset>,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_preset, conflicts_with = "config")]
    preset: Option<Preset>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replace the sweep with a single point at this mean risk (with --delta).
    #[arg(long)]
    risk: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Override the solver grid spacing.
    #[arg(long)]
    epsilon: Option<f64>,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: crd_core::CrdError| e.to_string())
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, self.preset) {
            (Some(path), _) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            (None, Some(p)) => ExperimentConfig::preset(p),
            (None, None) => experiment::defaults(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(eps) = self.epsilon {
            cfg.solvers.epsilon = eps;
        }
        if self.risk.is_some() || self.delta.is_some() {
            cfg.game.risk = self.risk.unwrap_or(cfg.game.risk);
            cfg.game.diversity = self.delta.unwrap_or(cfg.game.diversity);
            cfg.sweep = SweepBlock {
                axis: SweepAxis::Risk,
                values: vec![cfg.game.risk],
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> Result<PathBuf> {
        match self.out.clone().or_else(|| cfg.output_dir.clone()) {
            Some(d) => Ok(d),
            None => bail!("no output directory: pass --out or set output_dir in the config"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Returns `Ok(false)` when the command ran but some points failed.
fn run(command: Command) -> Result<bool> {
    match command {
        Command::Sweep { exp, manifest } => {
            let report = match manifest {
                Some(m) => {
                    let out = exp.out.clone().context("--out is required with --manifest")?;
                    experiment::run_from_manifest(&m, &out)?
                }
                None => {
                    let cfg = exp.resolve()?;
                    let out = exp.out_dir(&cfg)?;
                    experiment::run_config(&cfg, Some(&out))?
                }
            };
            print_summary(&report);
            Ok(!report.failed())
        }
        Command::Train { exp } => {
            let cfg = exp.resolve()?;
            let out = exp.out_dir(&cfg)?;
            train_only(&cfg, &out)
        }
        Command::Nash { exp } => solvers_only(&exp, true),
        Command::Welfare { exp } => solvers_only(&exp, false),
        Command::Evaluate {
            population,
            rollouts,
            seed,
            fixed_partition,
        } => {
            let pop = load_population(&population)?;
            let params = pop.provenance.game.build()?;
            let cfg = EvaluationConfig {
                rollouts,
                seed,
                partition: if fixed_partition {
                    Partition::Fixed
                } else {
                    Partition::Reshuffle
                },
            };
            let report = evaluate(&pop.cooperation, &pop.classes(), &params, &cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(true)
        }
        Command::Audit {
            population,
            deviant,
            proposed,
            samples,
            seed,
        } => {
            let pop = load_population(&population)?;
            let params = pop.provenance.game.build()?;
            let spec = PayoffSpec::log(&params);
            let ids: Vec<usize> = match deviant {
                Some(d) => vec![d],
                None => (0..pop.cooperation.len()).collect(),
            };
            println!("deviant,class,current,proposed,payoff_delta,ci_half_width,method");
            for id in ids {
                let opts = AuditOptions {
                    samples,
                    seed: crd_core::seeds::derive(seed, &[id as u64]),
                    ..AuditOptions::default()
                };
                let a = deviation_audit(&pop.cooperation, &params, &spec, id, proposed, &opts)?;
                println!(
                    "{},{},{},{},{},{},{}",
                    a.deviant,
                    params.class_of(id).as_str(),
                    a.current,
                    a.proposed,
                    a.delta,
                    a.ci_half_width,
                    a.method.as_str()
                );
            }
            Ok(true)
        }
        Command::Defaults { print: _, preset } => {
            let cfg = preset
                .map(ExperimentConfig::preset)
                .unwrap_or_else(experiment::defaults);
            println!("{}", cfg.to_json());
            Ok(true)
        }
    }
}

fn train_only(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    let points = cfg.validate()?;
    let dir = out.join("populations");
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut ok = true;
    for point in &points {
        let spec = PayoffSpec::log(&point.params);
        for run in 0..cfg.training.runs {
            let seeds = experiment::RunSeeds::derive(cfg.seed, point.index, run);
            let mut rng = rng_from(seeds.train_seed);
            match train(&point.params, &spec, &cfg.training.config(seeds.train_seed), &mut rng) {
                Ok(pop) => {
                    let path = dir.join(format!("point{}_run{}.csv", point.index, run));
                    save_population(&pop, &path)?;
                    println!(
                        "r={} delta={} run={} steps={} pi_L={:.4} pi_H={:.4} -> {}",
                        point.risk,
                        point.diversity,
                        run,
                        pop.provenance.realized_steps,
                        pop.class_mean(crd_core::RiskClass::Low),
                        pop.class_mean(crd_core::RiskClass::High),
                        path.display()
                    );
                }
                Err(e) => {
                    eprintln!("point {} run {run}: {e}", point.index);
                    ok = false;
                }
            }
        }
    }
    Ok(ok)
}

fn solvers_only(exp: &ExperimentArgs, nash: bool) -> Result<bool> {
    let mut cfg = exp.resolve()?;
    cfg.training.enabled = false;
    cfg.solvers.nash = nash;
    cfg.solvers.welfare = !nash;
    cfg.solvers.audit = nash && cfg.solvers.audit;
    let out = exp.out_dir(&cfg)?;
    let report = experiment::run_config(&cfg, Some(&out))?;
    print_summary(&report);
    Ok(!report.failed())
}

fn print_summary(report: &experiment::RunReport) {
    for p in &report.outcome.points {
        let mut line = format!("point {} r={} delta={}", p.point.index, p.point.risk, p.point.diversity);
        if let Some(a) = p.aggregate() {
            line += &format!(
                " eta={:.4}+-{:.4} pi_L={:.4} pi_H={:.4}",
                a.eta.mean, a.eta.std, a.mean_pi_low.mean, a.mean_pi_high.mean
            );
        }
        if let Some(n) = &p.nash {
            let pts: Vec<String> = n
                .points
                .iter()
                .map(|x| format!("({}, {})", x.profile.pi_low, x.profile.pi_high))
                .collect();
            line += &format!(" nash=[{}]", pts.join(" "));
        }
        if let Some(w) = &p.welfare {
            let b = w.best();
            line += &format!(" welfare_max={:.6} at ({}, {})", w.max, b.pi_low, b.pi_high);
        }
        println!("{line}");
    }
    for e in report.outcome.errors() {
        eprintln!("point {} run {:?} {}: {}", e.point, e.run, e.stage, e.message);
    }
    println!("wrote {}", report.output_dir.display());
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use crd_core::GameSettings;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn single_point_override() {
        let args = ExperimentArgs {
            config: None,
            preset: Some(Preset::Desk),
            out: None,
            seed: Some(9),
            risk: Some(0.3),
            delta: Some(0.2),
            epsilon: None,
        };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.sweep.values, vec![0.3]);
        assert_eq!(cfg.game.diversity, 0.2);
        assert_eq!(cfg.training.steps, 500_000);
    }

    #[test]
    fn invalid_override_is_rejected() {
        let args = ExperimentArgs {
            config: None,
            preset: None,
            out: None,
            seed: None,
            risk: Some(0.1),
            delta: Some(0.3),
            epsilon: None,
        };
        assert!(args.resolve().is_err());
    }

    #[test]
    fn default_game_settings_match_library() {
        assert_eq!(experiment::defaults().game, GameSettings::default());
    }
}
