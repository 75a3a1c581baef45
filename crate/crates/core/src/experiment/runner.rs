use rayon::prelude::*;

use super::config::{ExperimentConfig, SweepPoint};
use crate::analytic::{
    deviation_audit, refine_nash, AuditOptions, AuditResult, BestResponseCurve, NashPoint, PayoffSurface, WelfareGrid,
};
use crate::error::Result;
use crate::evaluator::{aggregate_runs, evaluate, AggregateReport, EvaluationReport};
use crate::game::{GameParams, PayoffSpec, RiskClass};
use crate::learner::{train, TrainedPopulation};
use crate::seeds::{derive, rng_from, STREAM_AUDIT, STREAM_EVAL, STREAM_TRAIN};

/// Counter used in place of a run index for per-point solver streams.
const SOLVER_RUN: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RunSeeds {
    pub point: usize,
    pub run: u32,
    pub run_seed: u64,
    pub train_seed: u64,
    pub eval_seed: u64,
}

impl RunSeeds {
    pub fn derive(master: u64, point: usize, run: u32) -> Self {
        let run_seed = derive(master, &[point as u64, run as u64]);
        RunSeeds {
            point,
            run,
            run_seed,
            train_seed: derive(run_seed, &[STREAM_TRAIN]),
            eval_seed: derive(run_seed, &[STREAM_EVAL]),
        }
    }

    fn audit_seed(&self, deviant: usize) -> u64 {
        derive(self.run_seed, &[STREAM_AUDIT, deviant as u64])
    }
}

pub fn solver_seed(master: u64, point: usize) -> u64 {
    derive(master, &[point as u64, SOLVER_RUN])
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seeds: RunSeeds,
    pub population: TrainedPopulation,
    pub report: EvaluationReport,
    pub audits: Vec<AuditResult>,
}

#[derive(Debug, Clone)]
pub struct NashOutcome {
    pub points: Vec<NashPoint>,
    pub low: BestResponseCurve,
    pub high: BestResponseCurve,
    /// Deviation to defection by one member of each class, per Nash point.
    pub audits: Vec<(usize, AuditResult)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointError {
    pub point: usize,
    pub run: Option<u32>,
    pub stage: &'static str,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct PointOutcome {
    pub point: SweepPoint,
    pub runs: Vec<RunOutcome>,
    pub nash: Option<NashOutcome>,
    pub welfare: Option<WelfareGrid>,
    pub errors: Vec<PointError>,
}

impl PointOutcome {
    pub fn aggregate(&self) -> Option<AggregateReport> {
        let reports: Vec<EvaluationReport> = self.runs.iter().map(|r| r.report).collect();
        aggregate_runs(&reports).ok()
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub points: Vec<PointOutcome>,
}

impl ExperimentOutcome {
    pub fn errors(&self) -> impl Iterator<Item = &PointError> {
        self.points.iter().flat_map(|p| p.errors.iter())
    }

    pub fn failed(&self) -> bool {
        self.errors().next().is_some()
    }
}

/// Runs every sweep point and run in memory. Validation failures abort
/// before any work; failures inside a point are recorded on that point.
pub fn execute(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let points = config.validate()?;
    let runs = if config.training.enabled {
        config.training.runs
    } else {
        0
    };
    let jobs: Vec<(usize, u32)> = (0..points.len()).flat_map(|p| (0..runs).map(move |r| (p, r))).collect();

    let trained: Vec<(usize, u32, Result<RunOutcome>)> = jobs
        .par_iter()
        .map(|&(p, r)| (p, r, run_one(config, &points[p], r)))
        .collect();

    let mut outcomes: Vec<PointOutcome> = points
        .into_par_iter()
        .map(|point| {
            let mut errors = Vec::new();
            let grid = config.grid();
            let nash = match (&grid, config.solvers.nash) {
                (Ok(g), true) => match solve_nash(config, &point, *g) {
                    Ok(n) => Some(n),
                    Err(e) => {
                        errors.push(PointError {
                            point: point.index,
                            run: None,
                            stage: "nash",
                            message: e.to_string(),
                        });
                        None
                    }
                },
                _ => None,
            };
            let welfare = match (&grid, config.solvers.welfare) {
                (Ok(g), true) => Some(crate::analytic::welfare_grid(&point.params, *g)),
                _ => None,
            };
            PointOutcome {
                point,
                runs: Vec::new(),
                nash,
                welfare,
                errors,
            }
        })
        .collect();

    for (p, r, res) in trained {
        match res {
            Ok(run) => outcomes[p].runs.push(run),
            Err(e) => outcomes[p].errors.push(PointError {
                point: p,
                run: Some(r),
                stage: "train",
                message: e.to_string(),
            }),
        }
    }
    Ok(ExperimentOutcome {
        config: config.clone(),
        points: outcomes,
    })
}

fn run_one(config: &ExperimentConfig, point: &SweepPoint, run: u32) -> Result<RunOutcome> {
    let seeds = RunSeeds::derive(config.seed, point.index, run);
    let params = &point.params;
    let spec = PayoffSpec::log(params);
    let mut rng = rng_from(seeds.train_seed);
    let population = train(params, &spec, &config.training.config(seeds.train_seed), &mut rng)?;
    let classes = population.classes();
    let report = evaluate(
        &population.cooperation,
        &classes,
        params,
        &config.evaluation.config(seeds.eval_seed),
    )?;

    let mut audits = Vec::new();
    if config.solvers.audit {
        for deviant in audited_agents(params, config.solvers.audit_agents_per_class) {
            let opts = AuditOptions {
                samples: config.solvers.audit_samples,
                seed: seeds.audit_seed(deviant),
                ..AuditOptions::default()
            };
            audits.push(deviation_audit(
                &population.cooperation,
                params,
                &spec,
                deviant,
                0.0,
                &opts,
            )?);
        }
    }
    Ok(RunOutcome {
        seeds,
        population,
        report,
        audits,
    })
}

/// The lowest `per_class` ids of each class.
fn audited_agents(params: &GameParams, per_class: usize) -> Vec<usize> {
    let low = params.class_size(RiskClass::Low);
    let z = params.population_size();
    (0..low.min(per_class)).chain(low..z.min(low + per_class)).collect()
}

fn solve_nash(config: &ExperimentConfig, point: &SweepPoint, grid: crate::analytic::GridSpec) -> Result<NashOutcome> {
    let params = &point.params;
    let spec = PayoffSpec::log(params);
    let surface = PayoffSurface::compute(params, &spec, grid);
    let points: Vec<NashPoint> = surface
        .nash_points()
        .into_iter()
        .map(|mut p| {
            p.refined = refine_nash(params, &spec, grid, &p);
            p
        })
        .collect();

    let mut audits = Vec::new();
    if config.solvers.audit {
        let seed = solver_seed(config.seed, point.index);
        let firsts = [0, params.class_size(RiskClass::Low)];
        for (k, nash) in points.iter().enumerate() {
            let strategies: Vec<f64> = (0..params.population_size())
                .map(|i| nash.profile.of(params.class_of(i)))
                .collect();
            for &deviant in &firsts {
                let opts = AuditOptions {
                    samples: config.solvers.audit_samples,
                    seed: derive(seed, &[STREAM_AUDIT, k as u64, deviant as u64]),
                    ..AuditOptions::default()
                };
                audits.push((k, deviation_audit(&strategies, params, &spec, deviant, 0.0, &opts)?));
            }
        }
    }
    Ok(NashOutcome {
        low: surface.best_response(RiskClass::Low),
        high: surface.best_response(RiskClass::High),
        points,
        audits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::config::{defaults, SweepAxis, SweepBlock};

    fn small() -> ExperimentConfig {
        let mut c = defaults();
        c.training.steps = 3_000;
        c.training.min_updates = 20;
        c.training.runs = 2;
        c.evaluation.rollouts = 500;
        c.solvers.epsilon = 0.05;
        c.solvers.audit_samples = 200;
        c.solvers.audit_agents_per_class = 2;
        c.sweep = SweepBlock {
            axis: SweepAxis::Diversity,
            values: vec![0.0, 0.2],
        };
        c
    }

    #[test]
    fn seeds_depend_only_on_their_path() {
        let a = RunSeeds::derive(7, 1, 2);
        assert_eq!(a, RunSeeds::derive(7, 1, 2));
        assert_ne!(a.run_seed, RunSeeds::derive(7, 2, 1).run_seed);
        assert_ne!(a.train_seed, a.eval_seed);
    }

    #[test]
    fn small_experiment_fills_every_point() {
        let out = execute(&small()).unwrap();
        assert!(!out.failed());
        assert_eq!(out.points.len(), 2);
        for p in &out.points {
            assert_eq!(p.runs.len(), 2);
            assert!(p.runs.iter().all(|r| r.population.provenance.realized_steps >= 3_000));
            assert_eq!(p.runs[0].audits.len(), 4);
            assert!(p.nash.is_some());
            assert!(p.welfare.is_some());
            assert_eq!(p.aggregate().unwrap().runs, 2);
        }
    }

    #[test]
    fn solvers_only() {
        let mut c = small();
        c.training.enabled = false;
        c.solvers.audit = false;
        c.sweep.values = vec![0.1];
        let out = execute(&c).unwrap();
        assert!(out.points[0].runs.is_empty());
        assert!(out.points[0].nash.is_some());
    }

    #[test]
    fn audited_agent_ids() {
        let p = crate::GameSettings::default().build().unwrap();
        assert_eq!(audited_agents(&p, 2), vec![0, 1, 100, 101]);
        assert_eq!(audited_agents(&p, 500).len(), 200);
    }
}
