//! Monte Carlo evaluation of a population: group achievement rate and
//! per-class payoff estimates.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::StrategyProfile;
use crate::error::{CrdError, Result};
use crate::game::{resolve_group, Action, GameParams, GroupMember, PayoffSpec, RiskClass};
use crate::learner::class_mean;
use crate::seeds::{rng_at, rng_from};

/// Rollouts per independently seeded block.
const BLOCK: u64 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    /// A fresh uniform permutation every rollout.
    Reshuffle,
    /// One permutation drawn once and reused by every rollout.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub rollouts: u64,
    pub seed: u64,
    pub partition: Partition,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            rollouts: 1_000_000,
            seed: 0,
            partition: Partition::Reshuffle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Mean fraction of groups reaching the threshold.
    pub eta: f64,
    pub eta_stderr: f64,
    pub mean_pi_low: f64,
    pub mean_pi_high: f64,
    pub rollouts: u64,
}

/// Estimates the group achievement rate of a population.
///
/// Each rollout splits the population into `floor(Z / N)` disjoint groups;
/// the `Z mod N` agents left over sit that rollout out. Every agent then
/// cooperates with its own probability and the rollout scores the fraction
/// of groups with at least `M` cooperators. No disasters are drawn.
pub fn evaluate(
    strategies: &[f64],
    classes: &[RiskClass],
    params: &GameParams,
    cfg: &EvaluationConfig,
) -> Result<EvaluationReport> {
    let z = strategies.len();
    let n = params.group_size();
    if z < n {
        return Err(CrdError::PopulationTooSmall {
            population: z,
            group: n,
        });
    }
    if classes.len() != z {
        return Err(CrdError::CountOutOfRange(format!(
            "{} classes for {z} agents",
            classes.len()
        )));
    }
    if cfg.rollouts == 0 {
        return Err(CrdError::invalid("evaluation.rollouts", "must be at least 1"));
    }
    if let Some(bad) = strategies.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(CrdError::invalid("strategy", format!("{bad} is not in [0, 1]")));
    }

    let groups = z / n;
    let seated = groups * n;
    let m = params.min_cooperators();
    let fixed: Option<Vec<usize>> = match cfg.partition {
        Partition::Reshuffle => None,
        Partition::Fixed => {
            let mut perm: Vec<usize> = (0..z).collect();
            perm.shuffle(&mut rng_at(cfg.seed, &[u64::MAX]));
            Some(perm)
        }
    };

    let blocks = cfg.rollouts.div_ceil(BLOCK);
    let sums: Vec<(f64, f64)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_at(cfg.seed, &[b]);
            let mut perm: Vec<usize> = fixed.clone().unwrap_or_else(|| (0..z).collect());
            let count = BLOCK.min(cfg.rollouts - b * BLOCK);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                if fixed.is_none() {
                    perm.partial_shuffle(&mut rng, seated);
                }
                let mut met = 0usize;
                for group in perm[..seated].chunks_exact(n) {
                    let coop = group.iter().filter(|&&i| rng.random::<f64>() < strategies[i]).count();
                    if coop >= m {
                        met += 1;
                    }
                }
                let v = met as f64 / groups as f64;
                s += v;
                s2 += v * v;
            }
            (s, s2)
        })
        .collect();
    let (sum, sum_sq) = sums.iter().fold((0.0, 0.0), |(a, b), (s, s2)| (a + s, b + s2));
    let r = cfg.rollouts as f64;
    let eta = sum / r;
    let eta_stderr = if cfg.rollouts > 1 {
        (((sum_sq - r * eta * eta) / (r - 1.0)).max(0.0) / r).sqrt()
    } else {
        0.0
    };
    Ok(EvaluationReport {
        eta,
        eta_stderr,
        mean_pi_low: class_mean(strategies, classes, RiskClass::Low),
        mean_pi_high: class_mean(strategies, classes, RiskClass::High),
        rollouts: cfg.rollouts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation across runs.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs: usize,
    pub eta: MeanStd,
    pub eta_stderr: MeanStd,
    pub mean_pi_low: MeanStd,
    pub mean_pi_high: MeanStd,
}

pub fn aggregate_runs(reports: &[EvaluationReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(CrdError::CountOutOfRange("no reports to aggregate".into()));
    }
    Ok(AggregateReport {
        runs: reports.len(),
        eta: MeanStd::of(reports.iter().map(|r| r.eta)),
        eta_stderr: MeanStd::of(reports.iter().map(|r| r.eta_stderr)),
        mean_pi_low: MeanStd::of(reports.iter().map(|r| r.mean_pi_low)),
        mean_pi_high: MeanStd::of(reports.iter().map(|r| r.mean_pi_high)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayoffEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: u64,
}

/// Monte Carlo estimate of a class member's expected payoff when every agent
/// plays its class strategy, disasters included.
///
/// Each sample picks a focal agent uniformly from `class`, draws `N - 1`
/// group-mates uniformly from the rest of the population, plays one round
/// and records the focal agent's payoff.
pub fn estimate_class_payoff(
    params: &GameParams,
    spec: &PayoffSpec,
    profile: &StrategyProfile,
    class: RiskClass,
    samples: u64,
    seed: u64,
) -> Result<PayoffEstimate> {
    if samples < 2 {
        return Err(CrdError::invalid("samples", "need at least 2"));
    }
    let z = params.population_size();
    let n = params.group_size();
    let first = match class {
        RiskClass::Low => 0,
        RiskClass::High => params.class_size(RiskClass::Low),
    };
    let size = params.class_size(class);
    let blocks = samples.div_ceil(BLOCK);
    let sums: Vec<Result<(f64, f64)>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_from(crate::seeds::derive(seed, &[b]));
            let count = BLOCK.min(samples - b * BLOCK);
            let (mut s, mut s2) = (0.0, 0.0);
            let mut members = Vec::with_capacity(n);
            for _ in 0..count {
                let focal = first + rng.random_range(0..size);
                members.clear();
                members.push(focal);
                members.extend(index::sample(&mut rng, z - 1, n - 1).into_iter().map(|i| {
                    if i >= focal {
                        i + 1
                    } else {
                        i
                    }
                }));
                let group: Vec<GroupMember> = members
                    .iter()
                    .map(|&agent| {
                        let c = params.class_of(agent);
                        let action = if rng.random::<f64>() < profile.of(c) {
                            Action::Cooperate
                        } else {
                            Action::Defect
                        };
                        GroupMember {
                            agent,
                            action,
                            class: c,
                        }
                    })
                    .collect();
                let out = resolve_group(params, spec, &group, &mut rng)?;
                let x = out.members[0].payoff;
                s += x;
                s2 += x * x;
            }
            Ok((s, s2))
        })
        .collect();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for r in sums {
        let (s, s2) = r?;
        sum += s;
        sum_sq += s2;
    }
    let k = samples as f64;
    let mean = sum / k;
    let var = ((sum_sq - k * mean * mean) / (k - 1.0)).max(0.0);
    Ok(PayoffEstimate {
        mean,
        stderr: (var / k).sqrt(),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::GameSettings;

    fn params() -> GameParams {
        GameSettings::default().build().unwrap()
    }

    fn cfg(rollouts: u64, seed: u64) -> EvaluationConfig {
        EvaluationConfig {
            rollouts,
            seed,
            partition: Partition::Reshuffle,
        }
    }

    #[test]
    fn certain_outcomes() {
        let p = params();
        let classes = p.classes();
        let all = evaluate(&vec![1.0; 200], &classes, &p, &cfg(500, 1)).unwrap();
        assert_eq!(all.eta, 1.0);
        assert_eq!(all.eta_stderr, 0.0);
        let none = evaluate(&vec![0.0; 200], &classes, &p, &cfg(500, 1)).unwrap();
        assert_eq!(none.eta, 0.0);
    }

    #[test]
    fn class_means_are_exact() {
        let p = params();
        let s: Vec<f64> = (0..200).map(|i| i as f64 / 199.0).collect();
        let r = evaluate(&s, &p.classes(), &p, &cfg(10, 2)).unwrap();
        let low = s[..100].iter().sum::<f64>() / 100.0;
        let high = s[100..].iter().sum::<f64>() / 100.0;
        assert_eq!(r.mean_pi_low, low);
        assert_eq!(r.mean_pi_high, high);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let p = params();
        let s: Vec<f64> = (0..200).map(|i| ((i * 37) % 100) as f64 / 100.0).collect();
        let classes = p.classes();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| evaluate(&s, &classes, &p, &cfg(5000, 3)).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn stderr_halves_with_four_times_the_rollouts() {
        let p = params();
        let s = vec![0.5; 200];
        let a = evaluate(&s, &p.classes(), &p, &cfg(20_000, 4)).unwrap();
        let b = evaluate(&s, &p.classes(), &p, &cfg(80_000, 5)).unwrap();
        let ratio = a.eta_stderr / b.eta_stderr;
        assert!((ratio - 2.0).abs() < 0.4, "{ratio}");
    }

    #[test]
    fn fixed_partition_is_supported() {
        let p = params();
        let r = evaluate(
            &vec![0.5; 200],
            &p.classes(),
            &p,
            &EvaluationConfig {
                rollouts: 20_000,
                seed: 6,
                partition: Partition::Fixed,
            },
        )
        .unwrap();
        assert!((r.eta - 42.0 / 64.0).abs() < 4.0 * r.eta_stderr);
    }

    #[test]
    fn aggregation() {
        let rep = |eta| EvaluationReport {
            eta,
            eta_stderr: 0.01,
            mean_pi_low: 0.3,
            mean_pi_high: 0.6,
            rollouts: 1,
        };
        let one = aggregate_runs(&[rep(0.7)]).unwrap();
        assert_eq!(one.eta, MeanStd { mean: 0.7, std: 0.0 });
        let same = aggregate_runs(&[rep(0.2), rep(0.2), rep(0.2)]).unwrap();
        assert!(same.eta.std < 1e-15);
        let two = aggregate_runs(&[rep(0.4), rep(0.6)]).unwrap();
        assert!((two.eta.mean - 0.5).abs() < 1e-15);
        assert!((two.eta.std - 0.1).abs() < 1e-15);
        assert!(aggregate_runs(&[]).is_err());
    }

    #[test]
    fn too_small_population_is_rejected() {
        let p = params();
        assert!(matches!(
            evaluate(&[0.5; 5], &[RiskClass::Low; 5], &p, &cfg(10, 0)),
            Err(CrdError::PopulationTooSmall { .. })
        ));
    }
}
