//! Roth-Erev propensity learners trained by asynchronous random-group play.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CrdError, Result};
use crate::game::{resolve_group, Action, GameParams, GameSettings, GroupMember, PayoffSpec, RiskClass};

/// Propensities for (cooperate, defect).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Propensities(pub [f64; 2]);

impl Propensities {
    pub fn cooperate(&self) -> f64 {
        self.0[0]
    }

    pub fn defect(&self) -> f64 {
        self.0[1]
    }
}

/// Softmax over the two propensities, evaluated after subtracting the max.
///
/// Returns `(p(C), p(D))`. The larger entry is computed as the complement of
/// the smaller so the pair sums to one.
pub fn action_probabilities(q: Propensities) -> Result<(f64, f64)> {
    let [c, d] = q.0;
    if !(c.is_finite() && d.is_finite()) {
        return Err(CrdError::NonFinite(c, d));
    }
    // p(C) = 1 / (1 + exp(d - c)), and symmetrically for the other side.
    if c >= d {
        let pd = 1.0 / (1.0 + (c - d).exp());
        Ok((1.0 - pd, pd))
    } else {
        let pc = 1.0 / (1.0 + (d - c).exp());
        Ok((pc, 1.0 - pc))
    }
}

/// One Roth-Erev step: every propensity decays by `1 - phi` and the chosen
/// action's propensity accrues the payoff.
pub fn update_propensities(q: Propensities, chosen: Action, payoff: f64, phi: f64) -> Propensities {
    let mut next = [(1.0 - phi) * q.0[0], (1.0 - phi) * q.0[1]];
    next[chosen.index()] += payoff;
    Propensities(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: usize,
    pub class: RiskClass,
    pub q: Propensities,
    pub updates: u64,
}

impl Agent {
    pub fn cooperation_probability(&self) -> Result<f64> {
        action_probabilities(self.q).map(|(c, _)| c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    /// Total update steps `K`.
    pub steps: u64,
    /// Minimum updates every agent must reach before training stops.
    pub min_updates: u64,
    /// Forgetting parameter.
    pub phi: f64,
    pub runs: u32,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            steps: 2_500_000,
            min_updates: 30_000,
            phi: 0.001,
            runs: 5,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.phi > 0.0 && self.phi < 1.0) {
            return Err(CrdError::invalid(
                "training.phi",
                format!("{} is not in (0, 1)", self.phi),
            ));
        }
        if self.runs == 0 {
            return Err(CrdError::invalid("training.runs", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub game: GameSettings,
    pub training: TrainingConfig,
    pub seed: u64,
    pub realized_steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPopulation {
    pub agents: Vec<Agent>,
    /// Final cooperation probability of each agent, read from its propensities.
    pub cooperation: Vec<f64>,
    pub provenance: Provenance,
}

impl TrainedPopulation {
    pub fn classes(&self) -> Vec<RiskClass> {
        self.agents.iter().map(|a| a.class).collect()
    }

    pub fn class_mean(&self, class: RiskClass) -> f64 {
        class_mean(&self.cooperation, &self.classes(), class)
    }
}

pub(crate) fn class_mean(values: &[f64], classes: &[RiskClass], class: RiskClass) -> f64 {
    let (sum, n) = values
        .iter()
        .zip(classes)
        .filter(|(_, c)| **c == class)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Creates `Z` agents with standard-normal propensities, low-risk ids first.
pub fn init_population<R: Rng + ?Sized>(params: &GameParams, rng: &mut R) -> Vec<Agent> {
    (0..params.population_size())
        .map(|id| {
            let c: f64 = rng.sample(StandardNormal);
            let d: f64 = rng.sample(StandardNormal);
            Agent {
                id,
                class: params.class_of(id),
                q: Propensities([c, d]),
                updates: 0,
            }
        })
        .collect()
}

/// Called with the realized step count and the agents at a checkpoint.
pub trait TrainingObserver {
    fn checkpoint(&mut self, step: u64, agents: &[Agent]);
}

impl<F: FnMut(u64, &[Agent])> TrainingObserver for F {
    fn checkpoint(&mut self, step: u64, agents: &[Agent]) {
        self(step, agents)
    }
}

pub fn train<R: Rng + ?Sized>(
    params: &GameParams,
    spec: &PayoffSpec,
    cfg: &TrainingConfig,
    rng: &mut R,
) -> Result<TrainedPopulation> {
    train_observed(params, spec, cfg, rng, 0, &mut |_: u64, _: &[Agent]| {})
}

/// Trains a population, calling `observer` at step 0, every `every` steps
/// (when nonzero) and once at the end.
///
/// Each step draws `N` distinct agents uniformly, lets each sample an action
/// from its softmax policy, resolves the group and applies the update rule to
/// every member. Training runs for `cfg.steps` steps and then keeps going
/// with the same sampling until every agent has at least `cfg.min_updates`
/// updates.
pub fn train_observed<R: Rng + ?Sized, O: TrainingObserver + ?Sized>(
    params: &GameParams,
    spec: &PayoffSpec,
    cfg: &TrainingConfig,
    rng: &mut R,
    every: u64,
    observer: &mut O,
) -> Result<TrainedPopulation> {
    cfg.validate()?;
    let z = params.population_size();
    let n = params.group_size();
    if z < n {
        return Err(CrdError::PopulationTooSmall {
            population: z,
            group: n,
        });
    }

    let mut agents = init_population(params, rng);
    observer.checkpoint(0, &agents);

    let mut below_min = if cfg.min_updates > 0 { z } else { 0 };
    let mut step = 0u64;
    let mut group = Vec::with_capacity(n);
    while step < cfg.steps || below_min > 0 {
        group.clear();
        for id in index::sample(rng, z, n) {
            let a = &agents[id];
            let (p_coop, _) = action_probabilities(a.q)?;
            let action = if rng.random::<f64>() < p_coop {
                Action::Cooperate
            } else {
                Action::Defect
            };
            group.push(GroupMember {
                agent: id,
                action,
                class: a.class,
            });
        }
        let outcome = resolve_group(params, spec, &group, rng)?;
        for m in &outcome.members {
            let a = &mut agents[m.agent];
            a.q = update_propensities(a.q, m.action, m.payoff, cfg.phi);
            a.updates += 1;
            if a.updates == cfg.min_updates {
                below_min -= 1;
            }
        }
        step += 1;
        if every > 0 && step.is_multiple_of(every) {
            observer.checkpoint(step, &agents);
        }
    }
    if every == 0 || !step.is_multiple_of(every) {
        observer.checkpoint(step, &agents);
    }

    let cooperation = agents
        .iter()
        .map(Agent::cooperation_probability)
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainedPopulation {
        agents,
        cooperation,
        provenance: Provenance {
            game: *params.settings(),
            training: *cfg,
            seed: cfg.seed,
            realized_steps: step,
        },
    })
}

pub const POPULATION_SCHEMA: &str = "crd.population.v1";

#[derive(Debug, Serialize, Deserialize)]
struct AgentRow {
    id: usize,
    class: RiskClass,
    q_c: f64,
    q_d: f64,
    pi: f64,
    updates: u64,
}

/// Writes a population snapshot: `#`-prefixed header lines carrying the
/// schema id and provenance, then one CSV row per agent.
pub fn write_population<W: Write>(pop: &TrainedPopulation, mut out: W) -> Result<()> {
    let p = &pop.provenance;
    let io = |e| CrdError::io("<population>", e);
    writeln!(out, "# schema: {POPULATION_SCHEMA}").map_err(io)?;
    writeln!(out, "# game: {}", serde_json::to_string(&p.game)?).map_err(io)?;
    writeln!(out, "# training: {}", serde_json::to_string(&p.training)?).map_err(io)?;
    writeln!(out, "# seed: {}", p.seed).map_err(io)?;
    writeln!(out, "# realized_steps: {}", p.realized_steps).map_err(io)?;
    let mut w = csv::Writer::from_writer(out);
    for (a, &pi) in pop.agents.iter().zip(&pop.cooperation) {
        w.serialize(AgentRow {
            id: a.id,
            class: a.class,
            q_c: a.q.cooperate(),
            q_d: a.q.defect(),
            pi,
            updates: a.updates,
        })?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn save_population(pop: &TrainedPopulation, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| CrdError::io(path, e))?;
    write_population(pop, std::io::BufWriter::new(f))
}

pub fn load_population(path: &Path) -> Result<TrainedPopulation> {
    let text = std::fs::read_to_string(path).map_err(|e| CrdError::io(path, e))?;
    read_population(text.as_bytes()).map_err(|e| match e {
        CrdError::Format { reason, .. } => CrdError::Format {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    })
}

pub fn read_population<R: std::io::Read>(input: R) -> Result<TrainedPopulation> {
    let bad = |reason: String| CrdError::Format {
        path: "<population>".into(),
        reason,
    };
    let mut reader = BufReader::new(input);
    let mut header = std::collections::HashMap::new();
    let mut body = String::new();
    let mut line = String::new();
    loop {
        line.clear();
        let read = reader
            .read_line(&mut line)
            .map_err(|e| CrdError::io("<population>", e))?;
        if read == 0 {
            break;
        }
        match line.strip_prefix("# ") {
            Some(rest) => {
                let (k, v) = rest
                    .trim_end()
                    .split_once(": ")
                    .ok_or_else(|| bad(format!("bad header line `{}`", line.trim_end())))?;
                header.insert(k.to_string(), v.to_string());
            }
            None => body.push_str(&line),
        }
    }
    let get = |k: &str| header.get(k).ok_or_else(|| bad(format!("missing header `{k}`")));
    if get("schema")? != POPULATION_SCHEMA {
        return Err(bad(format!("schema `{}` is not {POPULATION_SCHEMA}", get("schema")?)));
    }
    let game: GameSettings = serde_json::from_str(get("game")?)?;
    let training: TrainingConfig = serde_json::from_str(get("training")?)?;
    let seed = get("seed")?.parse().map_err(|e| bad(format!("seed: {e}")))?;
    let realized_steps = get("realized_steps")?
        .parse()
        .map_err(|e| bad(format!("realized_steps: {e}")))?;

    let mut agents = Vec::new();
    let mut cooperation = Vec::new();
    for row in csv::Reader::from_reader(body.as_bytes()).deserialize() {
        let row: AgentRow = row?;
        agents.push(Agent {
            id: row.id,
            class: row.class,
            q: Propensities([row.q_c, row.q_d]),
            updates: row.updates,
        });
        cooperation.push(row.pi);
    }
    Ok(TrainedPopulation {
        agents,
        cooperation,
        provenance: Provenance {
            game,
            training,
            seed,
            realized_steps,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng_from;

    fn params(risk: f64, diversity: f64) -> GameParams {
        GameSettings {
            risk,
            diversity,
            ..GameSettings::default()
        }
        .build()
        .unwrap()
    }

    fn small_cfg(steps: u64, min_updates: u64, seed: u64) -> TrainingConfig {
        TrainingConfig {
            steps,
            min_updates,
            phi: 0.001,
            runs: 1,
            seed,
        }
    }

    #[test]
    fn softmax_values() {
        assert_eq!(action_probabilities(Propensities([0.0, 0.0])).unwrap(), (0.5, 0.5));
        let (c, d) = action_probabilities(Propensities([3f64.ln(), 0.0])).unwrap();
        assert!((c - 0.75).abs() < 1e-15 && (d - 0.25).abs() < 1e-15);
        let (c, d) = action_probabilities(Propensities([-400.0, -390.0])).unwrap();
        assert_eq!(c + d, 1.0);
        assert!(c < d);
        assert!(action_probabilities(Propensities([f64::NAN, 0.0])).is_err());
        assert!(action_probabilities(Propensities([0.0, f64::INFINITY])).is_err());
    }

    #[test]
    fn update_rule_examples() {
        let q = update_propensities(Propensities([1.0, 1.0]), Action::Cooperate, 0.0, 0.001);
        assert_eq!(q, Propensities([0.999, 0.999]));
        let x = 0.9f64.ln();
        let q = update_propensities(Propensities([0.0, 0.0]), Action::Cooperate, x, 0.001);
        assert_eq!(q, Propensities([x, 0.0]));
        assert!((q.cooperate() - (-0.105_361)).abs() < 1e-6);
        let q = update_propensities(Propensities([5.0, -7.0]), Action::Defect, -0.3, 1.0);
        assert_eq!(q, Propensities([0.0, -0.3]));
    }

    #[test]
    fn decay_fixed_point() {
        let phi = 0.001;
        let x = 0.3f64.ln();
        let mut q = Propensities([0.0, 0.0]);
        for _ in 0..(10.0 / phi) as usize {
            q = update_propensities(q, Action::Defect, x, phi);
        }
        let target = x / phi;
        assert!(((q.defect() - target) / target).abs() < 0.01);
    }

    #[test]
    fn init_is_deterministic_and_centered() {
        let p = params(0.5, 0.1);
        let a = init_population(&p, &mut rng_from(9));
        let b = init_population(&p, &mut rng_from(9));
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|x| x.class == RiskClass::High).count(), 100);

        let big = GameSettings {
            population_size: 10_000,
            ..GameSettings::default()
        }
        .build()
        .unwrap();
        let pop = init_population(&big, &mut rng_from(10));
        let entries = pop.iter().flat_map(|a| a.q.0).collect::<Vec<_>>();
        let mean = entries.iter().sum::<f64>() / entries.len() as f64;
        assert!(mean.abs() < 3.0 / (2.0 * 10_000f64).sqrt(), "{mean}");
    }

    #[test]
    fn zero_steps_leaves_initial_policy() {
        let p = params(0.5, 0.1);
        let cfg = small_cfg(0, 0, 3);
        let pop = train(&p, &PayoffSpec::log(&p), &cfg, &mut rng_from(3)).unwrap();
        let init = init_population(&p, &mut rng_from(3));
        assert_eq!(pop.provenance.realized_steps, 0);
        for (a, (b, pi)) in init.iter().zip(pop.agents.iter().zip(&pop.cooperation)) {
            assert_eq!(a.q, b.q);
            assert_eq!(*pi, action_probabilities(a.q).unwrap().0);
        }
    }

    #[test]
    fn update_accounting_and_top_up() {
        let p = params(0.5, 0.1);
        let cfg = small_cfg(2_000, 100, 4);
        let pop = train(&p, &PayoffSpec::log(&p), &cfg, &mut rng_from(4)).unwrap();
        let total: u64 = pop.agents.iter().map(|a| a.updates).sum();
        assert_eq!(total, 6 * pop.provenance.realized_steps);
        assert!(pop.agents.iter().all(|a| a.updates >= 100));
        assert!(pop.provenance.realized_steps >= 2_000);
    }

    #[test]
    fn propensities_respect_geometric_bound() {
        let p = params(0.3, 0.1);
        let spec = PayoffSpec::log(&p);
        let cfg = small_cfg(20_000, 0, 5);
        let bound = spec.max_magnitude() / cfg.phi;
        let mut initial: Vec<Propensities> = Vec::new();
        let mut checks = 0;
        let mut obs = |_step: u64, agents: &[Agent]| {
            if initial.is_empty() {
                initial = agents.iter().map(|a| a.q).collect();
            }
            for (a, q0) in agents.iter().zip(&initial) {
                let decay = (1.0 - cfg.phi).powi(a.updates as i32);
                for k in 0..2 {
                    assert!(a.q.0[k].abs() <= q0.0[k].abs() * decay + bound + 1e-9);
                }
            }
            checks += 1;
        };
        train_observed(&p, &spec, &cfg, &mut rng_from(5), 2_000, &mut obs).unwrap();
        assert_eq!(checks, 11);
    }

    #[test]
    fn snapshot_round_trip() {
        let p = params(0.5, 0.1);
        let cfg = small_cfg(500, 0, 6);
        let pop = train(&p, &PayoffSpec::log(&p), &cfg, &mut rng_from(6)).unwrap();
        let mut buf = Vec::new();
        write_population(&pop, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# schema: crd.population.v1\n"));
        assert!(text.contains("id,class,q_c,q_d,pi,updates"));
        let back = read_population(buf.as_slice()).unwrap();
        assert_eq!(back, pop);
    }

    #[test]
    fn snapshot_rejects_wrong_schema() {
        let text = "# schema: other\n# game: {}\n";
        assert!(matches!(read_population(text.as_bytes()), Err(CrdError::Format { .. })));
    }
}
