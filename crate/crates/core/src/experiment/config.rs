use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytic::{GridSpec, DEFAULT_AUDIT_SAMPLES};
use crate::error::{CrdError, Result};
use crate::evaluator::{EvaluationConfig, Partition};
use crate::game::{GameParams, GameSettings};
use crate::learner::TrainingConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "r")]
    Risk,
    #[serde(rename = "delta")]
    Diversity,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Risk => "r",
            SweepAxis::Diversity => "delta",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingBlock {
    pub enabled: bool,
    pub steps: u64,
    pub min_updates: u64,
    pub phi: f64,
    pub runs: u32,
}

impl TrainingBlock {
    pub fn config(&self, seed: u64) -> TrainingConfig {
        TrainingConfig {
            steps: self.steps,
            min_updates: self.min_updates,
            phi: self.phi,
            runs: self.runs,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationBlock {
    pub rollouts: u64,
    pub partition: Partition,
}

impl EvaluationBlock {
    pub fn config(&self, seed: u64) -> EvaluationConfig {
        EvaluationConfig {
            rollouts: self.rollouts,
            seed,
            partition: self.partition,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolversBlock {
    pub nash: bool,
    pub welfare: bool,
    pub audit: bool,
    /// Grid spacing for the Nash and welfare solvers.
    pub epsilon: f64,
    pub audit_samples: usize,
    /// Trained agents audited per class and run (lowest ids first).
    pub audit_agents_per_class: usize,
    /// Write the full welfare matrix for every sweep point.
    pub welfare_matrix: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub notes: String,
    pub seed: u64,
    pub game: GameSettings,
    pub training: TrainingBlock,
    pub evaluation: EvaluationBlock,
    pub sweep: SweepBlock,
    pub solvers: SolversBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Paper,
    Desk,
}

impl FromStr for Preset {
    type Err = CrdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(CrdError::invalid(
                "preset",
                format!("unknown preset `{other}` (expected paper or desk)"),
            )),
        }
    }
}

/// One concrete game setting of a sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub index: usize,
    pub risk: f64,
    pub diversity: f64,
    pub params: GameParams,
}

/// The default experiment: full-scale constants, a single point at r = 0.5,
/// delta = 0.1.
pub fn defaults() -> ExperimentConfig {
    let game = GameSettings::default();
    let training = TrainingConfig::default();
    ExperimentConfig {
        name: "default".into(),
        notes: String::new(),
        seed: 0,
        game,
        training: TrainingBlock {
            enabled: true,
            steps: training.steps,
            min_updates: training.min_updates,
            phi: training.phi,
            runs: training.runs,
        },
        evaluation: EvaluationBlock {
            rollouts: EvaluationConfig::default().rollouts,
            partition: Partition::Reshuffle,
        },
        sweep: SweepBlock {
            axis: SweepAxis::Risk,
            values: vec![game.risk],
        },
        solvers: SolversBlock {
            nash: true,
            welfare: true,
            audit: true,
            epsilon: 0.001,
            audit_samples: DEFAULT_AUDIT_SAMPLES,
            audit_agents_per_class: 10,
            welfare_matrix: true,
        },
        output_dir: None,
    }
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let mut cfg = defaults();
        if preset == Preset::Desk {
            cfg.name = "desk".into();
            cfg.training.steps = 500_000;
            cfg.training.min_updates = 6_000;
            cfg.training.runs = 3;
            cfg.evaluation.rollouts = 100_000;
        } else {
            cfg.name = "paper".into();
        }
        cfg
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CrdError::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| CrdError::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 over the compact JSON form, ignoring `output_dir`.
    pub fn hash(&self) -> String {
        let mut copy = self.clone();
        copy.output_dir = None;
        let bytes = serde_json::to_vec(&copy).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.solvers.epsilon).map_err(|e| match e {
            CrdError::InvalidParameter { reason, .. } => CrdError::invalid("solvers.epsilon", reason),
            other => other,
        })
    }

    /// Checks every block and every sweep point before anything runs.
    pub fn validate(&self) -> Result<Vec<SweepPoint>> {
        if self.name.trim().is_empty() {
            return Err(CrdError::invalid("name", "must not be empty"));
        }
        self.game.build().map_err(|e| prefix("game", e))?;
        if self.training.enabled {
            self.training.config(0).validate()?;
        }
        if self.evaluation.rollouts == 0 {
            return Err(CrdError::invalid("evaluation.rollouts", "must be at least 1"));
        }
        if self.solvers.nash || self.solvers.welfare {
            self.grid()?;
        }
        if self.solvers.audit && self.solvers.audit_samples < 2 {
            return Err(CrdError::invalid("solvers.audit_samples", "must be at least 2"));
        }
        if self.sweep.values.is_empty() {
            return Err(CrdError::invalid("sweep.values", "must list at least one value"));
        }
        self.points()
    }

    pub fn points(&self) -> Result<Vec<SweepPoint>> {
        self.sweep
            .values
            .iter()
            .enumerate()
            .map(|(index, &v)| {
                let (risk, diversity) = match self.sweep.axis {
                    SweepAxis::Risk => (v, self.game.diversity),
                    SweepAxis::Diversity => (self.game.risk, v),
                };
                let settings = GameSettings {
                    risk,
                    diversity,
                    ..self.game
                };
                let params = settings.build().map_err(|e| match e {
                    CrdError::InvalidParameter { reason, .. } => {
                        CrdError::invalid(format!("sweep.values[{index}]"), format!("{v}: {reason}"))
                    }
                    other => other,
                })?;
                Ok(SweepPoint {
                    index,
                    risk,
                    diversity,
                    params,
                })
            })
            .collect()
    }
}

fn prefix(block: &str, e: CrdError) -> CrdError {
    match e {
        CrdError::InvalidParameter { field, reason } => CrdError::invalid(format!("{block}.{field}"), reason),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_hold_reference_constants() {
        let d = defaults();
        assert_eq!(d.game.population_size, 200);
        assert_eq!(d.game.group_size, 6);
        assert_eq!(d.game.min_cooperators, 3);
        assert_eq!(d.game.endowment, 1.0);
        assert_eq!(d.game.contribution, 0.1);
        assert_eq!(d.game.penalty, 0.7);
        assert_eq!(d.game.high_risk_fraction, 0.5);
        assert_eq!(d.training.steps, 2_500_000);
        assert_eq!(d.training.min_updates, 30_000);
        assert_eq!(d.training.phi, 0.001);
        assert_eq!(d.training.runs, 5);
        assert_eq!(d.evaluation.rollouts, 1_000_000);
        assert_eq!(d.solvers.epsilon, 0.001);
        d.validate().unwrap();
    }

    #[test]
    fn round_trip() {
        let d = ExperimentConfig::preset(Preset::Desk);
        let back: ExperimentConfig = serde_json::from_str(&d.to_json()).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.hash(), d.hash());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = defaults();
        let mut b = a.clone();
        b.output_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn bad_sweep_value_is_named() {
        let mut c = defaults();
        c.sweep = SweepBlock {
            axis: SweepAxis::Diversity,
            values: vec![0.1, 1.2],
        };
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("sweep.values[1]"), "{err}");

        c.game.risk = 0.1;
        c.sweep.values = vec![0.0, 0.3];
        assert!(c.validate().unwrap_err().to_string().contains("sweep.values[1]"));
    }

    #[test]
    fn bad_blocks_are_named() {
        let mut c = defaults();
        c.training.phi = 1.5;
        assert!(c.validate().unwrap_err().to_string().contains("training.phi"));
        let mut c = defaults();
        c.solvers.epsilon = 0.003;
        assert!(c.validate().unwrap_err().to_string().contains("solvers.epsilon"));
        let mut c = defaults();
        c.game.contribution = 0.0;
        assert!(c.validate().unwrap_err().to_string().contains("game.contribution"));
        let mut c = defaults();
        c.evaluation.rollouts = 0;
        assert!(c.validate().unwrap_err().to_string().contains("evaluation.rollouts"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&defaults().to_json()).unwrap();
        v["training"]["stpes"] = 3.into();
        assert!(serde_json::from_value::<ExperimentConfig>(v).is_err());
    }
}
