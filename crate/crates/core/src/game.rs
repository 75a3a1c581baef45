//! The collective risk dilemma: parameters, payoffs and group resolution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CrdError, Result};

/// Tolerance used when checking that `Z * z_H` is a whole number of agents
/// and when snapping per-class risks that land a rounding error outside [0, 1].
const INTEGRALITY_TOL: f64 = 1e-9;
const RISK_SNAP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskClass {
    Low,
    High,
}

impl RiskClass {
    pub const BOTH: [RiskClass; 2] = [RiskClass::Low, RiskClass::High];

    pub fn as_str(self) -> &'static str {
        match self {
            RiskClass::Low => "low",
            RiskClass::High => "high",
        }
    }

    pub fn other(self) -> RiskClass {
        match self {
            RiskClass::Low => RiskClass::High,
            RiskClass::High => RiskClass::Low,
        }
    }
}

impl std::str::FromStr for RiskClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "low" => Ok(RiskClass::Low),
            "high" => Ok(RiskClass::High),
            other => Err(format!("unknown risk class `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Cooperate,
    Defect,
}

impl Action {
    /// Index into a propensity pair: 0 for C, 1 for D.
    pub fn index(self) -> usize {
        match self {
            Action::Cooperate => 0,
            Action::Defect => 1,
        }
    }
}

/// Raw, user-facing game constants as they appear in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameSettings {
    pub population_size: usize,
    pub group_size: usize,
    pub min_cooperators: usize,
    pub endowment: f64,
    pub contribution: f64,
    pub penalty: f64,
    pub risk: f64,
    pub diversity: f64,
    pub high_risk_fraction: f64,
}

impl Default for GameSettings {
    fn default() -> Self {
        GameSettings {
            population_size: 200,
            group_size: 6,
            min_cooperators: 3,
            endowment: 1.0,
            contribution: 0.1,
            penalty: 0.7,
            risk: 0.5,
            diversity: 0.1,
            high_risk_fraction: 0.5,
        }
    }
}

impl GameSettings {
    pub fn build(&self) -> Result<GameParams> {
        GameParams::new(*self)
    }
}

/// Validated game parameters with derived threshold, class sizes and risks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameParams {
    settings: GameSettings,
    threshold: f64,
    risk_high: f64,
    risk_low: f64,
    high_count: usize,
}

impl GameParams {
    pub fn new(s: GameSettings) -> Result<Self> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(CrdError::invalid(name, format!("{v} is not in (0, 1)")))
            }
        };
        if s.group_size == 0 {
            return Err(CrdError::invalid("group_size", "must be positive"));
        }
        if s.min_cooperators == 0 || s.min_cooperators > s.group_size {
            return Err(CrdError::invalid(
                "min_cooperators",
                format!("{} is not in 1..={}", s.min_cooperators, s.group_size),
            ));
        }
        if s.population_size < s.group_size {
            return Err(CrdError::PopulationTooSmall {
                population: s.population_size,
                group: s.group_size,
            });
        }
        if !(s.endowment.is_finite() && s.endowment > 0.0) {
            return Err(CrdError::invalid("endowment", "must be positive and finite"));
        }
        unit("contribution", s.contribution)?;
        unit("penalty", s.penalty)?;
        unit("high_risk_fraction", s.high_risk_fraction)?;
        if s.contribution + s.penalty * (1.0 - s.contribution) >= 1.0 {
            return Err(CrdError::invalid(
                "penalty",
                "c + p(1 - c) must stay below 1 for log utility",
            ));
        }
        if !(0.0..=1.0).contains(&s.risk) {
            return Err(CrdError::invalid("risk", format!("{} is not in [0, 1]", s.risk)));
        }
        if !(s.diversity.is_finite() && s.diversity >= 0.0) {
            return Err(CrdError::invalid("diversity", "must be finite and >= 0"));
        }

        let high_exact = s.population_size as f64 * s.high_risk_fraction;
        let high_count = high_exact.round();
        if (high_exact - high_count).abs() > INTEGRALITY_TOL {
            return Err(CrdError::invalid(
                "high_risk_fraction",
                format!("population_size * high_risk_fraction = {high_exact} is not whole"),
            ));
        }
        let high_count = high_count as usize;
        if high_count == 0 || high_count == s.population_size {
            return Err(CrdError::invalid(
                "high_risk_fraction",
                "both classes need at least one agent",
            ));
        }

        let z_high = s.high_risk_fraction;
        let risk_high = snap(s.risk + s.diversity / (2.0 * z_high));
        let risk_low = snap(s.risk - s.diversity / (2.0 * (1.0 - z_high)));
        if risk_high > 1.0 {
            return Err(CrdError::invalid(
                "diversity",
                format!("high-risk class risk {risk_high} exceeds 1"),
            ));
        }
        if risk_low < 0.0 {
            return Err(CrdError::invalid(
                "diversity",
                format!("low-risk class risk {risk_low} is negative"),
            ));
        }

        Ok(GameParams {
            settings: s,
            threshold: s.min_cooperators as f64 * s.contribution * s.endowment,
            risk_high,
            risk_low,
            high_count,
        })
    }

    pub fn settings(&self) -> &GameSettings {
        &self.settings
    }

    pub fn population_size(&self) -> usize {
        self.settings.population_size
    }

    pub fn group_size(&self) -> usize {
        self.settings.group_size
    }

    pub fn min_cooperators(&self) -> usize {
        self.settings.min_cooperators
    }

    /// Target threshold `t = M c b`.
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn risk(&self, class: RiskClass) -> f64 {
        match class {
            RiskClass::Low => self.risk_low,
            RiskClass::High => self.risk_high,
        }
    }

    pub fn class_size(&self, class: RiskClass) -> usize {
        match class {
            RiskClass::Low => self.settings.population_size - self.high_count,
            RiskClass::High => self.high_count,
        }
    }

    /// Population share of a class (`z_L` or `z_H`).
    pub fn class_fraction(&self, class: RiskClass) -> f64 {
        match class {
            RiskClass::Low => 1.0 - self.settings.high_risk_fraction,
            RiskClass::High => self.settings.high_risk_fraction,
        }
    }

    /// Agents `0..Z_L` are low risk, the rest high risk.
    pub fn class_of(&self, agent: usize) -> RiskClass {
        if agent < self.class_size(RiskClass::Low) {
            RiskClass::Low
        } else {
            RiskClass::High
        }
    }

    pub fn classes(&self) -> Vec<RiskClass> {
        (0..self.population_size()).map(|i| self.class_of(i)).collect()
    }

    /// Whether a group with this many contributions reaches the threshold.
    pub fn target_met(&self, cooperators: usize) -> bool {
        cooperators >= self.settings.min_cooperators
    }

    /// Returns a copy with a different average risk and diversity.
    pub fn with_risk(&self, risk: f64, diversity: f64) -> Result<GameParams> {
        GameParams::new(GameSettings {
            risk,
            diversity,
            ..self.settings
        })
    }
}

fn snap(r: f64) -> f64 {
    if r < 0.0 && r > -RISK_SNAP {
        0.0
    } else if r > 1.0 && r < 1.0 + RISK_SNAP {
        1.0
    } else {
        r
    }
}

/// A violated social-dilemma condition.
#[derive(Debug, Clone, PartialEq)]
pub enum DilemmaViolation {
    /// Cooperating under certain success is not better than defecting under
    /// certain failure for this class: `r_class <= log(1-c)/log(1-p)`.
    RiskTooLow { class: RiskClass, risk: f64, required: f64 },
    /// `t <= c b`: a single contribution already reaches the target.
    ThresholdNotAboveSingleContribution { threshold: f64, single: f64 },
    /// `t >= N c b`: free riding is impossible.
    ThresholdRequiresEveryone { threshold: f64, full: f64 },
}

impl std::fmt::Display for DilemmaViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DilemmaViolation::RiskTooLow { class, risk, required } => write!(
                f,
                "{} risk class: r = {risk} is not above {required:.6}",
                class.as_str()
            ),
            DilemmaViolation::ThresholdNotAboveSingleContribution { threshold, single } => {
                write!(f, "threshold {threshold} not above single contribution {single}")
            }
            DilemmaViolation::ThresholdRequiresEveryone { threshold, full } => {
                write!(f, "threshold {threshold} not below full contribution {full}")
            }
        }
    }
}

/// Smallest per-class risk for which the game is a dilemma, `log(1-c)/log(1-p)`.
pub fn minimum_dilemma_risk(contribution: f64, penalty: f64) -> f64 {
    (1.0 - contribution).ln() / (1.0 - penalty).ln()
}

/// Lists every social-dilemma condition the parameters violate.
///
/// Advisory only: an empty report means the game is a dilemma for every
/// agent, but callers may run non-dilemma configurations knowingly.
pub fn validate_dilemma(params: &GameParams) -> Vec<DilemmaViolation> {
    let s = params.settings();
    let mut out = Vec::new();
    let required = minimum_dilemma_risk(s.contribution, s.penalty);
    for class in RiskClass::BOTH {
        let risk = params.risk(class);
        if risk <= required {
            out.push(DilemmaViolation::RiskTooLow { class, risk, required });
        }
    }
    let single = s.contribution * s.endowment;
    let full = s.group_size as f64 * single;
    let t = params.threshold();
    if t <= single {
        out.push(DilemmaViolation::ThresholdNotAboveSingleContribution { threshold: t, single });
    }
    if t >= full {
        out.push(DilemmaViolation::ThresholdRequiresEveryone { threshold: t, full });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Utility {
    Log,
    Linear,
}

/// The four outcome payoffs of the game under a utility model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayoffSpec {
    pub utility: Utility,
    /// Cooperated, disaster avoided.
    pub coop_safe: f64,
    /// Defected, disaster avoided.
    pub defect_safe: f64,
    /// Cooperated, disaster struck.
    pub coop_hit: f64,
    /// Defected, disaster struck.
    pub defect_hit: f64,
}

impl PayoffSpec {
    /// Log of final over initial wealth.
    pub fn log(params: &GameParams) -> Self {
        let s = params.settings();
        let (c, p) = (s.contribution, s.penalty);
        PayoffSpec {
            utility: Utility::Log,
            coop_safe: (1.0 - c).ln(),
            defect_safe: 0.0,
            coop_hit: (1.0 - c - p * (1.0 - c)).ln(),
            defect_hit: (1.0 - p).ln(),
        }
    }

    /// Absolute wealth lost.
    pub fn linear(params: &GameParams) -> Self {
        let s = params.settings();
        let (b, c, p) = (s.endowment, s.contribution, s.penalty);
        PayoffSpec {
            utility: Utility::Linear,
            coop_safe: -c * b,
            defect_safe: 0.0,
            coop_hit: -c * b - (1.0 - c) * p * b,
            defect_hit: -p * b,
        }
    }

    pub fn for_utility(params: &GameParams, utility: Utility) -> Self {
        match utility {
            Utility::Log => Self::log(params),
            Utility::Linear => Self::linear(params),
        }
    }

    pub fn payoff(&self, action: Action, disaster: bool) -> f64 {
        match (action, disaster) {
            (Action::Cooperate, false) => self.coop_safe,
            (Action::Cooperate, true) => self.coop_hit,
            (Action::Defect, false) => self.defect_safe,
            (Action::Defect, true) => self.defect_hit,
        }
    }

    /// Largest payoff magnitude an agent can receive.
    pub fn max_magnitude(&self) -> f64 {
        [self.coop_safe, self.defect_safe, self.coop_hit, self.defect_hit]
            .iter()
            .fold(0.0_f64, |m, x| m.max(x.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupMember {
    pub agent: usize,
    pub action: Action,
    pub class: RiskClass,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemberResult {
    pub agent: usize,
    pub action: Action,
    pub disaster: bool,
    pub payoff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupOutcome {
    pub cooperators: usize,
    pub target_met: bool,
    pub members: Vec<MemberResult>,
}

/// Plays one round for a formed group.
///
/// When the group falls short of the threshold, each member independently
/// suffers the disaster with its class risk; draws happen in member order.
pub fn resolve_group<R: Rng + ?Sized>(
    params: &GameParams,
    spec: &PayoffSpec,
    members: &[GroupMember],
    rng: &mut R,
) -> Result<GroupOutcome> {
    if members.len() != params.group_size() {
        return Err(CrdError::GroupSize {
            expected: params.group_size(),
            got: members.len(),
        });
    }
    let cooperators = members.iter().filter(|m| m.action == Action::Cooperate).count();
    let target_met = params.target_met(cooperators);
    let members = members
        .iter()
        .map(|m| {
            let disaster = !target_met && rng.random::<f64>() < params.risk(m.class);
            MemberResult {
                agent: m.agent,
                action: m.action,
                disaster,
                payoff: spec.payoff(m.action, disaster),
            }
        })
        .collect();
    Ok(GroupOutcome {
        cooperators,
        target_met,
        members,
    })
}
