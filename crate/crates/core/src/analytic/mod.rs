//! Closed-form expected payoffs for class-coordinated strategy profiles.
//!
//! A focal agent joins `N - 1` others of whom `n_L` are low risk. Every
//! low-risk group-mate cooperates with `pi_L`, every high-risk one with
//! `pi_H`; the focal agent's own cooperation probability enters linearly.
//! Averaging over the hypergeometric composition of the group gives the
//! class payoff `H_class(pi_L, pi_H)`.

mod audit;
mod nash;
mod welfare;

pub use audit::{
    deviation_audit, AuditMethod, AuditOptions, AuditResult, DEFAULT_AUDIT_SAMPLES, EXACT_COMPOSITION_LIMIT,
};
pub use nash::{
    best_response_curves, find_class_nash, refine_nash, BestResponseCurve, NashPoint, PayoffSurface, TAU_NASH, TAU_TIE,
};
pub use welfare::{welfare_grid, WelfareGrid};

use serde::{Deserialize, Serialize};

use crate::error::{CrdError, Result};
use crate::game::{Action, GameParams, PayoffSpec, RiskClass};
use crate::util::{binom, binomial_pmf};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyProfile {
    pub pi_low: f64,
    pub pi_high: f64,
}

impl StrategyProfile {
    pub fn new(pi_low: f64, pi_high: f64) -> Result<Self> {
        for (name, v) in [("pi_low", pi_low), ("pi_high", pi_high)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CrdError::invalid(name, format!("{v} is not in [0, 1]")));
            }
        }
        Ok(StrategyProfile { pi_low, pi_high })
    }

    pub fn of(&self, class: RiskClass) -> f64 {
        match class {
            RiskClass::Low => self.pi_low,
            RiskClass::High => self.pi_high,
        }
    }

    pub fn with(&self, class: RiskClass, pi: f64) -> Self {
        match class {
            RiskClass::Low => StrategyProfile { pi_low: pi, ..*self },
            RiskClass::High => StrategyProfile { pi_high: pi, ..*self },
        }
    }
}

/// Uniform strategy grid `0, eps, 2 eps, ..., 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    steps: usize,
}

impl GridSpec {
    pub fn new(epsilon: f64) -> Result<Self> {
        let steps = (1.0 / epsilon).round();
        if !(epsilon > 0.0 && epsilon <= 1.0) || ((1.0 / epsilon) - steps).abs() > 1e-6 {
            return Err(CrdError::invalid(
                "epsilon",
                format!("1/{epsilon} is not a positive integer"),
            ));
        }
        Ok(GridSpec { steps: steps as usize })
    }

    pub fn with_steps(steps: usize) -> Self {
        assert!(steps > 0);
        GridSpec { steps }
    }

    pub fn epsilon(&self) -> f64 {
        1.0 / self.steps as f64
    }

    /// Number of grid points, `1/eps + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn value(&self, i: usize) -> f64 {
        i as f64 / self.steps as f64
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.value(i)).collect()
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { steps: 1000 }
    }
}

/// Probability that, among `n_low` low-risk and `n_high` high-risk
/// group-mates, exactly `coop_low` and `coop_high` cooperate.
pub fn config_prob(
    n_low: usize,
    n_high: usize,
    coop_low: usize,
    coop_high: usize,
    profile: &StrategyProfile,
) -> Result<f64> {
    if coop_low > n_low || coop_high > n_high {
        return Err(CrdError::CountOutOfRange(format!(
            "cooperators ({coop_low}, {coop_high}) exceed group-mates ({n_low}, {n_high})"
        )));
    }
    Ok(binomial_pmf(n_low, coop_low, profile.pi_low) * binomial_pmf(n_high, coop_high, profile.pi_high))
}

/// Number of group-mate contributions needed for the target given the focal action.
fn needed(params: &GameParams, action: Action) -> usize {
    match action {
        Action::Defect => params.min_cooperators(),
        Action::Cooperate => params.min_cooperators().saturating_sub(1),
    }
}

/// Probability that the group reaches the target given the focal agent's
/// action, with `n_low` low-risk agents among the `N - 1` group-mates.
pub fn target_prob(params: &GameParams, n_low: usize, profile: &StrategyProfile, action: Action) -> Result<f64> {
    let others = params.group_size() - 1;
    if n_low > others {
        return Err(CrdError::CountOutOfRange(format!("n_low {n_low} exceeds {others}")));
    }
    let n_high = others - n_low;
    let need = needed(params, action);
    let mut total = 0.0;
    for kl in 0..=n_low {
        for kh in 0..=n_high {
            if kl + kh >= need {
                total += config_prob(n_low, n_high, kl, kh, profile)?;
            }
        }
    }
    Ok(total)
}

/// `(P(success | a), P(failure | a))` for an agent with the given risk,
/// from the probability that the group reaches the target.
pub fn success_prob(risk: f64, p_target: f64) -> (f64, f64) {
    let success = p_target + (1.0 - risk) * (1.0 - p_target);
    (success, 1.0 - success)
}

/// Per-composition target probabilities `(P(t|A^D), P(t|A^C))` from the two
/// group-mate cooperation pmfs.
#[derive(Debug, Clone, Copy)]
struct TargetProbs {
    if_defect: f64,
    if_cooperate: f64,
}

fn target_probs_from_pmfs(params: &GameParams, low: &[f64], high: &[f64]) -> TargetProbs {
    let need_d = needed(params, Action::Defect);
    let need_c = needed(params, Action::Cooperate);
    let mut out = TargetProbs {
        if_defect: 0.0,
        if_cooperate: 0.0,
    };
    for (kl, pl) in low.iter().enumerate() {
        for (kh, ph) in high.iter().enumerate() {
            let k = kl + kh;
            if k >= need_c {
                let pr = pl * ph;
                out.if_cooperate += pr;
                if k >= need_d {
                    out.if_defect += pr;
                }
            }
        }
    }
    out
}

/// Expected payoff of an agent cooperating with `focal_pi`, given the
/// target probabilities under each of its actions.
fn mix_payoff(spec: &PayoffSpec, risk: f64, focal_pi: f64, t: TargetProbs) -> f64 {
    let (sc, fc) = success_prob(risk, t.if_cooperate);
    let (sd, fd) = success_prob(risk, t.if_defect);
    focal_pi * (sc * spec.coop_safe + fc * spec.coop_hit)
        + (1.0 - focal_pi) * (sd * spec.defect_safe + fd * spec.defect_hit)
}

fn pmf_vec(n: usize, p: f64) -> Vec<f64> {
    (0..=n).map(|k| binomial_pmf(n, k, p)).collect()
}

/// Expected payoff of a focal agent of `class` whose own cooperation
/// probability is `focal_pi`, while its `N - 1` group-mates (`n_low` of them
/// low risk) follow `profile`. Affine in `focal_pi`.
pub fn focal_payoff_given_composition(
    params: &GameParams,
    spec: &PayoffSpec,
    class: RiskClass,
    n_low: usize,
    focal_pi: f64,
    profile: &StrategyProfile,
) -> Result<f64> {
    let others = params.group_size() - 1;
    if n_low > others {
        return Err(CrdError::CountOutOfRange(format!("n_low {n_low} exceeds {others}")));
    }
    let low = pmf_vec(n_low, profile.pi_low);
    let high = pmf_vec(others - n_low, profile.pi_high);
    let t = target_probs_from_pmfs(params, &low, &high);
    Ok(mix_payoff(spec, params.risk(class), focal_pi, t))
}

/// `H^{n_L}_class(pi_L, pi_H)`: the focal agent plays its own class strategy.
pub fn class_payoff_given_composition(
    params: &GameParams,
    spec: &PayoffSpec,
    class: RiskClass,
    n_low: usize,
    profile: &StrategyProfile,
) -> Result<f64> {
    focal_payoff_given_composition(params, spec, class, n_low, profile.of(class), profile)
}

/// Hypergeometric probability that a focal agent of `class` finds `n_low`
/// low-risk agents among its `N - 1` group-mates, for `n_low = 0..N-1`.
///
/// The focal agent is removed from its own class before drawing.
pub fn composition_weights(params: &GameParams, class: RiskClass) -> Vec<f64> {
    let z = params.population_size() as u64;
    let z_low = params.class_size(RiskClass::Low) as u64;
    let others = params.group_size() as u64 - 1;
    let denom = binom(z - 1, others);
    (0..=others)
        .map(|n_low| {
            let n_high = others - n_low;
            let ways = match class {
                RiskClass::Low => binom(z_low - 1, n_low) * binom(z - z_low, n_high),
                RiskClass::High => binom(z_low, n_low) * binom(z - z_low - 1, n_high),
            };
            ways / denom
        })
        .collect()
}

/// Precomputed composition weights for both classes.
#[derive(Debug, Clone)]
pub struct ClassWeights {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl ClassWeights {
    pub fn new(params: &GameParams) -> Self {
        ClassWeights {
            low: composition_weights(params, RiskClass::Low),
            high: composition_weights(params, RiskClass::High),
        }
    }

    pub fn of(&self, class: RiskClass) -> &[f64] {
        match class {
            RiskClass::Low => &self.low,
            RiskClass::High => &self.high,
        }
    }
}

/// Class payoff with a focal strategy that may differ from the class strategy.
pub fn focal_class_payoff(
    params: &GameParams,
    spec: &PayoffSpec,
    class: RiskClass,
    focal_pi: f64,
    profile: &StrategyProfile,
) -> f64 {
    let weights = composition_weights(params, class);
    let others = params.group_size() - 1;
    let mut total = 0.0;
    for (n_low, w) in weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        let low = pmf_vec(n_low, profile.pi_low);
        let high = pmf_vec(others - n_low, profile.pi_high);
        let t = target_probs_from_pmfs(params, &low, &high);
        total += w * mix_payoff(spec, params.risk(class), focal_pi, t);
    }
    total
}

/// `H_class(pi_L, pi_H)`: expected payoff of a class member when every agent
/// follows its class strategy and groups are drawn uniformly at random.
pub fn class_payoff(params: &GameParams, spec: &PayoffSpec, class: RiskClass, profile: &StrategyProfile) -> f64 {
    focal_class_payoff(params, spec, class, profile.of(class), profile)
}

/// Derivative of `H_class` with respect to the class's own strategy, with
/// the opponent class fixed. Every same-class group-mate moves together with
/// the focal agent.
///
/// Uses `d/dp P[Bin(n, p) + S >= m] = n P[Bin(n - 1, p) + S = m - 1]`.
pub fn own_strategy_slope(params: &GameParams, spec: &PayoffSpec, class: RiskClass, profile: &StrategyProfile) -> f64 {
    let weights = composition_weights(params, class);
    let others = params.group_size() - 1;
    let risk = params.risk(class);
    let pi = profile.of(class);
    let mut total = 0.0;
    for (n_low, w) in weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        let n_high = others - n_low;
        let low = pmf_vec(n_low, profile.pi_low);
        let high = pmf_vec(n_high, profile.pi_high);
        let t = target_probs_from_pmfs(params, &low, &high);

        // Same-class group-mates, and the pmf of the rest with one of them removed.
        let (n_same, reduced) = match class {
            RiskClass::Low => (n_low, convolve(&pmf_vec(n_low.saturating_sub(1), pi), &high)),
            RiskClass::High => (n_high, convolve(&low, &pmf_vec(n_high.saturating_sub(1), pi))),
        };
        let pivotal = |need: usize| -> f64 {
            if n_same == 0 || need == 0 {
                0.0
            } else {
                reduced.get(need - 1).copied().unwrap_or(0.0)
            }
        };
        let dt_c = n_same as f64 * pivotal(needed(params, Action::Cooperate));
        let dt_d = n_same as f64 * pivotal(needed(params, Action::Defect));

        let (sc, fc) = success_prob(risk, t.if_cooperate);
        let (sd, fd) = success_prob(risk, t.if_defect);
        let coop_value = sc * spec.coop_safe + fc * spec.coop_hit;
        let defect_value = sd * spec.defect_safe + fd * spec.defect_hit;
        // dS/dpi = r dP(t)/dpi; the payoff moves by (safe - hit) per unit of S.
        let d_coop = risk * dt_c * (spec.coop_safe - spec.coop_hit);
        let d_defect = risk * dt_d * (spec.defect_safe - spec.defect_hit);
        total += w * (coop_value - defect_value + pi * d_coop + (1.0 - pi) * d_defect);
    }
    total
}

fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::GameSettings;

    fn params(risk: f64, diversity: f64) -> GameParams {
        GameSettings {
            risk,
            diversity,
            ..GameSettings::default()
        }
        .build()
        .unwrap()
    }

    fn prof(l: f64, h: f64) -> StrategyProfile {
        StrategyProfile::new(l, h).unwrap()
    }

    #[test]
    fn config_prob_examples() {
        let p = prof(0.5, 0.5);
        assert!((config_prob(2, 3, 1, 2, &p).unwrap() - 0.1875).abs() < 1e-15);
        let sure = prof(1.0, 1.0);
        assert_eq!(config_prob(2, 3, 2, 3, &sure).unwrap(), 1.0);
        assert_eq!(config_prob(2, 3, 1, 3, &sure).unwrap(), 0.0);
        assert!(config_prob(2, 3, 3, 0, &p).is_err());
        let q = prof(0.3, 0.8);
        let mut total = 0.0;
        for kl in 0..=2 {
            for kh in 0..=3 {
                total += config_prob(2, 3, kl, kh, &q).unwrap();
            }
        }
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn target_prob_examples() {
        let g = params(0.5, 0.1);
        for n_low in 0..6 {
            assert_eq!(target_prob(&g, n_low, &prof(1.0, 1.0), Action::Defect).unwrap(), 1.0);
            assert_eq!(target_prob(&g, n_low, &prof(0.0, 0.0), Action::Cooperate).unwrap(), 0.0);
        }
        let t = target_prob(&g, 5, &prof(0.5, 0.2), Action::Defect).unwrap();
        assert!((t - 0.5).abs() < 1e-15);
        assert!(target_prob(&g, 6, &prof(0.5, 0.5), Action::Defect).is_err());
    }

    #[test]
    fn success_prob_examples() {
        assert_eq!(success_prob(0.0, 0.3).0, 1.0);
        assert_eq!(success_prob(1.0, 0.3).0, 0.3);
        assert_eq!(success_prob(0.5, 0.5), (0.75, 0.25));
    }

    #[test]
    fn composition_payoff_examples() {
        // n_low = 5 low-risk mates all defecting: the target is unreachable.
        let g = params(0.5, 0.0);
        let spec = PayoffSpec::log(&g);
        let h = class_payoff_given_composition(&g, &spec, RiskClass::Low, 5, &prof(0.0, 0.0)).unwrap();
        assert!((h - 0.5 * 0.3f64.ln()).abs() < 1e-15);
        assert!((h - (-0.6020)).abs() < 1e-4);

        let h = class_payoff_given_composition(&g, &spec, RiskClass::High, 2, &prof(1.0, 1.0)).unwrap();
        assert_eq!(h, spec.coop_safe);
    }

    #[test]
    fn focal_payoff_is_affine_in_own_probability() {
        let g = params(0.5, 0.2);
        let spec = PayoffSpec::log(&g);
        let profile = prof(0.37, 0.81);
        for class in RiskClass::BOTH {
            for n_low in 0..6 {
                let at = |x: f64| focal_payoff_given_composition(&g, &spec, class, n_low, x, &profile).unwrap();
                let (a, b) = (at(0.0), at(1.0));
                for x in [0.1, 0.45, 0.9] {
                    assert!((at(x) - (a + x * (b - a))).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn weights_are_normalized() {
        for (z, zh) in [(200, 0.5), (12, 0.5), (100, 0.2), (7, 3.0 / 7.0)] {
            let g = GameSettings {
                population_size: z,
                high_risk_fraction: zh,
                ..GameSettings::default()
            }
            .build()
            .unwrap();
            for class in RiskClass::BOTH {
                let s: f64 = composition_weights(&g, class).iter().sum();
                assert!((s - 1.0).abs() < 1e-14, "{z} {zh} {class:?}: {s}");
            }
        }
    }

    #[test]
    fn class_symmetry_without_diversity() {
        let g = params(0.5, 0.0);
        let spec = PayoffSpec::log(&g);
        for pi in [0.0, 0.2, 0.5, 0.93, 1.0] {
            let p = prof(pi, pi);
            let l = class_payoff(&g, &spec, RiskClass::Low, &p);
            let h = class_payoff(&g, &spec, RiskClass::High, &p);
            assert!((l - h).abs() < 1e-14);
        }
    }

    #[test]
    fn slope_matches_finite_differences() {
        let g = params(0.5, 0.1);
        for spec in [PayoffSpec::log(&g), PayoffSpec::linear(&g)] {
            for class in RiskClass::BOTH {
                for (l, h) in [(0.3, 0.6), (0.68, 0.92), (0.05, 0.5)] {
                    let p = prof(l, h);
                    let step = 1e-6;
                    let f = |x: f64| class_payoff(&g, &spec, class, &p.with(class, x));
                    let x = p.of(class);
                    let fd = (f(x + step) - f(x - step)) / (2.0 * step);
                    let an = own_strategy_slope(&g, &spec, class, &p);
                    assert!((fd - an).abs() < 1e-7, "{class:?} {l} {h}: {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn grid_spec() {
        let g = GridSpec::new(0.001).unwrap();
        assert_eq!(g.len(), 1001);
        assert_eq!(g.value(1000), 1.0);
        assert!(GridSpec::new(0.3).is_err());
        assert!(GridSpec::new(0.0).is_err());
    }
}
