//! Single-agent deviation audit: how much would one agent gain by changing
//! its cooperation probability while everyone else keeps theirs?

use rand::seq::index;

use crate::error::{CrdError, Result};
use crate::game::{GameParams, PayoffSpec};
use crate::seeds::rng_from;
use crate::util::{binom, poisson_binomial, tail};

/// Exact enumeration is used while the number of group compositions (by
/// distinct strategy value) stays at or below this.
pub const EXACT_COMPOSITION_LIMIT: f64 = 1e6;
pub const DEFAULT_AUDIT_SAMPLES: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditOptions {
    pub samples: usize,
    pub seed: u64,
    pub exact_limit: f64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            samples: DEFAULT_AUDIT_SAMPLES,
            seed: 0,
            exact_limit: EXACT_COMPOSITION_LIMIT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditMethod {
    Exact,
    MonteCarlo,
}

impl AuditMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            AuditMethod::Exact => "exact",
            AuditMethod::MonteCarlo => "monte_carlo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditResult {
    pub deviant: usize,
    pub current: f64,
    pub proposed: f64,
    /// Expected payoff change for the deviant; positive means profitable.
    pub delta: f64,
    /// Half-width of the 95% confidence interval on `delta` (0 when exact).
    pub ci_half_width: f64,
    pub method: AuditMethod,
}

/// Expected payoff change of agent `deviant` switching from its current
/// cooperation probability to `proposed`, all other strategies fixed.
///
/// The deviant's payoff is affine in its own probability, so the change is
/// `(proposed - current) * E[payoff | C] - E[payoff | D]`, with the
/// expectation taken over uniformly drawn group-mates and their actions.
pub fn deviation_audit(
    strategies: &[f64],
    params: &GameParams,
    spec: &PayoffSpec,
    deviant: usize,
    proposed: f64,
    opts: &AuditOptions,
) -> Result<AuditResult> {
    let z = params.population_size();
    if strategies.len() != z {
        return Err(CrdError::CountOutOfRange(format!(
            "{} strategies for a population of {z}",
            strategies.len()
        )));
    }
    if deviant >= z {
        return Err(CrdError::CountOutOfRange(format!("deviant {deviant} >= {z}")));
    }
    if let Some(bad) = strategies.iter().chain([&proposed]).find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(CrdError::invalid("strategy", format!("{bad} is not in [0, 1]")));
    }
    let current = strategies[deviant];
    let risk = params.risk(params.class_of(deviant));
    let others: Vec<f64> = strategies
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != deviant)
        .map(|(_, &p)| p)
        .collect();

    let types = strategy_types(&others);
    let (gain, gain_ci, method) = if composition_count(&types, params.group_size() - 1) <= opts.exact_limit {
        (exact_gain(&types, params, spec, risk), 0.0, AuditMethod::Exact)
    } else {
        let (mean, ci) = sampled_gain(&others, params, spec, risk, opts);
        (mean, ci, AuditMethod::MonteCarlo)
    };
    let scale = proposed - current;
    Ok(AuditResult {
        deviant,
        current,
        proposed,
        delta: scale * gain,
        ci_half_width: scale.abs() * gain_ci,
        method,
    })
}

/// Expected payoff of cooperating minus defecting given the probabilities
/// that the group-mates reach the target without and with the focal contribution.
fn cooperation_gain(spec: &PayoffSpec, risk: f64, p_if_defect: f64, p_if_cooperate: f64) -> f64 {
    let coop = p_if_cooperate * spec.coop_safe
        + (1.0 - p_if_cooperate) * ((1.0 - risk) * spec.coop_safe + risk * spec.coop_hit);
    let defect = p_if_defect * spec.defect_safe
        + (1.0 - p_if_defect) * ((1.0 - risk) * spec.defect_safe + risk * spec.defect_hit);
    coop - defect
}

fn gain_from_cooperators(dist: &[f64], params: &GameParams, spec: &PayoffSpec, risk: f64) -> f64 {
    let m = params.min_cooperators();
    cooperation_gain(spec, risk, tail(dist, m), tail(dist, m.saturating_sub(1)))
}

/// Distinct strategy values among the other agents with their multiplicities.
fn strategy_types(others: &[f64]) -> Vec<(f64, usize)> {
    let mut sorted = others.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut types: Vec<(f64, usize)> = Vec::new();
    for p in sorted {
        match types.last_mut() {
            Some((v, n)) if v.to_bits() == p.to_bits() => *n += 1,
            _ => types.push((p, 1)),
        }
    }
    types
}

/// Number of ways to choose how many group-mates come from each type.
fn composition_count(types: &[(f64, usize)], size: usize) -> f64 {
    let mut ways = vec![0.0; size + 1];
    ways[0] = 1.0;
    for &(_, count) in types {
        for total in (0..=size).rev() {
            let extra: f64 = (1..=count.min(total)).map(|k| ways[total - k]).sum();
            ways[total] += extra;
        }
    }
    ways[size]
}

/// Enumerates multivariate-hypergeometric type compositions of the group.
fn exact_gain(types: &[(f64, usize)], params: &GameParams, spec: &PayoffSpec, risk: f64) -> f64 {
    let size = params.group_size() - 1;
    let total_others: usize = types.iter().map(|t| t.1).sum();
    let denom = binom(total_others as u64, size as u64);
    let mut counts = vec![0usize; types.len()];
    let mut acc = 0.0;

    fn recurse(t: usize, left: usize, types: &[(f64, usize)], counts: &mut [usize], visit: &mut dyn FnMut(&[usize])) {
        if t == types.len() {
            if left == 0 {
                visit(counts);
            }
            return;
        }
        let remaining: usize = types[t + 1..].iter().map(|x| x.1).sum();
        let lo = left.saturating_sub(remaining);
        for k in lo..=types[t].1.min(left) {
            counts[t] = k;
            recurse(t + 1, left - k, types, counts, visit);
        }
        counts[t] = 0;
    }

    recurse(0, size, types, &mut counts, &mut |counts| {
        let ways: f64 = counts
            .iter()
            .zip(types)
            .map(|(&k, &(_, n))| binom(n as u64, k as u64))
            .product();
        let probs = counts
            .iter()
            .zip(types)
            .flat_map(|(&k, &(p, _))| std::iter::repeat_n(p, k));
        let dist = poisson_binomial(probs);
        acc += ways / denom * gain_from_cooperators(&dist, params, spec, risk);
    });
    acc
}

/// Draws group-mates uniformly and averages the exact conditional gain.
fn sampled_gain(others: &[f64], params: &GameParams, spec: &PayoffSpec, risk: f64, opts: &AuditOptions) -> (f64, f64) {
    let mut rng = rng_from(opts.seed);
    let size = params.group_size() - 1;
    let n = opts.samples.max(2);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n {
        let dist = poisson_binomial(
            index::sample(&mut rng, others.len(), size)
                .into_iter()
                .map(|i| others[i]),
        );
        let g = gain_from_cooperators(&dist, params, spec, risk);
        sum += g;
        sum_sq += g * g;
    }
    let mean = sum / n as f64;
    let var = ((sum_sq - n as f64 * mean * mean) / (n as f64 - 1.0)).max(0.0);
    (mean, 1.96 * (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::GameSettings;

    fn params(z: usize, risk: f64, diversity: f64) -> GameParams {
        GameSettings {
            population_size: z,
            risk,
            diversity,
            ..GameSettings::default()
        }
        .build()
        .unwrap()
    }

    #[test]
    fn no_deviation_no_change() {
        let g = params(200, 0.5, 0.1);
        let s: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).fract()).collect();
        let r = deviation_audit(&s, &g, &PayoffSpec::log(&g), 17, s[17], &AuditOptions::default()).unwrap();
        assert_eq!(r.delta, 0.0);
        assert_eq!(r.method, AuditMethod::MonteCarlo);
    }

    #[test]
    fn lone_cooperator_pays_the_contribution() {
        let g = params(200, 0.5, 0.1);
        let spec = PayoffSpec::log(&g);
        let s = vec![0.0; 200];
        for deviant in [0, 150] {
            let r = deviation_audit(&s, &g, &spec, deviant, 1.0, &AuditOptions::default()).unwrap();
            assert_eq!(r.method, AuditMethod::Exact);
            // Log utility: coop_hit = coop_safe + defect_hit, so the risk term cancels.
            assert!((r.delta - spec.coop_safe).abs() < 1e-15);
            assert!(r.delta < 0.0);
        }
    }

    #[test]
    fn exact_and_sampled_agree() {
        let g = params(200, 0.5, 0.1);
        let spec = PayoffSpec::log(&g);
        let s: Vec<f64> = (0..200).map(|i| if i < 100 { 0.55 } else { 0.8 }).collect();
        let exact = deviation_audit(&s, &g, &spec, 3, 0.0, &AuditOptions::default()).unwrap();
        let sampled = deviation_audit(
            &s,
            &g,
            &spec,
            3,
            0.0,
            &AuditOptions {
                exact_limit: 0.0,
                seed: 11,
                ..AuditOptions::default()
            },
        )
        .unwrap();
        assert_eq!(exact.method, AuditMethod::Exact);
        assert_eq!(sampled.method, AuditMethod::MonteCarlo);
        assert!((exact.delta - sampled.delta).abs() < 2.0 * sampled.ci_half_width.max(1e-12));
    }

    #[test]
    fn composition_counts() {
        assert_eq!(composition_count(&[(0.1, 3), (0.2, 5)], 5), 4.0);
        assert_eq!(composition_count(&[(0.1, 99), (0.2, 100)], 5), 6.0);
        let singles: Vec<(f64, usize)> = (0..11).map(|i| (i as f64, 1)).collect();
        assert_eq!(composition_count(&singles, 3), 165.0);
    }
}
