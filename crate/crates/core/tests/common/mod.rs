#![allow(dead_code)]

use crd_core::{GameParams, GameSettings, RiskClass};

pub fn small_params(risk: f64, diversity: f64) -> GameParams {
    GameSettings {
        population_size: 12,
        group_size: 4,
        min_cooperators: 2,
        risk,
        diversity,
        ..GameSettings::default()
    }
    .build()
    .unwrap()
}

/// Log-utility payoff written out from the raw settings.
fn log_payoff(s: &GameSettings, cooperate: bool, disaster: bool) -> f64 {
    let (c, p) = (s.contribution, s.penalty);
    match (cooperate, disaster) {
        (true, false) => (1.0 - c).ln(),
        (false, false) => 0.0,
        (true, true) => ((1.0 - c) * (1.0 - p)).ln(),
        (false, true) => (1.0 - p).ln(),
    }
}

fn expected_payoff(s: &GameSettings, risk: f64, cooperate: bool, cooperators: usize) -> f64 {
    if cooperators >= s.min_cooperators {
        log_payoff(s, cooperate, false)
    } else {
        risk * log_payoff(s, cooperate, true) + (1.0 - risk) * log_payoff(s, cooperate, false)
    }
}

pub fn subsets(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if items.len() < k {
        return vec![];
    }
    let mut with: Vec<Vec<usize>> = subsets(&items[1..], k - 1)
        .into_iter()
        .map(|mut s| {
            s.insert(0, items[0]);
            s
        })
        .collect();
    with.extend(subsets(&items[1..], k));
    with
}

/// Focal agent's expected log payoff with its own cooperation probability
/// `own`, averaged over every possible set of group-mates and every action
/// vector, weighting each by its probability.
pub fn brute_focal_payoff(params: &GameParams, strategies: &[f64], focal: usize, own: f64) -> f64 {
    let s = params.settings();
    let z = strategies.len();
    let risk = params.risk(params.class_of(focal));
    let others: Vec<usize> = (0..z).filter(|&i| i != focal).collect();
    let groups = subsets(&others, s.group_size - 1);
    let mut total = 0.0;
    for g in &groups {
        for mask in 0u32..(1 << g.len()) {
            let mut prob = 1.0;
            let mut coop = 0;
            for (bit, &j) in g.iter().enumerate() {
                if mask >> bit & 1 == 1 {
                    prob *= strategies[j];
                    coop += 1;
                } else {
                    prob *= 1.0 - strategies[j];
                }
            }
            total += prob
                * (own * expected_payoff(s, risk, true, coop + 1)
                    + (1.0 - own) * expected_payoff(s, risk, false, coop));
        }
    }
    total / groups.len() as f64
}

/// Class payoff by exhaustive enumeration: every agent plays its class strategy.
pub fn brute_class_payoff(params: &GameParams, class: RiskClass, pi_low: f64, pi_high: f64) -> f64 {
    let z = params.population_size();
    let strategies: Vec<f64> = (0..z)
        .map(|i| match params.class_of(i) {
            RiskClass::Low => pi_low,
            RiskClass::High => pi_high,
        })
        .collect();
    let focal = (0..z).find(|&i| params.class_of(i) == class).unwrap();
    brute_focal_payoff(params, &strategies, focal, strategies[focal])
}

pub fn brute_deviation(params: &GameParams, strategies: &[f64], deviant: usize, proposed: f64) -> f64 {
    brute_focal_payoff(params, strategies, deviant, proposed)
        - brute_focal_payoff(params, strategies, deviant, strategies[deviant])
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Adjacent steps that go the wrong way: `(count, largest magnitude)`.
/// `increasing` selects the expected direction.
pub fn inversions(values: &[f64], increasing: bool) -> (usize, f64) {
    let mut count = 0;
    let mut worst: f64 = 0.0;
    for w in values.windows(2) {
        let step = if increasing { w[0] - w[1] } else { w[1] - w[0] };
        if step > 0.0 {
            count += 1;
            worst = worst.max(step);
        }
    }
    (count, worst)
}
