use rayon::prelude::*;

use super::{
    class_payoff, mix_payoff, own_strategy_slope, target_probs_from_pmfs, ClassWeights, GridSpec, StrategyProfile,
};
use crate::game::{GameParams, PayoffSpec, RiskClass};
use crate::util::binomial_pmf_vec;

/// Absolute tolerance (utility units) for membership in an argmax set.
pub const TAU_TIE: f64 = 1e-9;
/// Largest unilateral class improvement allowed at a reported Nash point.
pub const TAU_NASH: f64 = 1e-9;

/// Class payoffs over the full strategy grid.
///
/// Values are stored row-major with the low-risk strategy as the row:
/// `index = i_low * len + j_high`.
#[derive(Debug, Clone)]
pub struct PayoffSurface {
    pub grid: GridSpec,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl PayoffSurface {
    pub fn compute(params: &GameParams, spec: &PayoffSpec, grid: GridSpec) -> Self {
        let n = grid.len();
        let others = params.group_size() - 1;
        let values = grid.values();
        // pmfs[size][grid index] = Binomial(size, grid value) pmf
        let pmfs: Vec<Vec<Vec<f64>>> = (0..=others)
            .map(|size| values.iter().map(|&p| binomial_pmf_vec(size, p)).collect())
            .collect();
        let weights = ClassWeights::new(params);
        let (risk_low, risk_high) = (params.risk(RiskClass::Low), params.risk(RiskClass::High));

        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut low_row = vec![0.0; n];
                let mut high_row = vec![0.0; n];
                for j in 0..n {
                    let (mut hl, mut hh) = (0.0, 0.0);
                    for n_low in 0..=others {
                        let (wl, wh) = (weights.low[n_low], weights.high[n_low]);
                        if wl == 0.0 && wh == 0.0 {
                            continue;
                        }
                        let t = target_probs_from_pmfs(params, &pmfs[n_low][i], &pmfs[others - n_low][j]);
                        if wl != 0.0 {
                            hl += wl * mix_payoff(spec, risk_low, values[i], t);
                        }
                        if wh != 0.0 {
                            hh += wh * mix_payoff(spec, risk_high, values[j], t);
                        }
                    }
                    low_row[j] = hl;
                    high_row[j] = hh;
                }
                (low_row, high_row)
            })
            .collect();

        let mut low = Vec::with_capacity(n * n);
        let mut high = Vec::with_capacity(n * n);
        for (l, h) in rows {
            low.extend(l);
            high.extend(h);
        }
        PayoffSurface { grid, low, high }
    }

    pub fn at(&self, class: RiskClass, i_low: usize, j_high: usize) -> f64 {
        let idx = i_low * self.grid.len() + j_high;
        match class {
            RiskClass::Low => self.low[idx],
            RiskClass::High => self.high[idx],
        }
    }

    /// Payoff of `class` when it plays grid index `own` against `opponent`.
    fn own_vs(&self, class: RiskClass, own: usize, opponent: usize) -> f64 {
        match class {
            RiskClass::Low => self.at(class, own, opponent),
            RiskClass::High => self.at(class, opponent, own),
        }
    }

    fn best_value(&self, class: RiskClass, opponent: usize) -> f64 {
        (0..self.grid.len())
            .map(|own| self.own_vs(class, own, opponent))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn best_response(&self, class: RiskClass) -> BestResponseCurve {
        let n = self.grid.len();
        let responses = (0..n)
            .map(|opp| {
                let best = self.best_value(class, opp);
                (0..n)
                    .filter(|&own| self.own_vs(class, own, opp) >= best - TAU_TIE)
                    .collect()
            })
            .collect();
        BestResponseCurve {
            class,
            grid: self.grid,
            responses,
        }
    }

    /// Largest gain either class could get by moving alone on the grid.
    pub fn residual(&self, i_low: usize, j_high: usize) -> f64 {
        let gain_low = self.best_value(RiskClass::Low, j_high) - self.at(RiskClass::Low, i_low, j_high);
        let gain_high = self.best_value(RiskClass::High, i_low) - self.at(RiskClass::High, i_low, j_high);
        gain_low.max(gain_high)
    }

    /// Grid cells where each class plays a member of its best-response set.
    pub fn nash_points(&self) -> Vec<NashPoint> {
        let low = self.best_response(RiskClass::Low);
        let high = self.best_response(RiskClass::High);
        let mut out = Vec::new();
        for (j, low_set) in low.responses.iter().enumerate() {
            for &i in low_set {
                if high.responses[i].contains(&j) {
                    out.push(NashPoint {
                        profile: StrategyProfile {
                            pi_low: self.grid.value(i),
                            pi_high: self.grid.value(j),
                        },
                        grid_index: (i, j),
                        residual: self.residual(i, j),
                        refined: None,
                    });
                }
            }
        }
        out.sort_by_key(|p| p.grid_index);
        out
    }
}

/// For every opponent-class grid value, the own-class grid indices whose
/// payoff is within [`TAU_TIE`] of the best.
#[derive(Debug, Clone, PartialEq)]
pub struct BestResponseCurve {
    pub class: RiskClass,
    pub grid: GridSpec,
    pub responses: Vec<Vec<usize>>,
}

impl BestResponseCurve {
    /// `(opponent_pi, response_min, response_max)` per grid value.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.responses.iter().enumerate().map(|(opp, set)| {
            let lo = set.iter().copied().min().unwrap_or(0);
            let hi = set.iter().copied().max().unwrap_or(0);
            (self.grid.value(opp), self.grid.value(lo), self.grid.value(hi))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NashPoint {
    pub profile: StrategyProfile,
    pub grid_index: (usize, usize),
    pub residual: f64,
    /// Continuous crossing of the two best-response curves near this cell,
    /// when one can be bracketed.
    pub refined: Option<StrategyProfile>,
}

impl NashPoint {
    pub fn gap(&self) -> f64 {
        self.profile.pi_high - self.profile.pi_low
    }
}

/// Best-response curves of both classes under log utility.
pub fn best_response_curves(params: &GameParams, grid: GridSpec) -> (BestResponseCurve, BestResponseCurve) {
    let surface = PayoffSurface::compute(params, &PayoffSpec::log(params), grid);
    (
        surface.best_response(RiskClass::Low),
        surface.best_response(RiskClass::High),
    )
}

/// Class-based Nash points on the grid, each refined where possible.
///
/// An empty list is a valid answer.
pub fn find_class_nash(params: &GameParams, grid: GridSpec) -> Vec<NashPoint> {
    let spec = PayoffSpec::log(params);
    let surface = PayoffSurface::compute(params, &spec, grid);
    surface
        .nash_points()
        .into_iter()
        .map(|mut p| {
            p.refined = refine_nash(params, &spec, grid, &p);
            p
        })
        .collect()
}

const REFINE_TOL: f64 = 1e-12;
const MAX_BISECTIONS: usize = 200;

/// Continuous best response of `class` against a fixed opponent strategy.
///
/// Scans the grid for the best own strategy, then bisects the sign change of
/// the exact own-strategy slope in the neighbouring cells.
fn continuous_best_response(
    params: &GameParams,
    spec: &PayoffSpec,
    grid: GridSpec,
    class: RiskClass,
    opponent: f64,
) -> f64 {
    let base = StrategyProfile {
        pi_low: 0.0,
        pi_high: 0.0,
    }
    .with(class.other(), opponent);
    let value = |x: f64| class_payoff(params, spec, class, &base.with(class, x));
    let slope = |x: f64| own_strategy_slope(params, spec, class, &base.with(class, x));

    let (best, _) = (0..grid.len()).fold((0, f64::NEG_INFINITY), |(bi, bv), i| {
        let v = value(grid.value(i));
        if v > bv {
            (i, v)
        } else {
            (bi, bv)
        }
    });
    let x = grid.value(best);
    let s = slope(x);
    let (mut lo, mut hi) = if s > 0.0 && best + 1 < grid.len() {
        (x, grid.value(best + 1))
    } else if s < 0.0 && best > 0 {
        (grid.value(best - 1), x)
    } else {
        return x;
    };
    if !(slope(lo) > 0.0 && slope(hi) < 0.0) {
        return x;
    }
    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= REFINE_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Solves `pi_H = BR_H(BR_L(pi_H))` in a small bracket around a grid Nash
/// cell. Returns `None` when no crossing is bracketed there; the grid value
/// then stands.
pub fn refine_nash(
    params: &GameParams,
    spec: &PayoffSpec,
    grid: GridSpec,
    point: &NashPoint,
) -> Option<StrategyProfile> {
    let br_low = |h: f64| continuous_best_response(params, spec, grid, RiskClass::Low, h);
    let br_high = |l: f64| continuous_best_response(params, spec, grid, RiskClass::High, l);
    let g = |h: f64| br_high(br_low(h)) - h;

    let eps = grid.epsilon();
    let centre = point.profile.pi_high;
    let mut lo = (centre - 2.0 * eps).max(0.0);
    let mut hi = (centre + 2.0 * eps).min(1.0);
    let (g_lo, g_hi) = (g(lo), g(hi));
    let root = if g_lo == 0.0 {
        lo
    } else if g_hi == 0.0 {
        hi
    } else if (g_lo > 0.0) != (g_hi > 0.0) {
        let lo_positive = g_lo > 0.0;
        for _ in 0..MAX_BISECTIONS {
            if hi - lo <= REFINE_TOL {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let gm = g(mid);
            if gm == 0.0 {
                lo = mid;
                hi = mid;
                break;
            }
            if (gm > 0.0) == lo_positive {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    } else {
        return None;
    };
    let pi_low = br_low(root);
    // A jump in a best response can fake a sign change; check the crossing.
    if (br_high(pi_low) - root).abs() > 1e-6 {
        return None;
    }
    StrategyProfile::new(pi_low, root).ok()
}
