use super::nash::{PayoffSurface, TAU_TIE};
use super::{GridSpec, StrategyProfile};
use crate::game::{GameParams, PayoffSpec, RiskClass};

/// Expected per-agent population welfare `z_L H_L + z_H H_H` under linear
/// utility over the strategy grid.
#[derive(Debug, Clone)]
pub struct WelfareGrid {
    pub grid: GridSpec,
    /// Row-major, low-risk strategy as the row.
    pub values: Vec<f64>,
    pub max: f64,
    /// Every cell within [`TAU_TIE`] of the maximum, sorted lexicographically.
    pub argmax: Vec<(usize, usize)>,
}

impl WelfareGrid {
    pub fn at(&self, i_low: usize, j_high: usize) -> f64 {
        self.values[i_low * self.grid.len() + j_high]
    }

    /// The lexicographically smallest maximizing profile.
    pub fn best(&self) -> StrategyProfile {
        let (i, j) = self.argmax[0];
        StrategyProfile {
            pi_low: self.grid.value(i),
            pi_high: self.grid.value(j),
        }
    }
}

pub fn welfare_grid(params: &GameParams, grid: GridSpec) -> WelfareGrid {
    let surface = PayoffSurface::compute(params, &PayoffSpec::linear(params), grid);
    let (zl, zh) = (
        params.class_fraction(RiskClass::Low),
        params.class_fraction(RiskClass::High),
    );
    let values: Vec<f64> = surface
        .low
        .iter()
        .zip(&surface.high)
        .map(|(l, h)| zl * l + zh * h)
        .collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = grid.len();
    let argmax = values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v >= max - TAU_TIE)
        .map(|(k, _)| (k / n, k % n))
        .collect();
    WelfareGrid {
        grid,
        values,
        max,
        argmax,
    }
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

    #[test]
    fn full_cooperation_costs_the_contribution() {
        let g = params(0.7, 0.1);
        let w = welfare_grid(&g, GridSpec::with_steps(10));
        assert!((w.at(10, 10) - (-0.1)).abs() < 1e-15);
    }

    #[test]
    fn values_stay_within_bounds() {
        let g = params(0.9, 0.1);
        let w = welfare_grid(&g, GridSpec::with_steps(50));
        let lower = -0.7 - 0.1;
        assert!(w.values.iter().all(|&v| v <= 0.0 && v >= lower));
        for &(i, j) in &w.argmax {
            assert!(w.at(i, j) >= w.max - TAU_TIE);
        }
    }

    #[test]
    fn symmetric_without_diversity() {
        let g = params(0.3, 0.0);
        let w = welfare_grid(&g, GridSpec::with_steps(40));
        for i in 0..=40 {
            for j in 0..=40 {
                assert!((w.at(i, j) - w.at(j, i)).abs() < 1e-12);
            }
        }
    }
}
