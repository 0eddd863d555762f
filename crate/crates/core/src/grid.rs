//! Grid-side models: the power-balance estimator, the inertia-weighted
//! average frequency and a two-area grid with one inter-area mode.

use serde::{Deserialize, Serialize};

use crate::ad::Real;
use crate::error::{GridError, PlantError};
use crate::integrator::rk4_step;
use crate::params::GridParams;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PowerBalanceEstimatorState {
    pub lp_f: f64,
    pub lp_fdot: f64,
}

/// Exact discretisation of `y' = w (x - y)` over `dt` with `x` held.
pub fn low_pass(y: f64, x: f64, corner: f64, dt: f64) -> f64 {
    let a = -(-corner * dt).exp_m1();
    y + a * (x - y)
}

/// Estimate the grid power balance from the converter power and the
/// measured frequency deviation and ROCOF.
pub fn estimate_power_balance(
    p_g: f64,
    df: f64,
    df_dot: f64,
    st: &PowerBalanceEstimatorState,
    grid: &GridParams,
    dt: f64,
) -> (f64, PowerBalanceEstimatorState) {
    let next = PowerBalanceEstimatorState {
        lp_f: low_pass(st.lp_f, df, grid.omega_f, dt),
        lp_fdot: low_pass(st.lp_fdot, df_dot, grid.omega_fdot, dt),
    };
    let p_pb = -p_g + next.lp_fdot / grid.swing_gain() + grid.d_m * next.lp_f;
    (p_pb, next)
}

/// Inertia-weighted mean of the generator frequencies.
pub fn average_frequency(inertias: &[f64], frequencies: &[f64]) -> Result<f64, GridError> {
    if inertias.len() != frequencies.len() {
        return Err(GridError::LengthMismatch { inertias: inertias.len(), frequencies: frequencies.len() });
    }
    if inertias.is_empty() {
        return Err(GridError::Empty);
    }
    if let Some(&h) = inertias.iter().find(|&&h| !(h > 0.0)) {
        return Err(GridError::NonPositiveInertia(h));
    }
    let total: f64 = inertias.iter().sum();
    let weighted: f64 = inertias.iter().zip(frequencies).map(|(h, w)| h * w).sum();
    Ok(weighted / total)
}

/// Two areas joined by one tie line, on the system power base.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoAreaParams {
    pub h_1: f64,
    pub h_2: f64,
    pub d_1: f64,
    pub d_2: f64,
    /// Tie-line synchronising power per radian.
    pub k_t: f64,
    /// Electrical base angular frequency [rad/s].
    pub omega_b: f64,
}

impl TwoAreaParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("h_1", self.h_1), ("h_2", self.h_2), ("k_t", self.k_t), ("omega_b", self.omega_b)] {
            if !(v > 0.0) {
                return Err(format!("two-area {name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("d_1", self.d_1), ("d_2", self.d_2)] {
            if !(v >= 0.0) {
                return Err(format!("two-area {name} must be non-negative, got {v}"));
            }
        }
        Ok(())
    }

    /// Inter-area mode frequency of the undamped linearisation [Hz].
    pub fn mode_frequency(&self) -> f64 {
        (self.k_t * (1.0 / (2.0 * self.h_1) + 1.0 / (2.0 * self.h_2)) * self.omega_b).sqrt()
            / (2.0 * std::f64::consts::PI)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TwoAreaState {
    pub df_1: f64,
    pub df_2: f64,
    /// Angle of area 1 relative to area 2 [rad].
    pub delta: f64,
}

impl TwoAreaState {
    pub fn tie_power(&self, gp: &TwoAreaParams) -> f64 {
        gp.k_t * self.delta.sin()
    }

    pub fn average_frequency(&self, gp: &TwoAreaParams) -> f64 {
        (gp.h_1 * self.df_1 + gp.h_2 * self.df_2) / (gp.h_1 + gp.h_2)
    }
}

/// Rates of `[df_1, df_2, delta]` for per-area net injections.
pub fn two_area_derivatives<T: Real>(x: &[T; 3], p_inj: &[T; 2], gp: &TwoAreaParams) -> [T; 3] {
    let tie = x[2].sin() * gp.k_t;
    [
        (p_inj[0] - x[0] * gp.d_1 - tie) / (2.0 * gp.h_1),
        (p_inj[1] - x[1] * gp.d_2 + tie) / (2.0 * gp.h_2),
        (x[0] - x[1]) * gp.omega_b,
    ]
}

/// One RK4 step of the two-area grid; `p_inj[0]` includes the plant's
/// contribution to area 1.
pub fn two_area_step(st: &TwoAreaState, gp: &TwoAreaParams, p_inj: [f64; 2], dt: f64) -> TwoAreaState {
    let x = [st.df_1, st.df_2, st.delta];
    let next = rk4_step(|x: &[f64; 3], u: &[f64; 2]| Ok::<_, PlantError>(two_area_derivatives(x, u, gp)), &x, &p_inj, dt)
        .expect("two-area dynamics are total");
    TwoAreaState { df_1: next[0], df_2: next[1], delta: next[2] }
}

/// Frequency jump in an area from a short power impulse of `power` lasting
/// `duration` seconds.
pub fn impulse_jump(power: f64, duration: f64, inertia: f64) -> f64 {
    power * duration / (2.0 * inertia)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::PlantParameters;

    fn gp() -> TwoAreaParams {
        TwoAreaParams { h_1: 6.5, h_2: 6.175, d_1: 1.0, d_2: 1.0, k_t: 0.294, omega_b: 100.0 * std::f64::consts::PI }
    }

    #[test]
    fn estimator_zero_in_zero_out() {
        let grid = PlantParameters::shipped_default().grid;
        let (p, st) = estimate_power_balance(0.0, 0.0, 0.0, &PowerBalanceEstimatorState::default(), &grid, 0.252);
        assert_eq!(p, 0.0);
        assert_eq!(st, PowerBalanceEstimatorState::default());
    }

    #[test]
    fn estimator_dc_gain_is_unity() {
        let grid = PlantParameters::shipped_default().grid;
        let mut st = PowerBalanceEstimatorState::default();
        let mut p = 0.0;
        for _ in 0..400 {
            (p, st) = estimate_power_balance(0.7, 0.002, 0.001, &st, &grid, 0.252);
        }
        let expected = -0.7 + 2.0 * grid.h_g * grid.s_n / grid.omega_s * 0.001 + grid.d_m * 0.002;
        assert!((p - expected).abs() < 1e-12);
    }

    #[test]
    fn low_pass_is_exact_exponential() {
        let y = low_pass(0.0, 1.0, 2.0, 0.5);
        assert!((y - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn average_frequency_examples() {
        assert_eq!(average_frequency(&[3.0], &[1.01]).unwrap(), 1.01);
        assert!((average_frequency(&[2.0, 2.0], &[1.01, 0.99]).unwrap() - 1.0).abs() < 1e-15);
        let hand = (6.5 * 1.002 + 6.175 * 0.998) / 12.675;
        assert!((average_frequency(&[6.5, 6.175], &[1.002, 0.998]).unwrap() - hand).abs() < 1e-15);
        assert_eq!(average_frequency(&[], &[]), Err(GridError::Empty));
        assert!(matches!(average_frequency(&[1.0], &[1.0, 2.0]), Err(GridError::LengthMismatch { .. })));
        assert!(matches!(average_frequency(&[1.0, -1.0], &[1.0, 2.0]), Err(GridError::NonPositiveInertia(_))));
    }

    #[test]
    fn two_area_rest_stays_at_rest() {
        let mut st = TwoAreaState::default();
        for _ in 0..100 {
            st = two_area_step(&st, &gp(), [0.0, 0.0], 0.02);
        }
        assert_eq!(st, TwoAreaState::default());
    }

    #[test]
    fn antisymmetric_impulse_on_identical_areas() {
        let mut g = gp();
        g.h_2 = g.h_1;
        let mut st = TwoAreaState { df_1: 0.001, df_2: -0.001, delta: 0.0 };
        for _ in 0..500 {
            st = two_area_step(&st, &g, [0.0, 0.0], 0.01);
            assert!((st.df_1 + st.df_2).abs() < 1e-15);
        }
    }
}
