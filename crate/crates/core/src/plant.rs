//! Continuous-time plant equations.
//!
//! Every function is generic over [`Real`] so the same transcription serves
//! the simulator (`f64`) and the optimisers (dual numbers).

use serde::{Deserialize, Serialize};

use crate::ad::{cst, Real};
use crate::error::PlantError;
use crate::params::{EfficiencyAngle, GridParams, HydraulicParams, PlantParameters, TurbineParams, VsgParams};

/// Number of entries in a state vector.
pub const NX: usize = 7;
/// Number of entries in an input vector.
pub const NU: usize = 3;

/// State vector indices.
pub const DF: usize = 0;
pub const G: usize = 1;
pub const Q: usize = 2;
pub const QHR: usize = 3;
pub const HST: usize = 4;
pub const OMEGA: usize = 5;
pub const HP: usize = 6;

/// Input vector indices.
pub const PG_STAR: usize = 0;
pub const G_STAR: usize = 1;
pub const PPB: usize = 2;

pub const STATE_NAMES: [&str; NX] = ["df", "g", "q", "q_hr", "h_st", "omega", "h_p"];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    /// Grid frequency deviation f - f*.
    pub df: f64,
    /// Guide-vane opening.
    pub g: f64,
    /// Penstock flow.
    pub q: f64,
    /// Head-race tunnel flow.
    pub q_hr: f64,
    /// Surge tank head.
    pub h_st: f64,
    /// Turbine speed.
    pub omega: f64,
    /// Current penstock pressure-wave value.
    pub h_p: f64,
}

impl PlantState {
    pub fn to_array(&self) -> [f64; NX] {
        [self.df, self.g, self.q, self.q_hr, self.h_st, self.omega, self.h_p]
    }

    pub fn from_array(x: &[f64; NX]) -> Self {
        Self { df: x[DF], g: x[G], q: x[Q], q_hr: x[QHR], h_st: x[HST], omega: x[OMEGA], h_p: x[HP] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantInputs {
    pub p_g_star: f64,
    pub g_star: f64,
    /// Grid power balance excluding the plant; positive raises frequency.
    pub p_pb: f64,
}

impl PlantInputs {
    pub fn to_array(&self) -> [f64; NU] {
        [self.p_g_star, self.g_star, self.p_pb]
    }

    pub fn from_array(u: &[f64; NU]) -> Self {
        Self { p_g_star: u[PG_STAR], g_star: u[G_STAR], p_pb: u[PPB] }
    }
}

/// Guide-vane inlet angle alpha_1 = asin((Q_R/Q_Rt) g sin(alpha_1R)).
pub fn inlet_angle<T: Real>(g: T, tp: &TurbineParams) -> Result<T, PlantError> {
    let arg = g * (tp.flow_ratio() * tp.alpha_1r.sin());
    if !(-1.0..=1.0).contains(&arg.val()) {
        return Err(PlantError::InletAngleDomain { g: g.val(), argument: arg.val() });
    }
    Ok(arg.asin())
}

/// Mechanical turbine power from the Euler turbine equation.
pub fn turbine_power<T: Real>(q: T, g: T, omega: T, h: T, tp: &TurbineParams) -> Result<T, PlantError> {
    if g.val() <= 0.0 {
        return Err(PlantError::NonPositiveGate(g.val()));
    }
    if h.val() <= 0.0 {
        return Err(PlantError::NonPositiveHead(h.val()));
    }
    let a1 = inlet_angle(g, tp)?;
    let bracket = q / g * tp.xi * (a1.sin() * tp.alpha_1r.tan() + a1.cos()) - omega * tp.psi;
    Ok(bracket * q * omega / h * (tp.flow_ratio() / tp.head_ratio()))
}

/// Radicand sigma*(omega^2 - 1) of the efficiency formula.
fn efficiency_radicand<T: Real>(omega: T, tp: &TurbineParams) -> T {
    (omega * omega - 1.0) * tp.sigma
}

fn efficiency_bracket<T: Real>(g: T, tp: &TurbineParams) -> Result<T, PlantError> {
    let kappa = g * tp.flow_ratio();
    let angle = match tp.efficiency_angle {
        EfficiencyAngle::Inlet => inlet_angle(g, tp)?,
        EfficiencyAngle::Rated => cst(tp.alpha_1r),
    };
    let s = angle.sin();
    let arg = kappa * s;
    if !(-1.0..=1.0).contains(&arg.val()) {
        return Err(PlantError::InletAngleDomain { g: g.val(), argument: arg.val() });
    }
    Ok(arg.asin().cos() + kappa * angle.tan() * s)
}

/// Turbine efficiency. Fails when sigma*(omega^2 - 1) < 0.
pub fn turbine_efficiency<T: Real>(omega: T, g: T, tp: &TurbineParams) -> Result<T, PlantError> {
    let rad = efficiency_radicand(omega, tp);
    if rad.val() < 0.0 {
        return Err(PlantError::EfficiencyDomain(rad.val()));
    }
    efficiency_with_root(omega, g, rad, tp)
}

/// Turbine efficiency with the square root replaced by 0 wherever its
/// radicand is not positive. This is the form used as a cost term.
pub fn turbine_efficiency_clamped<T: Real>(omega: T, g: T, tp: &TurbineParams) -> Result<T, PlantError> {
    let rad = efficiency_radicand(omega, tp);
    efficiency_with_root(omega, g, rad, tp)
}

fn efficiency_with_root<T: Real>(omega: T, g: T, rad: T, tp: &TurbineParams) -> Result<T, PlantError> {
    let bracket = efficiency_bracket(g, tp)?;
    // sqrt(0) has an unbounded derivative.
    let root = if rad.val() > 0.0 { rad.sqrt() } else { T::zero() };
    Ok(omega * root * bracket * tp.xi - omega * tp.psi)
}

/// Optimal turbine speed as a function of converter power.
pub fn optimal_speed<T: Real>(p_g: T) -> T {
    let p = p_g.val();
    if p > 0.85 {
        (p_g - 0.85) * 0.6 + 1.0
    } else if p > 0.73 {
        (p_g - 0.85) * 0.3 + 1.0
    } else {
        (p_g - 0.73) * 0.15 + 0.964
    }
}

/// VSG output power law.
pub fn vsg_power<T: Real>(df: T, df_dot: T, p_g_star: T, vsg: &VsgParams) -> T {
    df * vsg.signed_kp() + df_dot * vsg.signed_kd() + p_g_star
}

/// Right-hand side of the swing equation.
pub fn swing_rate<T: Real>(p_g: T, p_pb: T, df: T, grid: &GridParams) -> T {
    (p_g + p_pb - df * grid.d_m) * grid.swing_gain()
}

/// Converter power with the VSG derivative term fed by the swing equation,
/// solved in closed form since P_g is affine in itself.
pub fn solve_vsg_power<T: Real>(df: T, p_pb: T, p_g_star: T, vsg: &VsgParams, grid: &GridParams) -> Result<T, PlantError> {
    let c = grid.swing_gain();
    let kd = vsg.signed_kd();
    let denom = 1.0 - kd * c;
    if denom.abs() < 1e-12 {
        return Err(PlantError::SingularVsgLoop(denom));
    }
    let num = df * vsg.signed_kp() + (p_pb - df * grid.d_m) * (kd * c) + p_g_star;
    Ok(num / denom)
}

/// Penstock wave recursion, stepped once per round trip 2*T_e.
pub fn wave_update<T: Real>(h_p_n: T, q_n: T, q_n1: T, z_0: f64) -> T {
    -(q_n1 - q_n) * z_0 - h_p_n
}

/// Turbine head including the wave term.
pub fn turbine_head<T: Real>(h_st: T, q: T, q_hr: T, h_p: T, hy: &HydraulicParams) -> T {
    let dq = q_hr - q;
    h_st - dq * dq * hy.f_0 - q * q * hy.f_p1 + h_p
}

/// Algebraic quantities evaluated alongside the state derivatives.
#[derive(Debug, Clone, Copy)]
pub struct Algebraic<T> {
    pub h: T,
    pub p_m: T,
    pub p_g: T,
    pub df_dot: T,
}

/// Converter power, head, mechanical power and ROCOF at a state.
pub fn algebraic<T: Real>(x: &[T; NX], u: &[T; NU], p: &PlantParameters) -> Result<Algebraic<T>, PlantError> {
    let h = turbine_head(x[HST], x[Q], x[QHR], x[HP], &p.hydraulic);
    let p_m = turbine_power(x[Q], x[G], x[OMEGA], h, &p.turbine)?;
    let p_g = solve_vsg_power(x[DF], u[PPB], u[PG_STAR], &p.vsg, &p.grid)?;
    let df_dot = swing_rate(p_g, u[PPB], x[DF], &p.grid);
    Ok(Algebraic { h, p_m, p_g, df_dot })
}

/// Time derivatives of the state. The wave value is a discrete state and
/// its entry is 0.
pub fn plant_derivatives<T: Real>(x: &[T; NX], u: &[T; NU], p: &PlantParameters) -> Result<[T; NX], PlantError> {
    let omega = x[OMEGA];
    if omega.val() <= 0.0 {
        return Err(PlantError::NonPositiveSpeed(omega.val()));
    }
    let hy = &p.hydraulic;
    let tp = &p.turbine;
    let m = &p.machine;
    let a = algebraic(x, u, p)?;
    let (q, q_hr, h_st, g) = (x[Q], x[QHR], x[HST], x[G]);
    let dq = q_hr - q;

    let dh_st = dq / hy.c_s;
    let dq_hr = (-h_st + 1.0 + dq * dq * hy.f_0 - q_hr * q_hr * hy.f_p2) / hy.t_w2;
    let qg = q / g;
    let dq_pen = (a.h * tp.head_ratio() - (omega * omega - 1.0) * tp.sigma - qg * qg) / (tp.flow_ratio() * hy.t_w1);
    let dg = (u[G_STAR] - g) / m.t_g;
    let omega_star = optimal_speed(a.p_g);
    let domega = ((a.p_m - a.p_g) / omega - (omega_star - omega) * m.d) / (2.0 * m.h);

    let mut dx = [T::zero(); NX];
    dx[DF] = a.df_dot;
    dx[G] = dg;
    dx[Q] = dq_pen;
    dx[QHR] = dq_hr;
    dx[HST] = dh_st;
    dx[OMEGA] = domega;
    Ok(dx)
}

/// Derivatives with the wave value treated as zero, so the head and the
/// turbine power within an integration step follow the rigid column.
pub fn rigid_derivatives<T: Real>(x: &[T; NX], u: &[T; NU], p: &PlantParameters) -> Result<[T; NX], PlantError> {
    let mut xr = *x;
    xr[HP] = T::zero();
    plant_derivatives(&xr, u, p)
}

/// Steady operating point with converter power `p_g` at speed
/// `optimal_speed(p_g)` and no frequency deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibrium {
    pub state: PlantState,
    pub inputs: PlantInputs,
    pub h: f64,
    pub p_m: f64,
    pub p_g: f64,
}

/// Steady penstock flow for a given opening and speed, with h_p = 0 and
/// q = q_hr.
pub fn steady_flow(g: f64, omega: f64, p: &PlantParameters) -> f64 {
    let hy = &p.hydraulic;
    let a = p.turbine.head_ratio();
    let drive = a - p.turbine.sigma * (omega * omega - 1.0);
    (drive / (1.0 / (g * g) + a * (hy.f_p1 + hy.f_p2))).max(0.0).sqrt()
}

fn steady_power(g: f64, omega: f64, p: &PlantParameters) -> Result<(f64, f64, f64), PlantError> {
    let q = steady_flow(g, omega, p);
    let h_st = 1.0 - p.hydraulic.f_p2 * q * q;
    let h = turbine_head(h_st, q, q, 0.0, &p.hydraulic);
    Ok((turbine_power(q, g, omega, h, &p.turbine)?, q, h_st))
}

/// Find the equilibrium delivering `p_g` by bisection on the opening.
pub fn equilibrium(p_g: f64, p: &PlantParameters) -> Result<Equilibrium, PlantError> {
    let omega = optimal_speed(p_g);
    let (mut lo, mut hi) = (1e-3, p.turbine.g_max);
    let (p_hi, _, _) = steady_power(hi, omega, p)?;
    if p_hi < p_g {
        return Err(PlantError::NonPositiveGate(hi));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (pm, _, _) = steady_power(mid, omega, p)?;
        if pm < p_g {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 {
            break;
        }
    }
    let g = 0.5 * (lo + hi);
    let (p_m, q, h_st) = steady_power(g, omega, p)?;
    let h = turbine_head(h_st, q, q, 0.0, &p.hydraulic);
    // Close the torque balance exactly: the converter reference absorbs the
    // last bits of bisection error.
    let state = PlantState { df: 0.0, g, q, q_hr: q, h_st, omega, h_p: 0.0 };
    let inputs = PlantInputs { p_g_star: p_m, g_star: g, p_pb: -p_m };
    Ok(Equilibrium { state, inputs, h, p_m, p_g: p_m })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> PlantParameters {
        PlantParameters::shipped_default()
    }

    #[test]
    fn inlet_angle_trivial_points() {
        let tp = params().turbine;
        assert_eq!(inlet_angle(0.0, &tp).unwrap(), 0.0);
        assert!((inlet_angle(1.0, &tp).unwrap() - tp.alpha_1r).abs() < 1e-15);
    }

    #[test]
    fn inlet_angle_domain_error() {
        let mut tp = params().turbine;
        tp.alpha_1r = 1.4;
        assert!(matches!(inlet_angle(1.2, &tp), Err(PlantError::InletAngleDomain { .. })));
    }

    #[test]
    fn turbine_power_vanishes_with_flow_or_speed() {
        let tp = params().turbine;
        assert_eq!(turbine_power(0.0, 0.7, 1.0, 1.0, &tp).unwrap(), 0.0);
        assert_eq!(turbine_power(0.7, 0.7, 0.0, 1.0, &tp).unwrap(), 0.0);
        assert!(turbine_power(0.7, 0.0, 1.0, 1.0, &tp).is_err());
        assert!(turbine_power(0.7, 0.7, 1.0, 0.0, &tp).is_err());
    }

    #[test]
    fn rated_point_power_is_one() {
        let tp = params().turbine;
        let pm = turbine_power(1.0f64, 1.0, 1.0, 1.0, &tp).unwrap();
        assert!((pm - 1.0).abs() < 1e-3, "{pm}");
    }

    #[test]
    fn efficiency_at_synchronous_speed() {
        let tp = params().turbine;
        assert!((turbine_efficiency(1.0, 0.8, &tp).unwrap() + tp.psi).abs() < 1e-15);
        assert!(turbine_efficiency(0.0, 0.8, &tp).is_err());
        assert_eq!(turbine_efficiency_clamped(0.0, 0.8, &tp).unwrap(), 0.0);
    }

    #[test]
    fn optimal_speed_breakpoints() {
        assert_eq!(optimal_speed(0.85), 1.0);
        assert_eq!(optimal_speed(0.73), 0.964);
        assert!((optimal_speed(1.0f64) - 1.09).abs() < 1e-15);
    }

    #[test]
    fn vsg_examples() {
        let mut v = params().vsg;
        assert_eq!(vsg_power(0.0, 0.0, 0.8, &v), 0.8);
        v.droop_sign = 1.0;
        v.inertia_sign = 1.0;
        v.k_vsg_p = 20.0;
        assert!((vsg_power(-0.01f64, 0.0, 0.8, &v) - 0.6).abs() < 1e-15);
        v.k_vsg_p = 0.0;
        v.k_vsg_d = 2.0;
        assert!((vsg_power(0.0f64, 0.05, 0.0, &v) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn vsg_loop_is_consistent() {
        let p = params();
        let (df, ppb, pstar) = (0.003f64, -0.7, 0.75);
        let pg = solve_vsg_power(df, ppb, pstar, &p.vsg, &p.grid).unwrap();
        let rocof = swing_rate(pg, ppb, df, &p.grid);
        assert!((vsg_power(df, rocof, pstar, &p.vsg) - pg).abs() < 1e-14);
    }

    #[test]
    fn wave_alternates() {
        let mut h = 0.02;
        for _ in 0..5 {
            let next = wave_update(h, 0.8, 0.8, 0.3);
            assert_eq!(next, -h);
            h = next;
        }
        assert!((wave_update(0.0f64, 0.8, 0.9, 0.3) + 0.03).abs() < 1e-15);
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let p = params();
        for &pg in &[0.3, 0.6, 0.8, 0.85, 0.95] {
            let eq = equilibrium(pg, &p).unwrap();
            let dx = plant_derivatives(&eq.state.to_array(), &eq.inputs.to_array(), &p).unwrap();
            let n = dx.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(n < 1e-12, "p_g {pg}: {dx:?}");
        }
    }

    #[test]
    fn surge_tank_fills_when_tunnel_flow_exceeds_penstock() {
        let p = params();
        let eq = equilibrium(0.8, &p).unwrap();
        let mut x = eq.state.to_array();
        x[QHR] += 0.05;
        let dx = plant_derivatives(&x, &eq.inputs.to_array(), &p).unwrap();
        assert!(dx[HST] > 0.0);
    }

    #[test]
    fn dual_derivative_matches_difference() {
        use crate::ad::{seed, split};
        let p = params();
        let eq = equilibrium(0.8, &p).unwrap();
        let mut x = eq.state.to_array();
        x[QHR] += 0.02;
        x[OMEGA] = 1.03;
        let u = eq.inputs.to_array();
        let xd = seed(&x);
        let ud = u.map(num_dual::DualSVec64::<NX>::from);
        let dx = plant_derivatives(&xd, &ud, &p).unwrap();
        for (i, out) in dx.iter().enumerate() {
            let (_, grad) = split(out);
            for j in 0..NX {
                let mut xp = x;
                let mut xm = x;
                xp[j] += 1e-6;
                xm[j] -= 1e-6;
                let fp = plant_derivatives(&xp, &u, &p).unwrap()[i];
                let fm = plant_derivatives(&xm, &u, &p).unwrap()[i];
                let fd = (fp - fm) / 2e-6;
                assert!((fd - grad[j]).abs() < 1e-6 * (1.0 + fd.abs()), "d{i}/d{j}: {fd} vs {}", grad[j]);
            }
        }
    }
}
