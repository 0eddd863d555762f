//! Self-tests behind the `check` command: derivative checks on assembled
//! MPC and MHE problems and the MPC equilibrium fixed point.

use crate::config::ControllerConfig;
use crate::integrator::{rk4_step_with_wave, StepConfig};
use crate::mhe::{model_outputs, MeasurementWindow, MheProblem, Sample};
use crate::nlp::{self, check_derivatives, NlpProblem, SolveStatus, SolverConfig};
use crate::nmpc::{build_ocp, MpcSignals};
use crate::params::PlantParameters;
use crate::plant::{equilibrium, DF, G_STAR, HP, NU, NX, OMEGA, PG_STAR, PPB};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub limit: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.value < self.limit
    }
}

fn perturbed(mut v: Vec<f64>, phase: f64) -> Vec<f64> {
    for (k, vk) in v.iter_mut().enumerate() {
        *vk += 1e-3 * (k as f64 * phase).sin();
    }
    v
}

/// Largest relative derivative error of the MPC problem away from
/// equilibrium, with efficiency cost and rate limits active. The weights
/// are scaled down uniformly: derivatives are linear in them, and a small
/// objective keeps the difference quotients out of round-off.
pub fn mpc_derivative_error(params: &PlantParameters, cfg: &ControllerConfig) -> Result<f64, String> {
    let mut c = cfg.mpc.clone();
    c.efficiency_cost = true;
    c.weights = c.weights.scaled(1e-5);
    c.weights.efficiency_factor = 10.0;
    c.delta_x_high = Some([0.1; NX]);
    let eq = equilibrium(0.7, params).map_err(|e| e.to_string())?;
    let mut x0 = eq.state.to_array();
    x0[DF] = 0.003;
    x0[HP] = 0.01;
    x0[OMEGA] += 0.02;
    let sig = MpcSignals { p_pb: -0.75, f_bar: 1.001, p_g_measured: 0.72 };
    let g = eq.state.g;
    let hist = vec![g, g + 0.01, g - 0.02, g, g + 0.03];
    let hist = &hist[hist.len().saturating_sub(c.history_len)..];
    let ocp = build_ocp(&x0, hist, &sig, &c, params, None).map_err(|e| e.to_string())?;
    let v = perturbed(ocp.initial_guess(), 0.7);
    Ok(check_derivatives(&ocp, &v).map_err(|e| e.to_string())?.max_rel_error)
}

/// Window simulated from a perturbed equilibrium with slowly varying inputs.
pub fn synthetic_window(params: &PlantParameters, len: usize) -> Result<(MeasurementWindow, Vec<[f64; NX]>), String> {
    let eq = equilibrium(0.8, params).map_err(|e| e.to_string())?;
    let step = StepConfig::for_plant(params);
    let mut x = eq.state.to_array();
    x[DF] = 0.002;
    x[OMEGA] += 0.01;
    x[HP] = 0.004;
    let mut w = MeasurementWindow::new(len, step.dt);
    let mut xs = Vec::new();
    let mut u_prev = eq.inputs.to_array();
    for k in 0..len {
        let t = k as f64 * step.dt;
        let y = model_outputs(&x, &u_prev, params).map_err(|e| e.to_string())?;
        w.push(Sample { time: t, y, u_before: u_prev }).map_err(|e| e.to_string())?;
        xs.push(x);
        let mut u: [f64; NU] = eq.inputs.to_array();
        u[PG_STAR] += 0.02 * (0.3 * t).sin();
        u[G_STAR] += 0.03 * (0.2 * t).cos();
        u[PPB] -= 0.01 * (0.1 * t).sin();
        x = rk4_step_with_wave(&x, &u, params, &step).map_err(|e| e.to_string())?;
        u_prev = u;
    }
    Ok((w, xs))
}

pub fn mhe_derivative_error(params: &PlantParameters, cfg: &ControllerConfig) -> Result<f64, String> {
    let (w, xs) = synthetic_window(params, cfg.mhe.horizon)?;
    let problem =
        MheProblem::new(&w, &cfg.mhe, params, StepConfig::for_plant(params), &xs[0]).map_err(|e| e.to_string())?;
    let v = perturbed(problem.initial_guess(), 1.3);
    Ok(check_derivatives(&problem, &v).map_err(|e| e.to_string())?.max_rel_error)
}

/// Distance of the first MPC input from the equilibrium input, and the
/// largest slack, when started at equilibrium with matching references.
pub fn mpc_fixed_point(params: &PlantParameters, cfg: &ControllerConfig) -> Result<(f64, f64), String> {
    let mut c = cfg.mpc.clone();
    c.p_g_star_ref = 0.8;
    let eq = equilibrium(0.8, params).map_err(|e| e.to_string())?;
    let sig = MpcSignals { p_pb: eq.inputs.p_pb, f_bar: params.vsg.f_star, p_g_measured: eq.p_g };
    let hist = vec![eq.state.g; c.history_len];
    let ocp = build_ocp(&eq.state.to_array(), &hist, &sig, &c, params, None).map_err(|e| e.to_string())?;
    let sol = nlp::solve(&ocp, &SolverConfig { max_iter: c.max_iter, ..SolverConfig::default() })
        .map_err(|e| e.to_string())?;
    if sol.status != SolveStatus::Converged {
        return Err(format!("solver stopped with {:?}", sol.status));
    }
    let (p, g) = ocp.first_input(&sol.x);
    let dist = (p - eq.inputs.p_g_star).abs().max((g - eq.inputs.g_star).abs());
    let slack = ocp.slacks(&sol.x).iter().flatten().fold(0.0f64, |m, e| m.max(e.abs()));
    Ok((dist, slack))
}

pub fn run_checks(params: &PlantParameters, cfg: &ControllerConfig) -> Result<Vec<Check>, String> {
    let (dist, slack) = mpc_fixed_point(params, cfg)?;
    Ok(vec![
        Check { name: "mpc derivative check (max rel. error)", value: mpc_derivative_error(params, cfg)?, limit: 1e-5 },
        Check { name: "mhe derivative check (max rel. error)", value: mhe_derivative_error(params, cfg)?, limit: 1e-5 },
        Check { name: "mpc equilibrium first input error", value: dist, limit: 1e-4 },
        Check { name: "mpc equilibrium max slack", value: slack, limit: 1e-8 },
    ])
}
