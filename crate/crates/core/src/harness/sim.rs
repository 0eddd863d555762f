//! Closed-loop simulation of one scenario.

use std::collections::VecDeque;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::scenario::{ControllerKind, EstimatorKind, Event, Scenario};
use super::trace::Trace;
use super::HarnessError;
use crate::config::ControllerConfig;
use crate::error::PlantError;
use crate::grid::{estimate_power_balance, impulse_jump, PowerBalanceEstimatorState, TwoAreaParams};
use crate::integrator::{apply_wave_correction, rk4_step, StepConfig};
use crate::mhe::{model_outputs, Mhe, MheStatus, Sample, NY};
use crate::nmpc::{Mpc, MpcError, MpcSignals, MpcStatus, NSLACK, SLACK_NAMES};
use crate::params::PlantParameters;
use crate::plant::{algebraic, equilibrium, rigid_derivatives, Equilibrium, DF, G_STAR, NU, NX, PG_STAR, PPB, STATE_NAMES};

/// What a controller returns for one control step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlAction {
    pub p_g_star: f64,
    pub g_star: f64,
    pub fallback: bool,
    pub iterations: usize,
    pub kkt: f64,
    pub max_slack: [f64; NSLACK],
}

/// Anything that maps an estimated state and measured signals to the two
/// plant setpoints.
pub trait Controller {
    fn name(&self) -> &str;
    fn control(&mut self, x_hat: &[f64; NX], g_history: &[f64], signals: &MpcSignals) -> Result<ControlAction, MpcError>;
}

impl Controller for Mpc {
    fn name(&self) -> &str {
        "mpc"
    }

    fn control(&mut self, x_hat: &[f64; NX], g_history: &[f64], signals: &MpcSignals) -> Result<ControlAction, MpcError> {
        let out = self.solve(x_hat, g_history, signals)?;
        Ok(ControlAction {
            p_g_star: out.p_g_star,
            g_star: out.g_star,
            fallback: out.status == MpcStatus::Fallback,
            iterations: out.diagnostics.iterations,
            kkt: out.diagnostics.kkt,
            max_slack: out.diagnostics.max_slack,
        })
    }
}

/// Constant converter reference and a fixed gate; the VSG alone responds.
#[derive(Debug, Clone, Copy)]
pub struct Baseline {
    pub p_g_star: f64,
    pub g_star: f64,
}

impl Controller for Baseline {
    fn name(&self) -> &str {
        "baseline"
    }

    fn control(&mut self, _: &[f64; NX], _: &[f64], _: &MpcSignals) -> Result<ControlAction, MpcError> {
        Ok(ControlAction {
            p_g_star: self.p_g_star,
            g_star: self.g_star,
            fallback: false,
            iterations: 0,
            kkt: 0.0,
            max_slack: [0.0; NSLACK],
        })
    }
}

/// Everything fixed for a run after loading the scenario's files.
#[derive(Debug, Clone)]
pub struct Setup {
    pub scenario: Scenario,
    pub params: PlantParameters,
    pub controller: ControllerConfig,
}

impl Setup {
    pub fn load(scenario: Scenario) -> Result<Self, HarnessError> {
        let mut params = match &scenario.parameters {
            Some(p) => PlantParameters::from_file(scenario.resolve(p))?,
            None => PlantParameters::shipped_default(),
        };
        let mut controller = match &scenario.controller {
            Some(p) => ControllerConfig::from_file(scenario.resolve(p))?,
            None => ControllerConfig::shipped_default(),
        };
        scenario.validate(params.wave_step())?;
        if let Some(ta) = &scenario.two_area {
            params.grid = area_one_grid(&params, &ta.grid, ta.plant_share);
            params.validate()?;
        }
        let t = &scenario.toggles;
        controller.mpc.pod_enabled = t.pod;
        controller.mpc.wave_model = t.wave;
        controller.mpc.efficiency_cost = t.efficiency;
        Ok(Self { scenario, params, controller })
    }
}

/// Area 1 of the two-area grid seen through the plant's swing equation on
/// the plant base.
pub fn area_one_grid(p: &PlantParameters, ta: &TwoAreaParams, plant_share: f64) -> crate::params::GridParams {
    let s_n = 1.0 / plant_share;
    crate::params::GridParams { h_g: ta.h_1, s_n, omega_s: 1.0, d_m: ta.d_1 * s_n, ..p.grid }
}

pub fn trace_columns(two_area: bool) -> Vec<String> {
    let mut c: Vec<String> = vec!["t".into()];
    c.extend(STATE_NAMES.iter().map(|s| s.to_string()));
    for s in ["h", "p_m", "p_g", "p_pb", "p_pb_est", "disturbance", "p_g_star", "g_star"] {
        c.push(s.into());
    }
    c.extend(STATE_NAMES.iter().map(|s| format!("est_{s}")));
    c.extend(SLACK_NAMES.iter().map(|s| format!("slack_{s}")));
    for s in ["mpc_fallback", "mpc_iter", "mpc_kkt", "mhe_open_loop", "f_bar"] {
        c.push(s.into());
    }
    if two_area {
        for s in ["df_2", "delta", "p_tie"] {
            c.push(s.into());
        }
    }
    c
}

/// Truth model: plant plus either a fixed power balance or the second
/// area and tie line.
#[derive(Debug, Clone)]
struct Truth {
    x: [f64; NX],
    /// Power balance in plant p.u. (single area).
    p_pb: f64,
    /// Net injections in system p.u. (two area).
    inj: [f64; 2],
    df_2: f64,
    delta: f64,
}

enum Grid<'a> {
    Single,
    Two { gp: &'a TwoAreaParams, s_n: f64 },
}

impl Grid<'_> {
    fn p_pb(&self, truth_pb: f64, inj: &[f64; 2], delta: f64) -> f64 {
        match self {
            Grid::Single => truth_pb,
            Grid::Two { gp, s_n } => s_n * (inj[0] - gp.k_t * delta.sin()),
        }
    }
}

/// Output of a finished (or aborted) run.
#[derive(Debug)]
pub struct RunOutcome {
    pub trace: Trace,
    /// Control steps completed.
    pub steps_done: usize,
    pub steps_planned: usize,
    pub control_seconds: f64,
    pub estimator_seconds: f64,
    pub error: Option<HarnessError>,
}

pub fn simulate(setup: &Setup) -> RunOutcome {
    let s = &setup.scenario;
    let p = &setup.params;
    let dt = p.wave_step();
    let steps = s.steps(dt).unwrap_or(0);
    let two = s.two_area.is_some();
    let mut trace = Trace::new(trace_columns(two));
    let mut outcome = RunOutcome {
        trace: Trace::default(),
        steps_done: 0,
        steps_planned: steps,
        control_seconds: 0.0,
        estimator_seconds: 0.0,
        error: None,
    };
    let result = run_loop(setup, steps, &mut trace, &mut outcome);
    outcome.steps_done = trace.rows.len();
    outcome.trace = trace;
    outcome.error = result.err();
    outcome
}

fn run_loop(setup: &Setup, steps: usize, trace: &mut Trace, out: &mut RunOutcome) -> Result<(), HarnessError> {
    let s = &setup.scenario;
    let p = &setup.params;
    let dt = p.wave_step();
    let eq: Equilibrium = equilibrium(s.p_g0, p)?;
    let x_eq = eq.state.to_array();
    let u_eq = eq.inputs.to_array();

    let grid = match &s.two_area {
        Some(ta) => Grid::Two { gp: &ta.grid, s_n: 1.0 / ta.plant_share },
        None => Grid::Single,
    };
    let mut truth = Truth {
        x: x_eq,
        p_pb: u_eq[PPB],
        inj: match &grid {
            Grid::Two { s_n, .. } => [u_eq[PPB] / s_n, 0.0],
            Grid::Single => [0.0; 2],
        },
        df_2: 0.0,
        delta: 0.0,
    };
    let plant_base = s.system_base_mva / p.grid.s_n;
    let mut disturbance = 0.0;

    let mut controller: Box<dyn Controller> = match s.toggles.controller {
        ControllerKind::Mpc => {
            Box::new(Mpc::new(setup.controller.mpc.clone(), *p, [u_eq[PG_STAR], u_eq[G_STAR]]))
        }
        ControllerKind::Baseline => Box::new(Baseline { p_g_star: u_eq[PG_STAR], g_star: u_eq[G_STAR] }),
    };
    let mhe_step = StepConfig::for_plant(p);
    let mut mhe = match s.toggles.estimator {
        EstimatorKind::Mhe => Some(Mhe::new(setup.controller.mhe.clone(), *p, mhe_step, x_eq)),
        EstimatorKind::None => None,
    };
    let y_eq = model_outputs(&x_eq, &u_eq, p)?;
    if let Some(m) = mhe.as_mut() {
        let n = m.cfg.horizon;
        for i in 0..n - 1 {
            let time = -((n - 1 - i) as f64) * dt;
            m.push(Sample { time, y: y_eq, u_before: u_eq })?;
        }
    }
    let sigma = setup.controller.mhe.output_noise_sigma();
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let normals: Vec<Normal<f64>> = sigma.iter().map(|&sd| Normal::new(0.0, sd).expect("positive sigma")).collect();

    let history_len = setup.controller.mpc.history_len;
    let mut g_hist: VecDeque<f64> = std::iter::repeat_n(u_eq[G_STAR], history_len).collect();
    let mut pbe = PowerBalanceEstimatorState::default();
    let mut p_pb_est = u_eq[PPB];
    let mut applied = [u_eq[PG_STAR], u_eq[G_STAR]];
    let mut next_event = 0;
    let wave = StepConfig::for_plant(p);

    for k in 0..steps {
        let t = k as f64 * dt;
        while next_event < s.events.len() && s.events[next_event].time() <= t + 1e-9 {
            apply_event(&s.events[next_event], &mut truth, &grid, p, plant_base, &mut disturbance);
            next_event += 1;
        }
        let p_pb = grid.p_pb(truth.p_pb, &truth.inj, truth.delta);
        let u_meas = [applied[0], applied[1], p_pb];
        let alg = algebraic(&truth.x, &u_meas, p)?;
        let df_dot = alg.df_dot;
        let (pb, next_pbe) = estimate_power_balance(alg.p_g, truth.x[DF], df_dot, &pbe, &p.grid, dt);
        let u_before = [applied[0], applied[1], p_pb_est];
        pbe = next_pbe;
        p_pb_est = pb;

        let clock = Instant::now();
        let (x_hat, mhe_open) = match mhe.as_mut() {
            Some(m) => {
                let mut y = model_outputs(&truth.x, &u_meas, p)?;
                if s.toggles.noise {
                    for j in 0..NY {
                        y[j] += normals[j].sample(&mut rng);
                    }
                }
                m.push(Sample { time: t, y, u_before })?;
                let est = m.estimate()?;
                (est.state, est.status == MheStatus::OpenLoop)
            }
            None => (truth.x, false),
        };
        out.estimator_seconds += clock.elapsed().as_secs_f64();

        let f_bar = 1.0
            + match &grid {
                Grid::Single => truth.x[DF],
                Grid::Two { gp, .. } => (gp.h_1 * truth.x[DF] + gp.h_2 * truth.df_2) / (gp.h_1 + gp.h_2),
            };
        let signals = MpcSignals { p_pb: p_pb_est, f_bar, p_g_measured: alg.p_g };
        let history: Vec<f64> = g_hist.iter().copied().collect();
        let clock = Instant::now();
        let act = controller.control(&x_hat, &history, &signals)?;
        out.control_seconds += clock.elapsed().as_secs_f64();
        applied = [act.p_g_star, act.g_star];
        g_hist.pop_front();
        g_hist.push_back(act.g_star);

        let u = [applied[0], applied[1], p_pb];
        let a = algebraic(&truth.x, &u, p)?;
        let mut row = Vec::with_capacity(trace.columns.len());
        row.push(t);
        row.extend_from_slice(&truth.x);
        row.extend_from_slice(&[a.h, a.p_m, a.p_g, p_pb, p_pb_est, disturbance, u[PG_STAR], u[G_STAR]]);
        row.extend_from_slice(&x_hat);
        row.extend_from_slice(&act.max_slack);
        row.extend_from_slice(&[
            act.fallback as u8 as f64,
            act.iterations as f64,
            act.kkt,
            mhe_open as u8 as f64,
            f_bar,
        ]);
        if let Grid::Two { gp, .. } = &grid {
            row.extend_from_slice(&[truth.df_2, truth.delta, gp.k_t * truth.delta.sin()]);
        }
        trace.rows.push(row);

        advance(&mut truth, &u, &grid, p, &wave, s.substeps).map_err(|e| HarnessError::Integration { time: t, source: e })?;
    }
    Ok(())
}

fn apply_event(e: &Event, truth: &mut Truth, grid: &Grid, p: &PlantParameters, plant_base: f64, disturbance: &mut f64) {
    match (*e, grid) {
        (Event::PbStep { delta, .. }, _) => {
            truth.p_pb += delta;
            *disturbance += delta;
        }
        (Event::LoadStep { mva, .. }, Grid::Single) => {
            let d = -mva / plant_base;
            truth.p_pb += d;
            *disturbance += d;
        }
        (Event::LoadStep { mva, area, .. }, Grid::Two { .. }) => {
            let base = plant_base * p.grid.s_n;
            truth.inj[area - 1] -= mva / base;
            *disturbance -= mva / base;
        }
        (Event::Impulse { power, duration, area, .. }, Grid::Single) => {
            let _ = area;
            truth.x[DF] += impulse_jump(power, duration, p.grid.h_g);
        }
        (Event::Impulse { power, duration, area, .. }, Grid::Two { gp, .. }) => {
            if area == 1 {
                truth.x[DF] += impulse_jump(power, duration, gp.h_1);
            } else {
                truth.df_2 += impulse_jump(power, duration, gp.h_2);
            }
        }
    }
}

/// One control period: RK4 substeps on the rigid-column model (and the
/// second area), then the wave correction over the full period.
fn advance(
    truth: &mut Truth,
    u: &[f64; NU],
    grid: &Grid,
    p: &PlantParameters,
    wave: &StepConfig,
    substeps: usize,
) -> Result<(), crate::error::IntegrationError> {
    let h = wave.dt / substeps as f64;
    let start = truth.x;
    match grid {
        Grid::Single => {
            let mut x = truth.x;
            for _ in 0..substeps {
                x = rk4_step(|xs: &[f64; NX], us: &[f64; NU]| rigid_derivatives(xs, us, p), &x, u, h)?;
            }
            truth.x = x;
        }
        Grid::Two { gp, s_n } => {
            let inj = truth.inj;
            let mut z = [0.0; NX + 2];
            z[..NX].copy_from_slice(&truth.x);
            z[NX] = truth.df_2;
            z[NX + 1] = truth.delta;
            let f = |z: &[f64; NX + 2], u: &[f64; NU]| -> Result<[f64; NX + 2], PlantError> {
                let x: [f64; NX] = std::array::from_fn(|i| z[i]);
                let tie = gp.k_t * z[NX + 1].sin();
                let mut uu = *u;
                uu[PPB] = s_n * (inj[0] - tie);
                let dx = rigid_derivatives(&x, &uu, p)?;
                let mut dz = [0.0; NX + 2];
                dz[..NX].copy_from_slice(&dx);
                dz[NX] = (inj[1] - z[NX] * gp.d_2 + tie) / (2.0 * gp.h_2);
                dz[NX + 1] = (z[DF] - z[NX]) * gp.omega_b;
                Ok(dz)
            };
            for _ in 0..substeps {
                z = rk4_step(&f, &z, u, h)?;
            }
            truth.x.copy_from_slice(&z[..NX]);
            truth.df_2 = z[NX];
            truth.delta = z[NX + 1];
        }
    }
    apply_wave_correction(&start, &mut truth.x, p, wave);
    Ok(())
}
