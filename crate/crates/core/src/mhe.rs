//! Moving-horizon state estimation over a short window of measurements.
//!
//! The estimator fits the prediction model to the last `N` output samples
//! and the `N - 1` inputs applied between them. Decision variables are the
//! states at every sample (multiple shooting, with the shooting equalities
//! eliminated by the solver) and the fitted inputs.
//!
//! `V` and `W` are inverse noise levels, so the fit minimises
//! `Σ ‖V (ỹ - y)‖² + Σ ‖W (ũ - u)‖²`, the Gaussian log-likelihood, plus an
//! optional arrival term `‖A (x_0 - x̄_0)‖²` about the previous estimate.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use num_dual::DualSVec64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ad::{seed, split, Real};
use crate::error::{ConfigError, PlantError};
use crate::integrator::{rk4_step_with_wave, StepConfig};
use crate::nlp::{self, Derivatives, EvalError, Layout, NlpProblem, SolveStatus, SolverConfig, Values};
use crate::params::PlantParameters;
use crate::plant::{algebraic, DF, G, G_STAR, HST, NU, NX, OMEGA, PG_STAR, PPB};

pub const NY: usize = 7;
pub const OUTPUT_NAMES: [&str; NY] = ["df", "g", "h_st", "omega", "h", "p_m", "p_g"];
/// Output index of the converter power, which needs an input to evaluate.
pub const Y_PG: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MheConfig {
    pub horizon: usize,
    /// Output weights in `OUTPUT_NAMES` order.
    pub v: [f64; NY],
    /// Input weights for `(P_g*, P_pb, g*)`.
    pub w: [f64; 3],
    pub max_iter: usize,
    /// Inverse spread of the oldest state about the shifted previous
    /// estimate. Zero leaves that component free.
    #[serde(default)]
    pub arrival: [f64; NX],
}

impl MheConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.horizon < 2 {
            return Err(ConfigError::Invalid(format!("mhe.horizon must be at least 2, got {}", self.horizon)));
        }
        if self.v.iter().chain(self.w.iter()).any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(ConfigError::Invalid("mhe weights must be positive".into()));
        }
        if self.arrival.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(ConfigError::Invalid("mhe arrival weights must be non-negative".into()));
        }
        Ok(())
    }

    /// Input weights in plant input order.
    pub fn input_weights(&self) -> [f64; NU] {
        let mut w = [0.0; NU];
        w[PG_STAR] = self.w[0];
        w[PPB] = self.w[1];
        w[G_STAR] = self.w[2];
        w
    }

    /// Per-channel noise level implied by the output weights.
    pub fn output_noise_sigma(&self) -> [f64; NY] {
        self.v.map(|v| 1.0 / v)
    }
}

/// Measured outputs `[df, g, h_st, omega, h, P_m, P_g]`.
pub fn model_outputs<T: Real>(x: &[T; NX], u: &[T; NU], p: &PlantParameters) -> Result<[T; NY], PlantError> {
    let a = algebraic(x, u, p)?;
    Ok([x[DF], x[G], x[HST], x[OMEGA], a.h, a.p_m, a.p_g])
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MheError {
    #[error("measurement window holds {have} samples, need {need}")]
    WindowNotFull { have: usize, need: usize },
    #[error("sample at t = {time} breaks the spacing {dt} (previous sample at {previous})")]
    Spacing { time: f64, previous: f64, dt: f64 },
    #[error("no estimate to fall back on: {0}")]
    NoFallback(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub time: f64,
    pub y: [f64; NY],
    /// Input held over the interval that ended at this sample, in plant
    /// input order. Unused for the oldest sample of a window.
    pub u_before: [f64; NU],
}

/// Ring buffer of the most recent equally spaced samples.
#[derive(Debug, Clone)]
pub struct MeasurementWindow {
    capacity: usize,
    dt: f64,
    samples: VecDeque<Sample>,
}

impl MeasurementWindow {
    pub fn new(capacity: usize, dt: f64) -> Self {
        Self { capacity, dt, samples: VecDeque::with_capacity(capacity + 1) }
    }

    pub fn push(&mut self, s: Sample) -> Result<(), MheError> {
        if let Some(last) = self.samples.back() {
            let gap = s.time - last.time;
            if (gap - self.dt).abs() > 1e-9 * self.dt.max(s.time.abs()) {
                return Err(MheError::Spacing { time: s.time, previous: last.time, dt: self.dt });
            }
        }
        self.samples.push_back(s);
        while self.samples.len() > self.capacity {
            self.samples.pop_front();
        }
        Ok(())
    }

    pub fn is_full(&self) -> bool {
        self.samples.len() == self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter()
    }

    pub fn latest(&self) -> Option<&Sample> {
        self.samples.back()
    }
}

/// Least-squares fit over one full window.
pub struct MheProblem {
    params: PlantParameters,
    step: StepConfig,
    n: usize,
    y: Vec<[f64; NY]>,
    /// Measured inputs `u_0 .. u_{N-2}`.
    u: Vec<[f64; NU]>,
    /// Squared output and input scales.
    v: [f64; NY],
    w: [f64; NU],
    arrival: [f64; NX],
    prior: [f64; NX],
    layout: Layout,
    lo: Vec<f64>,
    hi: Vec<f64>,
    guess: Vec<f64>,
}

const NZ: usize = NX + NU;

impl MheProblem {
    /// `prior` seeds the oldest state when no warm start is given and anchors
    /// the arrival term.
    pub fn new(
        window: &MeasurementWindow,
        cfg: &MheConfig,
        params: &PlantParameters,
        step: StepConfig,
        prior: &[f64; NX],
    ) -> Result<Self, MheError> {
        if !window.is_full() {
            return Err(MheError::WindowNotFull { have: window.len(), need: window.capacity() });
        }
        let n = window.len();
        let y: Vec<[f64; NY]> = window.samples().map(|s| s.y).collect();
        let u: Vec<[f64; NU]> = window.samples().skip(1).map(|s| s.u_before).collect();
        let mut layout = Layout::default();
        for i in 0..n {
            layout.push(format!("x_{i}"), NX);
        }
        for i in 0..n - 1 {
            layout.push(format!("u_{i}"), NU);
        }
        let nv = layout.len();
        let mut p = Self {
            params: *params,
            step,
            n,
            y,
            u,
            v: cfg.v.map(|s| s * s),
            w: cfg.input_weights().map(|s| s * s),
            arrival: cfg.arrival.map(|s| s * s),
            prior: *prior,
            layout,
            lo: vec![f64::NEG_INFINITY; nv],
            hi: vec![f64::INFINITY; nv],
            guess: Vec::new(),
        };
        p.guess = p.simulate_guess(prior);
        Ok(p)
    }

    fn ix(&self, i: usize) -> usize {
        NX * i
    }

    fn iu(&self, i: usize) -> usize {
        NX * self.n + NU * i
    }

    /// Forward simulation from `x0` with the measured inputs.
    pub fn simulate_guess(&self, x0: &[f64; NX]) -> Vec<f64> {
        let mut g = vec![0.0; self.layout.len()];
        let mut x = *x0;
        g[..NX].copy_from_slice(&x);
        for i in 0..self.n - 1 {
            let u = self.u[i];
            x = rk4_step_with_wave(&x, &u, &self.params, &self.step).unwrap_or(x);
            let s = self.ix(i + 1);
            g[s..s + NX].copy_from_slice(&x);
            let k = self.iu(i);
            g[k..k + NU].copy_from_slice(&u);
        }
        g
    }

    pub fn set_initial_guess(&mut self, g: Vec<f64>) {
        self.guess = g;
    }

    pub fn state(&self, v: &[f64], i: usize) -> [f64; NX] {
        std::array::from_fn(|j| v[self.ix(i) + j])
    }

    pub fn input(&self, v: &[f64], i: usize) -> [f64; NU] {
        std::array::from_fn(|j| v[self.iu(i) + j])
    }

    fn eval_err(i: usize, e: impl ToString) -> EvalError {
        EvalError { block: format!("x_{i}"), message: e.to_string() }
    }

    /// Output residual at sample `i`, with `P_g` zeroed for the oldest one.
    fn output_residual(&self, v: &[f64], i: usize) -> Result<[f64; NY], EvalError> {
        let x = self.state(v, i);
        let u = if i == 0 { self.u[0] } else { self.input(v, i - 1) };
        let yt = model_outputs(&x, &u, &self.params).map_err(|e| Self::eval_err(i, e))?;
        let mut r: [f64; NY] = std::array::from_fn(|k| yt[k] - self.y[i][k]);
        if i == 0 {
            r[Y_PG] = 0.0;
        }
        Ok(r)
    }

    /// Output residual and its Jacobian in `(x_i, u_{i-1})`.
    fn output_jacobian(&self, v: &[f64], i: usize) -> Result<([f64; NY], [[f64; NZ]; NY]), EvalError> {
        let mut z = [0.0; NZ];
        z[..NX].copy_from_slice(&self.state(v, i));
        let u = if i == 0 { self.u[0] } else { self.input(v, i - 1) };
        z[NX..].copy_from_slice(&u);
        let zd: [DualSVec64<NZ>; NZ] = seed(&z);
        let xd: [DualSVec64<NZ>; NX] = std::array::from_fn(|k| zd[k]);
        let ud: [DualSVec64<NZ>; NU] = std::array::from_fn(|k| zd[NX + k]);
        let yt = model_outputs(&xd, &ud, &self.params).map_err(|e| Self::eval_err(i, e))?;
        let mut r = [0.0; NY];
        let mut jac = [[0.0; NZ]; NY];
        for k in 0..NY {
            let (val, g) = split(&yt[k]);
            r[k] = val - self.y[i][k];
            jac[k] = g;
            if i == 0 {
                // The oldest input is not a decision variable.
                for gj in jac[k][NX..].iter_mut() {
                    *gj = 0.0;
                }
            }
        }
        if i == 0 {
            r[Y_PG] = 0.0;
            jac[Y_PG] = [0.0; NZ];
        }
        Ok((r, jac))
    }

    /// Objective split into the output and input parts.
    pub fn objective_parts(&self, v: &[f64]) -> Result<(f64, f64), EvalError> {
        let mut fy = 0.0;
        for i in 0..self.n {
            let r = self.output_residual(v, i)?;
            fy += (0..NY).map(|k| self.v[k] * r[k] * r[k]).sum::<f64>();
        }
        let mut fu = 0.0;
        for i in 0..self.n - 1 {
            let ui = self.input(v, i);
            fu += (0..NU).map(|k| self.w[k] * (ui[k] - self.u[i][k]).powi(2)).sum::<f64>();
        }
        Ok((fy, fu))
    }

    fn arrival_cost(&self, v: &[f64]) -> f64 {
        (0..NX).map(|j| self.arrival[j] * (v[j] - self.prior[j]).powi(2)).sum()
    }

    /// Per-channel weighted output residual sums.
    pub fn channel_residuals(&self, v: &[f64]) -> Result<[f64; NY], EvalError> {
        let mut out = [0.0; NY];
        for i in 0..self.n {
            let r = self.output_residual(v, i)?;
            for k in 0..NY {
                out[k] += self.v[k] * r[k] * r[k];
            }
        }
        Ok(out)
    }

    pub fn trajectory(&self, v: &[f64]) -> Vec<[f64; NX]> {
        (0..self.n).map(|i| self.state(v, i)).collect()
    }
}

impl NlpProblem for MheProblem {
    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn n_eq(&self) -> usize {
        NX * (self.n - 1)
    }

    fn n_ineq(&self) -> usize {
        0
    }

    fn lower(&self) -> &[f64] {
        &self.lo
    }

    fn upper(&self) -> &[f64] {
        &self.hi
    }

    fn initial_guess(&self) -> Vec<f64> {
        self.guess.clone()
    }

    fn dependents(&self) -> Option<Vec<usize>> {
        Some((NX..NX * self.n).collect())
    }

    fn values(&self, v: &[f64]) -> Result<Values, EvalError> {
        let (fy, fu) = self.objective_parts(v)?;
        let mut c = DVector::zeros(self.n_eq());
        for i in 0..self.n - 1 {
            let next = rk4_step_with_wave(&self.state(v, i), &self.input(v, i), &self.params, &self.step)
                .map_err(|e| Self::eval_err(i, e))?;
            for j in 0..NX {
                c[NX * i + j] = next[j] - v[self.ix(i + 1) + j];
            }
        }
        Ok(Values { f: fy + fu + self.arrival_cost(v), c, d: DVector::zeros(0) })
    }

    fn derivatives(&self, v: &[f64]) -> Result<Derivatives, EvalError> {
        let nv = self.layout.len();
        let mut grad = DVector::zeros(nv);
        for i in 0..self.n {
            let (r, jac) = self.output_jacobian(v, i)?;
            for k in 0..NY {
                let s = 2.0 * self.v[k] * r[k];
                for j in 0..NX {
                    grad[self.ix(i) + j] += s * jac[k][j];
                }
                if i > 0 {
                    for j in 0..NU {
                        grad[self.iu(i - 1) + j] += s * jac[k][NX + j];
                    }
                }
            }
        }
        for i in 0..self.n - 1 {
            for k in 0..NU {
                grad[self.iu(i) + k] += 2.0 * self.w[k] * (v[self.iu(i) + k] - self.u[i][k]);
            }
        }
        for j in 0..NX {
            grad[j] += 2.0 * self.arrival[j] * (v[j] - self.prior[j]);
        }
        let mut jc = DMatrix::zeros(self.n_eq(), nv);
        for i in 0..self.n - 1 {
            let mut z = [0.0; NZ];
            z[..NX].copy_from_slice(&self.state(v, i));
            z[NX..].copy_from_slice(&self.input(v, i));
            let zd: [DualSVec64<NZ>; NZ] = seed(&z);
            let xd: [DualSVec64<NZ>; NX] = std::array::from_fn(|k| zd[k]);
            let ud: [DualSVec64<NZ>; NU] = std::array::from_fn(|k| zd[NX + k]);
            let next = rk4_step_with_wave(&xd, &ud, &self.params, &self.step).map_err(|e| Self::eval_err(i, e))?;
            for j in 0..NX {
                let row = NX * i + j;
                let (_, g) = split(&next[j]);
                for k in 0..NX {
                    jc[(row, self.ix(i) + k)] = g[k];
                }
                for k in 0..NU {
                    jc[(row, self.iu(i) + k)] = g[NX + k];
                }
                jc[(row, self.ix(i + 1) + j)] = -1.0;
            }
        }
        Ok(Derivatives { grad, jc, jd: DMatrix::zeros(0, nv) })
    }

    /// Gauss-Newton approximation `2 JᵀV²J + 2W² + 2A²`.
    fn hessian(&self, v: &[f64], _: &[f64], _: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        let nv = self.layout.len();
        let mut h = DMatrix::zeros(nv, nv);
        for i in 0..self.n {
            let (_, jac) = self.output_jacobian(v, i)?;
            let cols: Vec<usize> = (0..NX)
                .map(|j| self.ix(i) + j)
                .chain((0..NU).map(|j| if i > 0 { self.iu(i - 1) + j } else { usize::MAX }))
                .collect();
            for k in 0..NY {
                for a in 0..NZ {
                    if cols[a] == usize::MAX || jac[k][a] == 0.0 {
                        continue;
                    }
                    for b in 0..NZ {
                        if cols[b] == usize::MAX {
                            continue;
                        }
                        h[(cols[a], cols[b])] += 2.0 * self.v[k] * jac[k][a] * jac[k][b];
                    }
                }
            }
        }
        for i in 0..self.n - 1 {
            for k in 0..NU {
                h[(self.iu(i) + k, self.iu(i) + k)] += 2.0 * self.w[k];
            }
        }
        for j in 0..NX {
            h[(j, j)] += 2.0 * self.arrival[j];
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MheStatus {
    Converged,
    /// Solver failed; the previous estimate was propagated with the latest
    /// measured input.
    OpenLoop,
}

#[derive(Debug, Clone)]
pub struct MheOutput {
    pub state: [f64; NX],
    pub status: MheStatus,
    pub solver_status: Option<SolveStatus>,
    pub objective: f64,
    pub iterations: usize,
    pub kkt: f64,
    /// Estimated states at every window sample, oldest first.
    pub trajectory: Vec<[f64; NX]>,
}

/// Sequential estimator holding the window and the last solution for warm
/// starts.
#[derive(Debug, Clone)]
pub struct Mhe {
    pub cfg: MheConfig,
    pub params: PlantParameters,
    pub step: StepConfig,
    pub window: MeasurementWindow,
    prior: [f64; NX],
    last: Option<Vec<f64>>,
    last_state: Option<[f64; NX]>,
    pub solver: SolverConfig,
}

impl Mhe {
    pub fn new(cfg: MheConfig, params: PlantParameters, step: StepConfig, prior: [f64; NX]) -> Self {
        let window = MeasurementWindow::new(cfg.horizon, step.dt);
        let solver = SolverConfig { max_iter: cfg.max_iter, ..SolverConfig::default() };
        Self { cfg, params, step, window, prior, last: None, last_state: None, solver }
    }

    pub fn push(&mut self, s: Sample) -> Result<(), MheError> {
        self.window.push(s)
    }

    /// Solve on the current window.
    pub fn estimate(&mut self) -> Result<MheOutput, MheError> {
        let mut problem = MheProblem::new(&self.window, &self.cfg, &self.params, self.step, &self.prior)?;
        if let Some(prev) = &self.last {
            // Shift by one sample and extend with a simulated step.
            let n = self.window.len();
            let mut g = vec![0.0; prev.len()];
            g[..NX * (n - 1)].copy_from_slice(&prev[NX..NX * n]);
            let base_u = NX * n;
            g[base_u..base_u + NU * (n - 2)].copy_from_slice(&prev[base_u + NU..base_u + NU * (n - 1)]);
            let u_new = problem.u[n - 2];
            g[base_u + NU * (n - 2)..].copy_from_slice(&u_new);
            let xl: [f64; NX] = std::array::from_fn(|j| g[NX * (n - 2) + j]);
            let ul: [f64; NU] = std::array::from_fn(|j| g[base_u + NU * (n - 2) + j]);
            let xn = rk4_step_with_wave(&xl, &ul, &self.params, &self.step).unwrap_or(xl);
            g[NX * (n - 1)..NX * n].copy_from_slice(&xn);
            problem.set_initial_guess(g);
        }
        let outcome = nlp::solve(&problem, &self.solver);
        match outcome {
            Ok(sol) if sol.status == SolveStatus::Converged => {
                let traj = problem.trajectory(&sol.x);
                let state = traj[traj.len() - 1];
                self.last = Some(sol.x.clone());
                self.last_state = Some(state);
                self.prior = traj[1];
                Ok(MheOutput {
                    state,
                    status: MheStatus::Converged,
                    solver_status: Some(sol.status),
                    objective: sol.objective,
                    iterations: sol.iterations,
                    kkt: sol.kkt.norm(),
                    trajectory: traj,
                })
            }
            other => {
                let (solver_status, reason) = match &other {
                    Ok(sol) => (Some(sol.status), format!("{:?}", sol.status)),
                    Err(e) => (None, e.to_string()),
                };
                log::warn!("MHE solve failed ({reason}); propagating the previous estimate open-loop");
                let prev = self.last_state.ok_or_else(|| MheError::NoFallback(reason))?;
                // Keep the arrival anchor on the next window's oldest sample.
                self.prior = rk4_step_with_wave(&self.prior, &problem.u[0], &self.params, &self.step).unwrap_or(self.prior);
                let u = self.window.latest().map(|s| s.u_before).unwrap_or([0.0; NU]);
                let state = rk4_step_with_wave(&prev, &u, &self.params, &self.step).unwrap_or(prev);
                self.last = None;
                self.last_state = Some(state);
                Ok(MheOutput {
                    state,
                    status: MheStatus::OpenLoop,
                    solver_status,
                    objective: f64::NAN,
                    iterations: 0,
                    kkt: f64::NAN,
                    trajectory: Vec::new(),
                })
            }
        }
    }
}
