//! Nonlinear MPC by direct multiple shooting.
//!
//! Decision vector, for a horizon of `N` steps:
//!
//! ```text
//! [ u_0 .. u_{N-1} | x_1 .. x_N | eps_1 .. eps_N ]
//! ```
//!
//! with `u_t = (P_g*, g*)`, `x_t` the full plant state including the wave
//! value, and `eps_t` one slack each for `q`, `h_st`, `h` and `omega`.

use nalgebra::{DMatrix, DVector};
use num_dual::DualSVec64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ad::{seed, split, Real};
use crate::error::ConfigError;
use crate::integrator::{rk4_step_with_wave, StepConfig};
use crate::nlp::{self, Derivatives, EvalError, Layout, NlpProblem, NlpSolution, SolveStatus, SolverConfig, Values};
use crate::params::PlantParameters;
use crate::plant::{optimal_speed, turbine_efficiency_clamped, turbine_head, NX, DF, G, HP, HST, OMEGA, Q, QHR};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcWeights {
    pub omega: f64,
    pub omega_terminal: f64,
    pub p_g_star: f64,
    pub f: f64,
    /// Weight on f about f* when POD is off. Falls back to `f`.
    #[serde(default)]
    pub f_no_pod: Option<f64>,
    pub dg_star: f64,
    pub dg_star_5: f64,
    pub dh_p: f64,
    pub efficiency_factor: f64,
}

impl MpcWeights {
    /// Every factor multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            omega: self.omega * k,
            omega_terminal: self.omega_terminal * k,
            p_g_star: self.p_g_star * k,
            f: self.f * k,
            f_no_pod: self.f_no_pod.map(|v| v * k),
            dg_star: self.dg_star * k,
            dg_star_5: self.dg_star_5 * k,
            dh_p: self.dh_p * k,
            efficiency_factor: self.efficiency_factor * k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlackSpec {
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
    pub s: f64,
    #[serde(default)]
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlackTable {
    pub q: SlackSpec,
    pub h_st: SlackSpec,
    pub h: SlackSpec,
    pub omega: SlackSpec,
}

impl SlackTable {
    fn specs(&self) -> [SlackSpec; NSLACK] {
        [self.q, self.h_st, self.h, self.omega]
    }
}

/// Stage state plus the two decision inputs.
const NZ: usize = NX + 2;

/// Slack order within a stage.
pub const NSLACK: usize = 4;
pub const SLACK_NAMES: [&str; NSLACK] = ["q", "h_st", "h", "omega"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcBounds {
    pub g_star: [f64; 2],
    pub p_g: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    pub horizon: usize,
    pub history_len: usize,
    pub p_g_star_ref: f64,
    pub wave_model: bool,
    pub pod_enabled: bool,
    pub efficiency_cost: bool,
    pub max_iter: usize,
    /// A solve that stops early is still applied when its iterate satisfies
    /// the constraints and its scaled stationarity is below this.
    #[serde(default = "default_acceptable")]
    pub acceptable_stationarity: f64,
    pub weights: MpcWeights,
    pub bounds: MpcBounds,
    pub slack: SlackTable,
    /// Optional per-state limit on |x_{t+1} - x_t|.
    #[serde(default)]
    pub delta_x_high: Option<[f64; NX]>,
}

fn default_acceptable() -> f64 {
    1e-3
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.horizon < 5 {
            return bad(format!("mpc.horizon must be at least 5, got {}", self.horizon));
        }
        if !(self.acceptable_stationarity > 0.0) {
            return bad(format!("mpc.acceptable_stationarity must be positive, got {}", self.acceptable_stationarity));
        }
        if self.history_len < 5 {
            return bad(format!("mpc.history_len must be at least 5, got {}", self.history_len));
        }
        let w = &self.weights;
        for (name, v) in [
            ("omega", w.omega),
            ("omega_terminal", w.omega_terminal),
            ("p_g_star", w.p_g_star),
            ("f", w.f),
            ("f_no_pod", w.f_no_pod.unwrap_or(0.0)),
            ("dg_star", w.dg_star),
            ("dg_star_5", w.dg_star_5),
            ("dh_p", w.dh_p),
            ("efficiency_factor", w.efficiency_factor),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("mpc.weights.{name} must be non-negative, got {v}"));
            }
        }
        for (name, [lo, hi]) in [("g_star", self.bounds.g_star), ("p_g", self.bounds.p_g)] {
            if !(lo < hi) {
                return bad(format!("mpc.bounds.{name}: low {lo} must be below high {hi}"));
            }
        }
        for (name, s) in SLACK_NAMES.iter().zip(self.slack.specs()) {
            if let (Some(lo), Some(hi)) = (s.lo, s.hi) {
                if !(lo < hi) {
                    return bad(format!("mpc.slack.{name}: low {lo} must be below high {hi}"));
                }
            }
            if !(s.s >= 0.0 && s.rho >= 0.0) {
                return bad(format!("mpc.slack.{name}: cost factors must be non-negative"));
            }
        }
        if let Some(dx) = &self.delta_x_high {
            if dx.iter().any(|v| !(*v > 0.0)) {
                return bad("mpc.delta_x_high entries must be positive".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MpcError {
    #[error("input history holds {have} samples, need {need}")]
    HistoryUnderfilled { have: usize, need: usize },
    #[error("invalid controller setup: {0}")]
    Config(String),
    #[error(transparent)]
    Solver(#[from] nlp::NlpError),
}

/// Measured signals the controller consumes each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcSignals {
    /// Power-balance forecast, held over the horizon.
    pub p_pb: f64,
    /// Average system frequency [p.u.], held over the horizon.
    pub f_bar: f64,
    /// Measured converter power.
    pub p_g_measured: f64,
}

/// Per-stage references; index `t` refers to stage `t + 1` for states and
/// to stage `t` for inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct References {
    pub omega: Vec<f64>,
    /// Absolute plant frequency [p.u.].
    pub f: Vec<f64>,
    pub p_g_star: Vec<f64>,
}

pub fn reference_assembler(p_g_measured: f64, f_bar: f64, cfg: &MpcConfig, params: &PlantParameters) -> References {
    let n = cfg.horizon;
    let omega = optimal_speed(p_g_measured);
    let f = if cfg.pod_enabled { f_bar } else { params.vsg.f_star };
    References { omega: vec![omega; n], f: vec![f; n], p_g_star: vec![cfg.p_g_star_ref; n] }
}

/// Quadratic term `0.5 w (aᵀv - r)²`.
#[derive(Debug, Clone)]
struct Quad {
    w: f64,
    a: Vec<(usize, f64)>,
    r: f64,
}

#[derive(Debug, Clone, Copy)]
enum Row {
    /// `lo - eps - x ≤ 0` on state `idx` at stage `t ≥ 1`.
    StateLo { t: usize, idx: usize, bound: f64, slack: usize },
    /// `x - hi - eps ≤ 0`.
    StateHi { t: usize, idx: usize, bound: f64, slack: usize },
    /// `h(x_t) - hi - eps ≤ 0`.
    HeadHi { t: usize, bound: f64, slack: usize },
    HeadLo { t: usize, bound: f64, slack: usize },
    /// Converter power limits at stage `t ≥ 0`.
    PgLo { t: usize, bound: f64 },
    PgHi { t: usize, bound: f64 },
    /// `±(x_{t+1} - x_t) - dx ≤ 0`.
    Dx { t: usize, idx: usize, sign: f64, bound: f64 },
}

/// The assembled optimal-control problem for one control step.
pub struct Ocp {
    params: PlantParameters,
    step: StepConfig,
    n: usize,
    x0: [f64; NX],
    p_pb: f64,
    layout: Layout,
    lo: Vec<f64>,
    hi: Vec<f64>,
    guess: Vec<f64>,
    quads: Vec<Quad>,
    linear: Vec<(usize, f64)>,
    hess: DMatrix<f64>,
    rows: Vec<Row>,
    efficiency: Option<f64>,
    /// Affine converter power `a_df * df + a_p * P* + a_0`.
    pg_coef: (f64, f64, f64),
}

impl Ocp {
    pub fn horizon(&self) -> usize {
        self.n
    }

    pub fn iu(&self, t: usize) -> usize {
        2 * t
    }

    /// Start of `x_t`, `t = 1..=N`.
    pub fn ix(&self, t: usize) -> usize {
        2 * self.n + NX * (t - 1)
    }

    /// Start of `eps_t`, `t = 1..=N`.
    pub fn ie(&self, t: usize) -> usize {
        9 * self.n + NSLACK * (t - 1)
    }

    pub fn initial_guess_ref(&self) -> &[f64] {
        &self.guess
    }

    pub fn set_initial_guess(&mut self, guess: Vec<f64>) {
        self.guess = guess;
    }

    fn state(&self, v: &[f64], t: usize) -> [f64; NX] {
        if t == 0 {
            self.x0
        } else {
            let s = self.ix(t);
            std::array::from_fn(|i| v[s + i])
        }
    }

    fn stage_step<T: Real>(&self, x: &[T; NX], p_star: T, g_star: T, t: usize) -> Result<[T; NX], EvalError> {
        let u = [p_star, g_star, T::from(self.p_pb)];
        rk4_step_with_wave(x, &u, &self.params, &self.step).map_err(|e| EvalError {
            block: if t == 0 { "u_0".into() } else { format!("x_{t}") },
            message: e.to_string(),
        })
    }

    fn p_g(&self, df: f64, p_star: f64) -> f64 {
        self.pg_coef.0 * df + self.pg_coef.1 * p_star + self.pg_coef.2
    }

    fn head(&self, x: &[f64; NX]) -> f64 {
        turbine_head(x[HST], x[Q], x[QHR], x[HP], &self.params.hydraulic)
    }

    fn head_grad(&self, x: &[f64; NX]) -> [(usize, f64); 4] {
        let hy = &self.params.hydraulic;
        let dq = x[QHR] - x[Q];
        [(HST, 1.0), (QHR, -2.0 * hy.f_0 * dq), (Q, 2.0 * hy.f_0 * dq - 2.0 * hy.f_p1 * x[Q]), (HP, 1.0)]
    }

    fn row_value(&self, v: &[f64], row: &Row) -> f64 {
        match *row {
            Row::StateLo { t, idx, bound, slack } => bound - v[self.ie(t) + slack] - v[self.ix(t) + idx],
            Row::StateHi { t, idx, bound, slack } => v[self.ix(t) + idx] - bound - v[self.ie(t) + slack],
            Row::HeadHi { t, bound, slack } => self.head(&self.state(v, t)) - bound - v[self.ie(t) + slack],
            Row::HeadLo { t, bound, slack } => bound - v[self.ie(t) + slack] - self.head(&self.state(v, t)),
            Row::PgLo { t, bound } => bound - self.p_g(self.state(v, t)[DF], v[self.iu(t)]),
            Row::PgHi { t, bound } => self.p_g(self.state(v, t)[DF], v[self.iu(t)]) - bound,
            Row::Dx { t, idx, sign, bound } => sign * (self.state(v, t + 1)[idx] - self.state(v, t)[idx]) - bound,
        }
    }

    fn row_grad(&self, v: &[f64], row: &Row, out: &mut dyn FnMut(usize, f64)) {
        match *row {
            Row::StateLo { t, idx, slack, .. } => {
                out(self.ie(t) + slack, -1.0);
                out(self.ix(t) + idx, -1.0);
            }
            Row::StateHi { t, idx, slack, .. } => {
                out(self.ie(t) + slack, -1.0);
                out(self.ix(t) + idx, 1.0);
            }
            Row::HeadHi { t, slack, .. } | Row::HeadLo { t, slack, .. } => {
                let sign = if matches!(row, Row::HeadHi { .. }) { 1.0 } else { -1.0 };
                for (i, g) in self.head_grad(&self.state(v, t)) {
                    out(self.ix(t) + i, sign * g);
                }
                out(self.ie(t) + slack, -1.0);
            }
            Row::PgLo { t, .. } | Row::PgHi { t, .. } => {
                let sign = if matches!(row, Row::PgHi { .. }) { 1.0 } else { -1.0 };
                if t > 0 {
                    out(self.ix(t) + DF, sign * self.pg_coef.0);
                }
                out(self.iu(t), sign * self.pg_coef.1);
            }
            Row::Dx { t, idx, sign, .. } => {
                out(self.ix(t + 1) + idx, sign);
                if t > 0 {
                    out(self.ix(t) + idx, -sign);
                }
            }
        }
    }

    fn efficiency_sum(&self, v: &[f64]) -> Result<f64, EvalError> {
        let mut total = 0.0;
        for t in 1..=self.n {
            let x = self.state(v, t);
            total += turbine_efficiency_clamped(x[OMEGA], x[G], &self.params.turbine)
                .map_err(|e| EvalError { block: format!("x_{t}"), message: e.to_string() })?;
        }
        Ok(total)
    }

    /// Objective value with every slack term removed.
    pub fn objective_without_slack_cost(&self, v: &[f64]) -> Result<f64, EvalError> {
        let slack_start = self.ie(1);
        let mut f = 0.0;
        for q in &self.quads {
            if q.a.iter().any(|(j, _)| *j >= slack_start) {
                continue;
            }
            let r: f64 = q.a.iter().map(|(j, a)| a * v[*j]).sum::<f64>() - q.r;
            f += 0.5 * q.w * r * r;
        }
        if let Some(k) = self.efficiency {
            f -= k * self.efficiency_sum(v)?;
        }
        Ok(f)
    }

    /// Slack values per stage, `[stage][q, h_st, h, omega]`.
    pub fn slacks(&self, v: &[f64]) -> Vec<[f64; NSLACK]> {
        (1..=self.n).map(|t| std::array::from_fn(|k| v[self.ie(t) + k])).collect()
    }

    /// Predicted states `x_1 .. x_N`.
    pub fn predicted(&self, v: &[f64]) -> Vec<[f64; NX]> {
        (1..=self.n).map(|t| self.state(v, t)).collect()
    }

    pub fn first_input(&self, v: &[f64]) -> (f64, f64) {
        (v[0], v[1])
    }
}

impl NlpProblem for Ocp {
    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn n_eq(&self) -> usize {
        NX * self.n
    }

    fn n_ineq(&self) -> usize {
        self.rows.len()
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
        Some((0..NX * self.n).map(|r| self.ix(r / NX + 1) + r % NX).collect())
    }

    /// Slack costs are increasing in the slack, so the cheapest feasible
    /// slack is the largest violation it covers.
    fn adjust_trial(&self, v: &mut [f64]) {
        let mut need = vec![0.0f64; NSLACK * self.n];
        for row in &self.rows {
            let (t, slack) = match *row {
                Row::StateLo { t, slack, .. }
                | Row::StateHi { t, slack, .. }
                | Row::HeadHi { t, slack, .. }
                | Row::HeadLo { t, slack, .. } => (t, slack),
                _ => continue,
            };
            let k = self.ie(t) + slack;
            let viol = self.row_value(v, row) + v[k];
            let i = NSLACK * (t - 1) + slack;
            need[i] = need[i].max(viol);
        }
        for t in 1..=self.n {
            for slack in 0..NSLACK {
                v[self.ie(t) + slack] = need[NSLACK * (t - 1) + slack];
            }
        }
    }

    fn values(&self, v: &[f64]) -> Result<Values, EvalError> {
        let mut c = DVector::zeros(NX * self.n);
        for t in 0..self.n {
            let x = self.state(v, t);
            let next = self.stage_step(&x, v[self.iu(t)], v[self.iu(t) + 1], t)?;
            let s = self.ix(t + 1);
            for i in 0..NX {
                c[NX * t + i] = next[i] - v[s + i];
            }
        }
        let d = DVector::from_iterator(self.rows.len(), self.rows.iter().map(|r| self.row_value(v, r)));
        let mut f = 0.0;
        for q in &self.quads {
            let r: f64 = q.a.iter().map(|(j, a)| a * v[*j]).sum::<f64>() - q.r;
            f += 0.5 * q.w * r * r;
        }
        for (j, rho) in &self.linear {
            f += rho * v[*j];
        }
        if let Some(k) = self.efficiency {
            f -= k * self.efficiency_sum(v)?;
        }
        Ok(Values { f, c, d })
    }

    fn derivatives(&self, v: &[f64]) -> Result<Derivatives, EvalError> {
        let nv = self.layout.len();
        let mut grad = DVector::zeros(nv);
        for q in &self.quads {
            let r: f64 = q.a.iter().map(|(j, a)| a * v[*j]).sum::<f64>() - q.r;
            for (j, a) in &q.a {
                grad[*j] += q.w * r * a;
            }
        }
        for (j, rho) in &self.linear {
            grad[*j] += rho;
        }
        if let Some(k) = self.efficiency {
            for t in 1..=self.n {
                let x = self.state(v, t);
                let d = seed(&[x[OMEGA], x[G]]);
                let eta = turbine_efficiency_clamped(d[0], d[1], &self.params.turbine)
                    .map_err(|e| EvalError { block: format!("x_{t}"), message: e.to_string() })?;
                let (_, g) = split(&eta);
                grad[self.ix(t) + OMEGA] -= k * g[0];
                grad[self.ix(t) + G] -= k * g[1];
            }
        }

        let mut jc = DMatrix::zeros(NX * self.n, nv);
        for t in 0..self.n {
            let x = self.state(v, t);
            let mut z = [0.0; NX + 2];
            z[..NX].copy_from_slice(&x);
            z[NX] = v[self.iu(t)];
            z[NX + 1] = v[self.iu(t) + 1];
            let zd: [DualSVec64<NZ>; NX + 2] = seed(&z);
            let xd: [DualSVec64<NZ>; NX] = std::array::from_fn(|i| zd[i]);
            let next = self.stage_step(&xd, zd[NX], zd[NX + 1], t)?;
            for i in 0..NX {
                let row = NX * t + i;
                let (_, g) = split(&next[i]);
                if t > 0 {
                    let s = self.ix(t);
                    for j in 0..NX {
                        jc[(row, s + j)] = g[j];
                    }
                }
                jc[(row, self.iu(t))] = g[NX];
                jc[(row, self.iu(t) + 1)] = g[NX + 1];
                jc[(row, self.ix(t + 1) + i)] = -1.0;
            }
        }
        let mut jd = DMatrix::zeros(self.rows.len(), nv);
        for (r, row) in self.rows.iter().enumerate() {
            self.row_grad(v, row, &mut |j, g| jd[(r, j)] += g);
        }
        Ok(Derivatives { grad, jc, jd })
    }

    fn hessian(&self, _: &[f64], _: &[f64], _: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        Ok(self.hess.clone())
    }
}

/// Assemble the OCP. `history` holds the most recently applied `g*`
/// values, oldest first; `warm` optionally gives an input sequence guess.
pub fn build_ocp(
    x_hat: &[f64; NX],
    history: &[f64],
    signals: &MpcSignals,
    cfg: &MpcConfig,
    params: &PlantParameters,
    warm: Option<&[[f64; 2]]>,
) -> Result<Ocp, MpcError> {
    if cfg.horizon == 0 {
        return Err(MpcError::Config("horizon must be positive".into()));
    }
    let mut checked = cfg.clone();
    checked.horizon = checked.horizon.max(5);
    checked.validate().map_err(|e| MpcError::Config(e.to_string()))?;
    if history.len() < 5 {
        return Err(MpcError::HistoryUnderfilled { have: history.len(), need: 5 });
    }
    let n = cfg.horizon;
    let w = &cfg.weights;
    let refs = reference_assembler(signals.p_g_measured, signals.f_bar, cfg, params);
    let step = StepConfig { dt: params.wave_step(), wave_correction_enabled: cfg.wave_model };
    let mut x0 = *x_hat;
    if !cfg.wave_model {
        x0[HP] = 0.0;
    }

    let mut layout = Layout::default();
    for t in 0..n {
        layout.push(format!("u_{t}"), 2);
    }
    for t in 1..=n {
        layout.push(format!("x_{t}"), NX);
    }
    for t in 1..=n {
        layout.push(format!("eps_{t}"), NSLACK);
    }
    let nv = layout.len();
    let mut lo = vec![f64::NEG_INFINITY; nv];
    let mut hi = vec![f64::INFINITY; nv];
    for t in 0..n {
        lo[2 * t + 1] = cfg.bounds.g_star[0];
        hi[2 * t + 1] = cfg.bounds.g_star[1];
    }
    for j in 9 * n..nv {
        lo[j] = 0.0;
    }

    let c = params.grid.swing_gain();
    let kd = params.vsg.signed_kd();
    let den = 1.0 - kd * c;
    let pg_coef = ((params.vsg.signed_kp() - kd * c * params.grid.d_m) / den, 1.0 / den, kd * c * signals.p_pb / den);

    let mut ocp = Ocp {
        params: *params,
        step,
        n,
        x0,
        p_pb: signals.p_pb,
        layout,
        lo,
        hi,
        guess: Vec::new(),
        quads: Vec::new(),
        linear: Vec::new(),
        hess: DMatrix::zeros(0, 0),
        rows: Vec::new(),
        efficiency: if cfg.efficiency_cost { Some(w.efficiency_factor) } else { None },
        pg_coef,
    };

    // Cost terms.
    let mut quads = Vec::new();
    let hl = history.len();
    for t in 0..n {
        let iu = ocp.iu(t);
        quads.push(Quad { w: w.p_g_star, a: vec![(iu, 1.0)], r: refs.p_g_star[t] });
        let prev = if t == 0 { vec![] } else { vec![(ocp.iu(t - 1) + 1, -1.0)] };
        let prev_const = if t == 0 { history[hl - 1] } else { 0.0 };
        let mut a = vec![(iu + 1, 1.0)];
        a.extend(prev);
        quads.push(Quad { w: w.dg_star, a, r: prev_const });
        let (a5, r5) = if t >= 5 {
            (vec![(iu + 1, 1.0), (ocp.iu(t - 5) + 1, -1.0)], 0.0)
        } else {
            (vec![(iu + 1, 1.0)], history[hl + t - 5])
        };
        quads.push(Quad { w: w.dg_star_5, a: a5, r: r5 });
    }
    let w_f = if cfg.pod_enabled { w.f } else { w.f_no_pod.unwrap_or(w.f) };
    for t in 1..=n {
        let ix = ocp.ix(t);
        let w_omega = if t == n { w.omega_terminal } else { w.omega };
        quads.push(Quad { w: w_omega, a: vec![(ix + OMEGA, 1.0)], r: refs.omega[t - 1] });
        quads.push(Quad { w: w_f, a: vec![(ix + DF, 1.0)], r: refs.f[t - 1] - params.vsg.f_star });
        let (a, r) = if t == 1 {
            (vec![(ix + HP, 1.0)], x0[HP])
        } else {
            (vec![(ix + HP, 1.0), (ocp.ix(t - 1) + HP, -1.0)], 0.0)
        };
        quads.push(Quad { w: w.dh_p, a, r });
        for (k, spec) in cfg.slack.specs().iter().enumerate() {
            let j = ocp.ie(t) + k;
            quads.push(Quad { w: spec.s, a: vec![(j, 1.0)], r: 0.0 });
            if spec.rho != 0.0 {
                ocp.linear.push((j, spec.rho));
            }
        }
    }
    quads.retain(|q| q.w != 0.0);
    let mut hess = DMatrix::zeros(nv, nv);
    for q in &quads {
        for (i, ai) in &q.a {
            for (j, aj) in &q.a {
                hess[(*i, *j)] += q.w * ai * aj;
            }
        }
    }
    ocp.quads = quads;
    ocp.hess = hess;

    // Constraint rows.
    let mut rows = Vec::new();
    let specs = cfg.slack.specs();
    for t in 1..=n {
        for (k, spec) in specs.iter().enumerate() {
            let idx = match k {
                0 => Some(Q),
                1 => Some(HST),
                2 => None,
                _ => Some(OMEGA),
            };
            match idx {
                Some(idx) => {
                    if let Some(b) = spec.lo {
                        rows.push(Row::StateLo { t, idx, bound: b, slack: k });
                    }
                    if let Some(b) = spec.hi {
                        rows.push(Row::StateHi { t, idx, bound: b, slack: k });
                    }
                }
                None => {
                    if let Some(b) = spec.lo {
                        rows.push(Row::HeadLo { t, bound: b, slack: k });
                    }
                    if let Some(b) = spec.hi {
                        rows.push(Row::HeadHi { t, bound: b, slack: k });
                    }
                }
            }
        }
    }
    for t in 0..n {
        rows.push(Row::PgLo { t, bound: cfg.bounds.p_g[0] });
        rows.push(Row::PgHi { t, bound: cfg.bounds.p_g[1] });
    }
    if let Some(dx) = &cfg.delta_x_high {
        for t in 0..n {
            for (idx, b) in dx.iter().enumerate() {
                rows.push(Row::Dx { t, idx, sign: 1.0, bound: *b });
                rows.push(Row::Dx { t, idx, sign: -1.0, bound: *b });
            }
        }
    }
    ocp.rows = rows;

    // Initial guess: inputs from `warm` (or the last applied), states by
    // forward simulation, slacks at their smallest feasible values.
    let last_g = history[hl - 1];
    let inputs: Vec<[f64; 2]> = (0..n)
        .map(|t| match warm {
            Some(wu) if !wu.is_empty() => wu[t.min(wu.len() - 1)],
            _ => [signals_p_star_guess(signals, cfg), last_g],
        })
        .collect();
    let mut guess = vec![0.0; nv];
    let mut x = x0;
    for t in 0..n {
        let [p, g] = inputs[t];
        let g = g.clamp(cfg.bounds.g_star[0], cfg.bounds.g_star[1]);
        guess[2 * t] = p;
        guess[2 * t + 1] = g;
        x = ocp.stage_step(&x, p, g, t).unwrap_or(x);
        let s = ocp.ix(t + 1);
        guess[s..s + NX].copy_from_slice(&x);
    }
    for t in 1..=n {
        for k in 0..NSLACK {
            let row_viol = ocp
                .rows
                .iter()
                .filter(|r| match r {
                    Row::StateLo { t: rt, slack, .. }
                    | Row::StateHi { t: rt, slack, .. }
                    | Row::HeadHi { t: rt, slack, .. }
                    | Row::HeadLo { t: rt, slack, .. } => *rt == t && *slack == k,
                    _ => false,
                })
                .map(|r| ocp.row_value(&guess, r))
                .fold(0.0f64, f64::max);
            guess[ocp.ie(t) + k] = row_viol.max(0.0);
        }
    }
    ocp.guess = guess;
    Ok(ocp)
}

fn signals_p_star_guess(_signals: &MpcSignals, cfg: &MpcConfig) -> f64 {
    cfg.p_g_star_ref
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpcStatus {
    /// Converged solution applied.
    Optimal,
    /// Feasible iterate of an early-stopped solve applied.
    Acceptable,
    /// Solver did not converge; the previous input is held.
    Fallback,
}

#[derive(Debug, Clone)]
pub struct MpcDiagnostics {
    pub solver_status: Option<SolveStatus>,
    pub kkt: f64,
    pub iterations: usize,
    pub objective: f64,
    /// Largest slack over the horizon, per slack kind.
    pub max_slack: [f64; NSLACK],
    pub predicted: Vec<[f64; NX]>,
}

#[derive(Debug, Clone)]
pub struct MpcOutput {
    pub p_g_star: f64,
    pub g_star: f64,
    pub status: MpcStatus,
    pub diagnostics: MpcDiagnostics,
}

/// Receding-horizon controller with warm starting and a hold fallback.
#[derive(Debug, Clone)]
pub struct Mpc {
    pub cfg: MpcConfig,
    pub params: PlantParameters,
    last_applied: [f64; 2],
    previous_inputs: Option<Vec<[f64; 2]>>,
    pub solver: SolverConfig,
}

impl Mpc {
    pub fn new(cfg: MpcConfig, params: PlantParameters, initial_input: [f64; 2]) -> Self {
        let solver = SolverConfig { max_iter: cfg.max_iter, ..SolverConfig::default() };
        Self { cfg, params, last_applied: initial_input, previous_inputs: None, solver }
    }

    pub fn last_applied(&self) -> [f64; 2] {
        self.last_applied
    }

    pub fn solve(&mut self, x_hat: &[f64; NX], history: &[f64], signals: &MpcSignals) -> Result<MpcOutput, MpcError> {
        let warm: Vec<[f64; 2]> = match &self.previous_inputs {
            Some(prev) => {
                let mut w: Vec<[f64; 2]> = prev.iter().skip(1).copied().collect();
                w.push(*prev.last().unwrap());
                w
            }
            None => vec![self.last_applied; self.cfg.horizon],
        };
        let ocp = build_ocp(x_hat, history, signals, &self.cfg, &self.params, Some(&warm))?;
        let outcome = nlp::solve(&ocp, &self.solver);
        let out = match outcome {
            Ok(sol) if sol.status == SolveStatus::Converged => self.accept(&ocp, &sol, MpcStatus::Optimal),
            Ok(sol) if self.acceptable(&sol) => {
                log::debug!("MPC solve stopped with {:?} at KKT {:.3e}; applying the iterate", sol.status, sol.kkt.norm());
                self.accept(&ocp, &sol, MpcStatus::Acceptable)
            }
            Ok(sol) => {
                log::warn!(
                    "MPC solve did not converge ({:?}, KKT {:.3e} after {} iterations); holding previous input",
                    sol.status,
                    sol.kkt.norm(),
                    sol.iterations
                );
                self.previous_inputs = None;
                self.hold(Some(&ocp), Some(&sol))
            }
            Err(nlp::NlpError::Evaluation(e)) => {
                log::warn!("MPC evaluation failed ({e}); holding previous input");
                self.previous_inputs = None;
                self.hold(None, None)
            }
            Err(e) => return Err(e.into()),
        };
        Ok(out)
    }

    fn acceptable(&self, sol: &NlpSolution) -> bool {
        let k = &sol.kkt;
        sol.status != SolveStatus::InfeasibleSubproblem
            && k.eq_violation <= self.solver.eq_tol
            && k.ineq_violation <= self.solver.ineq_tol
            && k.stationarity.max(k.complementarity) <= self.cfg.acceptable_stationarity
    }

    fn accept(&mut self, ocp: &Ocp, sol: &NlpSolution, status: MpcStatus) -> MpcOutput {
        let n = ocp.horizon();
        let inputs: Vec<[f64; 2]> = (0..n).map(|t| [sol.x[2 * t], sol.x[2 * t + 1]]).collect();
        let [lo, hi] = self.cfg.bounds.g_star;
        let (p, g) = ocp.first_input(&sol.x);
        let g = g.clamp(lo, hi);
        self.last_applied = [p, g];
        self.previous_inputs = Some(inputs);
        MpcOutput { p_g_star: p, g_star: g, status, diagnostics: diagnostics(ocp, Some(sol)) }
    }

    fn hold(&self, ocp: Option<&Ocp>, sol: Option<&NlpSolution>) -> MpcOutput {
        let [lo, hi] = self.cfg.bounds.g_star;
        let diagnostics = match ocp {
            Some(o) => diagnostics(o, sol),
            None => MpcDiagnostics {
                solver_status: None,
                kkt: f64::NAN,
                iterations: 0,
                objective: f64::NAN,
                max_slack: [0.0; NSLACK],
                predicted: Vec::new(),
            },
        };
        MpcOutput {
            p_g_star: self.last_applied[0],
            g_star: self.last_applied[1].clamp(lo, hi),
            status: MpcStatus::Fallback,
            diagnostics,
        }
    }
}

fn diagnostics(ocp: &Ocp, sol: Option<&NlpSolution>) -> MpcDiagnostics {
    match sol {
        Some(s) => {
            let mut max_slack = [0.0f64; NSLACK];
            for st in ocp.slacks(&s.x) {
                for k in 0..NSLACK {
                    max_slack[k] = max_slack[k].max(st[k]);
                }
            }
            MpcDiagnostics {
                solver_status: Some(s.status),
                kkt: s.kkt.norm(),
                iterations: s.iterations,
                objective: s.objective,
                max_slack,
                predicted: ocp.predicted(&s.x),
            }
        }
        None => MpcDiagnostics {
            solver_status: None,
            kkt: f64::NAN,
            iterations: 0,
            objective: f64::NAN,
            max_slack: [0.0; NSLACK],
            predicted: Vec::new(),
        },
    }
}

#[cfg(test)]
mod tests;
