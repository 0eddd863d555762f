//! Sequential quadratic programming for the dense NLPs built by the
//! controller and the estimator:
//!
//! ```text
//! min f(x)  s.t.  c(x) = 0,  d(x) ≤ 0,  lo ≤ x ≤ hi
//! ```
//!
//! When every equality row defines one "dependent" variable (as with
//! multiple-shooting dynamics), the QP subproblem is condensed onto the
//! remaining variables before being handed to the interior-point solver.

mod check;
pub mod examples;
pub mod qp;

use std::io::Write;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use check::{check_derivatives, DerivativeReport};
use qp::{solve_qp, DenseQp, QpSettings, QpStatus};

/// Contiguous named block of decision variables.
#[derive(Debug, Clone, PartialEq)]
pub struct VarBlock {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Layout {
    pub blocks: Vec<VarBlock>,
}

impl Layout {
    pub fn push(&mut self, name: impl Into<String>, len: usize) -> usize {
        let start = self.len();
        self.blocks.push(VarBlock { name: name.into(), start, len });
        start
    }

    pub fn len(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.start + b.len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Name of the block holding variable `i`.
    pub fn block_of(&self, i: usize) -> Option<&str> {
        self.blocks.iter().find(|b| i >= b.start && i < b.start + b.len).map(|b| b.name.as_str())
    }
}

/// A domain error raised by an evaluator, tagged with the variable block
/// whose values caused it.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("evaluation failed in variable block `{block}`: {message}")]
pub struct EvalError {
    pub block: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Values {
    pub f: f64,
    pub c: DVector<f64>,
    pub d: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct Derivatives {
    pub grad: DVector<f64>,
    pub jc: DMatrix<f64>,
    pub jd: DMatrix<f64>,
}

pub trait NlpProblem {
    fn layout(&self) -> &Layout;
    fn n_eq(&self) -> usize;
    fn n_ineq(&self) -> usize;
    fn lower(&self) -> &[f64];
    fn upper(&self) -> &[f64];
    fn initial_guess(&self) -> Vec<f64>;

    /// For each equality row, the variable it defines. Returning `Some`
    /// promises the Jacobian of `c` restricted to these columns is lower
    /// triangular with a nonzero diagonal.
    fn dependents(&self) -> Option<Vec<usize>> {
        None
    }

    /// Problem-specific correction of a trial point, applied after the
    /// dependent variables are restored. Used to reset slack variables to
    /// their cheapest feasible values.
    fn adjust_trial(&self, _x: &mut [f64]) {}

    fn values(&self, x: &[f64]) -> Result<Values, EvalError>;
    fn derivatives(&self, x: &[f64]) -> Result<Derivatives, EvalError>;

    /// Hessian (or a positive semidefinite approximation) of the
    /// Lagrangian `f + λᵀc + μᵀd`.
    fn hessian(&self, x: &[f64], lambda: &[f64], mu: &[f64]) -> Result<DMatrix<f64>, EvalError>;
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Stationarity and complementarity tolerance, relative to max(1, |∇f|∞).
    pub kkt_tol: f64,
    pub eq_tol: f64,
    pub ineq_tol: f64,
    /// Optional text log, one line per iteration.
    pub iterate_log: Option<PathBuf>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { max_iter: 50, kkt_tol: 1e-6, eq_tol: 1e-8, ineq_tol: 1e-8, iterate_log: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    InfeasibleSubproblem,
    LineSearchFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResidual {
    pub stationarity: f64,
    pub complementarity: f64,
    pub eq_violation: f64,
    pub ineq_violation: f64,
}

impl KktResidual {
    pub fn norm(&self) -> f64 {
        self.stationarity.max(self.complementarity).max(self.eq_violation).max(self.ineq_violation)
    }

    fn satisfied(&self, cfg: &SolverConfig) -> bool {
        self.stationarity <= cfg.kkt_tol
            && self.complementarity <= cfg.kkt_tol
            && self.eq_violation <= cfg.eq_tol
            && self.ineq_violation <= cfg.ineq_tol
    }
}

#[derive(Debug, Clone)]
pub struct NlpSolution {
    pub x: Vec<f64>,
    /// Equality multipliers.
    pub lambda: Vec<f64>,
    /// Inequality multipliers, ≥ 0.
    pub mu: Vec<f64>,
    /// Net bound multipliers: positive at an active upper bound, negative
    /// at an active lower bound.
    pub bound_mult: Vec<f64>,
    pub objective: f64,
    pub kkt: KktResidual,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Merit value before and after each accepted step, under the penalty
    /// in force for that step.
    pub merit_steps: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NlpError {
    #[error(transparent)]
    Evaluation(#[from] EvalError),
    #[error("bounds inconsistent at variable {index}: {lo} > {hi}")]
    InconsistentBounds { index: usize, lo: f64, hi: f64 },
    #[error("problem dimensions inconsistent: {0}")]
    Dimension(String),
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn kkt_residual(
    x: &[f64],
    lo: &[f64],
    hi: &[f64],
    vals: &Values,
    ders: &Derivatives,
    lambda: &DVector<f64>,
    mu: &DVector<f64>,
    nu: &DVector<f64>,
) -> KktResidual {
    let scale = inf_norm(&ders.grad).max(1.0);
    let r = &ders.grad + ders.jc.transpose() * lambda + ders.jd.transpose() * mu + nu;
    let mut comp = 0.0f64;
    for i in 0..mu.len() {
        comp = comp.max((mu[i] * vals.d[i]).abs()).max(-mu[i]);
    }
    for i in 0..x.len() {
        let gap_hi = if hi[i].is_finite() { hi[i] - x[i] } else { f64::INFINITY };
        let gap_lo = if lo[i].is_finite() { x[i] - lo[i] } else { f64::INFINITY };
        let term = if nu[i] > 0.0 { nu[i] * gap_hi } else if nu[i] < 0.0 { -nu[i] * gap_lo } else { 0.0 };
        comp = comp.max(term);
    }
    KktResidual {
        stationarity: inf_norm(&r) / scale,
        complementarity: comp / scale,
        eq_violation: inf_norm(&vals.c),
        ineq_violation: vals.d.iter().fold(0.0f64, |m, v| m.max(*v)),
    }
}

fn merit(vals: &Values, nu: f64) -> f64 {
    let infeas: f64 = vals.c.iter().map(|v| v.abs()).sum::<f64>() + vals.d.iter().map(|v| v.max(0.0)).sum::<f64>();
    vals.f + nu * infeas
}

/// Condensing map `Δ = T ΔF + t0` from the free variables.
struct Condensing {
    dep: Vec<usize>,
    /// n × nF
    t: DMatrix<f64>,
    /// n
    t0: DVector<f64>,
    /// Jc restricted to the dependent columns.
    jd_dep: DMatrix<f64>,
}

fn condense(n: usize, dep: &[usize], jc: &DMatrix<f64>, c: &DVector<f64>) -> Option<Condensing> {
    let m = dep.len();
    let mut is_dep = vec![false; n];
    for &j in dep {
        if j >= n || is_dep[j] {
            return None;
        }
        is_dep[j] = true;
    }
    let free: Vec<usize> = (0..n).filter(|&j| !is_dep[j]).collect();
    let nf = free.len();
    let jdd = DMatrix::from_fn(m, m, |i, k| jc[(i, dep[k])]);
    for i in 0..m {
        if jdd[(i, i)] == 0.0 {
            return None;
        }
        for k in i + 1..m {
            if jdd[(i, k)] != 0.0 {
                return None;
            }
        }
    }
    let jf = DMatrix::from_fn(m, nf, |i, k| jc[(i, free[k])]);
    let gamma = jdd.solve_lower_triangular(&(-jf))?;
    let g0 = jdd.solve_lower_triangular(&(-c))?;
    let mut t = DMatrix::zeros(n, nf);
    let mut t0 = DVector::zeros(n);
    for (k, &j) in free.iter().enumerate() {
        t[(j, k)] = 1.0;
    }
    for (i, &j) in dep.iter().enumerate() {
        t.row_mut(j).copy_from(&gamma.row(i));
        t0[j] = g0[i];
    }
    Some(Condensing { dep: dep.to_vec(), t, t0, jd_dep: jdd })
}

struct Step {
    dx: DVector<f64>,
    lambda: DVector<f64>,
    mu: DVector<f64>,
    nu: DVector<f64>,
}

/// Rows `Gx ≤ h` for finite bounds on `Δ = T ΔF + t0`.
fn bound_rows(
    x: &[f64],
    lo: &[f64],
    hi: &[f64],
    t: &DMatrix<f64>,
    t0: &DVector<f64>,
) -> (Vec<(usize, f64)>, DMatrix<f64>, DVector<f64>) {
    let mut idx = Vec::new();
    for i in 0..x.len() {
        if hi[i].is_finite() {
            idx.push((i, 1.0));
        }
        if lo[i].is_finite() {
            idx.push((i, -1.0));
        }
    }
    let nf = t.ncols();
    let mut g = DMatrix::zeros(idx.len(), nf);
    let mut h = DVector::zeros(idx.len());
    for (r, &(i, sgn)) in idx.iter().enumerate() {
        g.row_mut(r).copy_from(&(t.row(i) * sgn));
        h[r] = if sgn > 0.0 { hi[i] - x[i] - t0[i] } else { x[i] - lo[i] + t0[i] };
    }
    (idx, g, h)
}

fn qp_step(
    x: &[f64],
    lo: &[f64],
    hi: &[f64],
    vals: &Values,
    ders: &Derivatives,
    hess: &DMatrix<f64>,
    dep: Option<&[usize]>,
) -> Result<Step, SolveStatus> {
    let n = x.len();
    let me = vals.c.len();
    let mi = vals.d.len();
    let cond = dep.and_then(|d| condense(n, d, &ders.jc, &vals.c));
    let (t, t0) = match &cond {
        Some(cd) => (cd.t.clone(), cd.t0.clone()),
        None => (DMatrix::identity(n, n), DVector::zeros(n)),
    };
    let (bidx, gb, hb) = bound_rows(x, lo, hi, &t, &t0);
    let jdt = &ders.jd * &t;
    let mut g = DMatrix::zeros(mi + bidx.len(), t.ncols());
    g.rows_mut(0, mi).copy_from(&jdt);
    g.rows_mut(mi, bidx.len()).copy_from(&gb);
    let mut h = DVector::zeros(mi + bidx.len());
    h.rows_mut(0, mi).copy_from(&(-&vals.d - &ders.jd * &t0));
    h.rows_mut(mi, bidx.len()).copy_from(&hb);
    let ht = hess * &t;
    let p = t.transpose() * &ht;
    let p = (&p + p.transpose()) * 0.5;
    let q = t.transpose() * (hess * &t0 + &ders.grad);
    let (a, b) = match &cond {
        Some(_) => (DMatrix::zeros(0, t.ncols()), DVector::zeros(0)),
        None => (ders.jc.clone(), -&vals.c),
    };
    let sub = DenseQp { p, q, a, b, g, h };
    let sol = solve_qp(&sub, &QpSettings::default());
    match sol.status {
        QpStatus::Solved => {}
        QpStatus::MaxIterations => {
            log::debug!("QP subproblem hit its iteration limit; using the last iterate");
        }
        QpStatus::Infeasible => return Err(SolveStatus::InfeasibleSubproblem),
    }
    let dx = &t * &sol.x + &t0;
    let mu = sol.z.rows(0, mi).into_owned();
    let mut nu = DVector::zeros(n);
    for (r, &(i, sgn)) in bidx.iter().enumerate() {
        nu[i] += sgn * sol.z[mi + r];
    }
    let lambda = match &cond {
        Some(cd) => {
            // Stationarity on the dependent columns fixes λ.
            let r = hess * &dx + &ders.grad + ders.jd.transpose() * &mu + &nu;
            let rd = DVector::from_fn(me, |i, _| -r[cd.dep[i]]);
            cd.jd_dep.transpose().solve_upper_triangular(&rd).ok_or(SolveStatus::InfeasibleSubproblem)?
        }
        None => sol.y,
    };
    Ok(Step { dx, lambda, mu, nu })
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].max(lo[i]).min(hi[i]);
    }
}

/// Solve an NLP from its initial guess (projected onto the bounds).
pub fn solve(problem: &dyn NlpProblem, cfg: &SolverConfig) -> Result<NlpSolution, NlpError> {
    let n = problem.layout().len();
    let lo = problem.lower().to_vec();
    let hi = problem.upper().to_vec();
    if lo.len() != n || hi.len() != n {
        return Err(NlpError::Dimension(format!("{} variables but {} / {} bounds", n, lo.len(), hi.len())));
    }
    for i in 0..n {
        if lo[i] > hi[i] {
            return Err(NlpError::InconsistentBounds { index: i, lo: lo[i], hi: hi[i] });
        }
    }
    let mut x = problem.initial_guess();
    if x.len() != n {
        return Err(NlpError::Dimension(format!("initial guess has {} entries, expected {n}", x.len())));
    }
    project(&mut x, &lo, &hi);
    let dep = problem.dependents();
    let me = problem.n_eq();
    let mi = problem.n_ineq();
    let mut log_file = cfg.iterate_log.as_ref().and_then(|p| std::fs::File::create(p).ok());

    let mut vals = problem.values(&x)?;
    if vals.c.len() != me || vals.d.len() != mi {
        return Err(NlpError::Dimension("constraint values disagree with declared row counts".into()));
    }
    let mut ders = problem.derivatives(&x)?;
    let mut lambda = DVector::zeros(me);
    let mut mu = DVector::zeros(mi);
    let mut nu = DVector::zeros(n);
    let mut penalty = 0.0f64;
    let mut merit_steps = Vec::new();
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    let mut kkt = kkt_residual(&x, &lo, &hi, &vals, &ders, &lambda, &mu, &nu);

    for it in 0..=cfg.max_iter {
        kkt = kkt_residual(&x, &lo, &hi, &vals, &ders, &lambda, &mu, &nu);
        if kkt.satisfied(cfg) {
            status = SolveStatus::Converged;
            break;
        }
        if it == cfg.max_iter {
            break;
        }
        iterations = it + 1;
        let hess = problem.hessian(&x, lambda.as_slice(), mu.as_slice())?;
        let step = match qp_step(&x, &lo, &hi, &vals, &ders, &hess, dep.as_deref()) {
            Ok(s) => s,
            Err(st) => {
                status = st;
                break;
            }
        };
        let mult_norm = inf_norm(&step.lambda).max(inf_norm(&step.mu));
        if penalty < 1.1 * mult_norm {
            penalty = (2.0 * mult_norm).max(penalty);
        }
        let phi0 = merit(&vals, penalty);
        let infeas0: f64 =
            vals.c.iter().map(|v| v.abs()).sum::<f64>() + vals.d.iter().map(|v| v.max(0.0)).sum::<f64>();
        let slope = ders.grad.dot(&step.dx) - penalty * infeas0;

        // With dependent variables every trial point is pulled back onto
        // the equality manifold first; otherwise the plain step is tried,
        // with one second-order correction at the full step.
        let restore = dep.as_deref().and_then(|d| DependentSolver::new(d, &ders.jc));
        // Merit changes at round-off level near the solution count as no
        // increase.
        let noise = 1e-14 * phi0.abs().max(1.0);
        let mut alpha = 1.0;
        let mut accepted: Option<(Vec<f64>, Values)> = None;
        while alpha > 1e-10 {
            let mut trial: Vec<f64> = (0..n).map(|i| x[i] + alpha * step.dx[i]).collect();
            project(&mut trial, &lo, &hi);
            let evaluated = match &restore {
                Some(r) => r.restore(problem, trial, &lo, &hi, cfg.eq_tol),
                None => Some(trial).and_then(|t| problem.values(&t).ok().map(|tv| (t, tv))),
            };
            let evaluated = evaluated.and_then(|(mut t, tv)| {
                let before = t.clone();
                problem.adjust_trial(&mut t);
                project(&mut t, &lo, &hi);
                if t == before {
                    Some((t, tv))
                } else {
                    problem.values(&t).ok().map(|tv| (t, tv))
                }
            });
            if let Some((trial, tv)) = evaluated {
                let phi = merit(&tv, penalty);
                if phi.is_finite() && phi <= phi0 + 1e-4 * alpha * slope.min(0.0) + noise {
                    accepted = Some((trial, tv));
                    break;
                }
                if alpha == 1.0 && restore.is_none() {
                    if let Some(soc) = second_order_correction(&x, &step.dx, &tv, &ders, dep.as_deref(), &lo, &hi) {
                        if let Ok(sv) = problem.values(&soc) {
                            let phi = merit(&sv, penalty);
                            if phi.is_finite() && phi <= phi0 + 1e-4 * slope.min(0.0) {
                                accepted = Some((soc, sv));
                                break;
                            }
                        }
                    }
                }
            }
            alpha *= 0.5;
        }
        let Some((xn, vn)) = accepted else {
            status = SolveStatus::LineSearchFailed;
            break;
        };
        let step_norm = (0..n).fold(0.0f64, |m, i| m.max((xn[i] - x[i]).abs()));
        x = xn;
        vals = vn;
        ders = problem.derivatives(&x)?;
        lambda += (&step.lambda - &lambda) * alpha;
        mu += (&step.mu - &mu) * alpha;
        nu += (&step.nu - &nu) * alpha;
        if alpha < 1.0 {
            // Short steps leave the blended multipliers stale; keep the QP
            // ones when they fit the new point better.
            let blended = kkt_residual(&x, &lo, &hi, &vals, &ders, &lambda, &mu, &nu).norm();
            let full = kkt_residual(&x, &lo, &hi, &vals, &ders, &step.lambda, &step.mu, &step.nu).norm();
            if full < blended {
                lambda = step.lambda.clone();
                mu = step.mu.clone();
                nu = step.nu.clone();
            }
        }
        merit_steps.push((phi0, merit(&vals, penalty)));
        if let Some(f) = log_file.as_mut() {
            let _ = writeln!(f, "{:4} {:.12e} {:.6e} {:.6e} {:.3e}", it, vals.f, kkt.norm(), step_norm, alpha);
        }
    }
    if status == SolveStatus::MaxIterations && kkt.satisfied(cfg) {
        status = SolveStatus::Converged;
    }
    if let Some(f) = log_file.as_mut() {
        let _ = writeln!(f, "# status {:?} objective {:.12e} kkt {:.6e}", status, vals.f, kkt.norm());
    }
    Ok(NlpSolution {
        x,
        lambda: lambda.as_slice().to_vec(),
        mu: mu.as_slice().to_vec(),
        bound_mult: nu.as_slice().to_vec(),
        objective: vals.f,
        kkt,
        iterations,
        status,
        merit_steps,
    })
}

/// Shift the dependent variables of a rejected full step so the linearised
/// equalities hold at the trial point.
#[allow(clippy::too_many_arguments)]
/// Simplified Newton on the dependent variables with the Jacobian frozen
/// at the current iterate.
struct DependentSolver<'a> {
    dep: &'a [usize],
    jdd: DMatrix<f64>,
}

impl<'a> DependentSolver<'a> {
    fn new(dep: &'a [usize], jc: &DMatrix<f64>) -> Option<Self> {
        if dep.is_empty() {
            return None;
        }
        let m = dep.len();
        Some(Self { dep, jdd: DMatrix::from_fn(m, m, |i, k| jc[(i, dep[k])]) })
    }

    fn restore(
        &self,
        problem: &dyn NlpProblem,
        mut xs: Vec<f64>,
        lo: &[f64],
        hi: &[f64],
        eq_tol: f64,
    ) -> Option<(Vec<f64>, Values)> {
        let mut vals = problem.values(&xs).ok()?;
        for _ in 0..12 {
            let r = inf_norm(&vals.c);
            if r <= 1e-2 * eq_tol {
                break;
            }
            let corr = self.jdd.solve_lower_triangular(&(-&vals.c))?;
            let mut next = xs.clone();
            for (i, &j) in self.dep.iter().enumerate() {
                next[j] += corr[i];
            }
            project(&mut next, lo, hi);
            let nv = problem.values(&next).ok()?;
            if !(inf_norm(&nv.c) < r) {
                break;
            }
            xs = next;
            vals = nv;
        }
        Some((xs, vals))
    }
}

fn second_order_correction(
    x: &[f64],
    dx: &DVector<f64>,
    trial: &Values,
    ders: &Derivatives,
    dep: Option<&[usize]>,
    lo: &[f64],
    hi: &[f64],
) -> Option<Vec<f64>> {
    let dep = dep?;
    let m = dep.len();
    if m == 0 {
        return None;
    }
    let jdd = DMatrix::from_fn(m, m, |i, k| ders.jc[(i, dep[k])]);
    let corr = jdd.solve_lower_triangular(&(-&trial.c))?;
    let mut xs: Vec<f64> = (0..x.len()).map(|i| x[i] + dx[i]).collect();
    for (i, &j) in dep.iter().enumerate() {
        xs[j] += corr[i];
    }
    project(&mut xs, lo, hi);
    Some(xs)
}

#[cfg(test)]
mod tests;
