//! Dense convex QP by Mehrotra predictor-corrector interior point:
//!
//! ```text
//! min ½ xᵀPx + qᵀx   s.t.  Ax = b,  Gx ≤ h
//! ```

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

#[derive(Debug, Clone)]
pub struct DenseQp {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIterations,
    /// Iterates diverged or the linear systems broke down.
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Equality multipliers.
    pub y: DVector<f64>,
    /// Inequality multipliers, `z ≥ 0`.
    pub z: DVector<f64>,
    pub s: DVector<f64>,
    pub iterations: usize,
    pub status: QpStatus,
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { tol: 1e-11, max_iter: 80 }
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Factorisation of the reduced Newton system.
struct Reduced {
    m: Cholesky<f64, Dyn>,
    schur: Option<Cholesky<f64, Dyn>>,
    /// M⁻¹Aᵀ, kept for the Schur solve.
    minv_at: DMatrix<f64>,
}

fn factor(qp: &DenseQp, w: &DVector<f64>, base_reg: f64) -> Option<Reduced> {
    let n = qp.q.len();
    // GᵀWG
    let mut wg = qp.g.clone();
    for (i, mut row) in wg.row_iter_mut().enumerate() {
        row *= w[i];
    }
    let m = &qp.p + qp.g.transpose() * wg;
    let scale = (0..n).fold(1.0f64, |acc, i| acc.max(m[(i, i)].abs()));
    let mut reg = base_reg * scale;
    for _ in 0..12 {
        let mut mm = m.clone();
        for i in 0..n {
            mm[(i, i)] += reg;
        }
        if let Some(ch) = mm.cholesky() {
            if qp.a.nrows() == 0 {
                return Some(Reduced { m: ch, schur: None, minv_at: DMatrix::zeros(n, 0) });
            }
            let minv_at = ch.solve(&qp.a.transpose());
            let mut s = &qp.a * &minv_at;
            let ss = (0..s.nrows()).fold(1e-300f64, |acc, i| acc.max(s[(i, i)].abs()));
            for i in 0..s.nrows() {
                s[(i, i)] += 1e-14 * ss;
            }
            let schur = s.cholesky()?;
            return Some(Reduced { m: ch, schur: Some(schur), minv_at });
        }
        reg = (reg * 100.0).max(1e-10 * scale);
    }
    None
}

struct Dir {
    dx: DVector<f64>,
    dy: DVector<f64>,
    dz: DVector<f64>,
    ds: DVector<f64>,
}

#[allow(clippy::too_many_arguments)]
fn solve_newton(
    qp: &DenseQp,
    f: &Reduced,
    s: &DVector<f64>,
    z: &DVector<f64>,
    r_d: &DVector<f64>,
    r_p: &DVector<f64>,
    r_g: &DVector<f64>,
    r_c: &DVector<f64>,
) -> Dir {
    let t = DVector::from_fn(s.len(), |i, _| (z[i] * r_g[i] - r_c[i]) / s[i]);
    let r1 = -r_d - qp.g.transpose() * &t;
    let minv_r1 = f.m.solve(&r1);
    let (dx, dy) = match &f.schur {
        Some(sc) => {
            let rhs = &qp.a * &minv_r1 + r_p;
            let dy = sc.solve(&rhs);
            let dx = &minv_r1 - &f.minv_at * &dy;
            (dx, dy)
        }
        None => (minv_r1, DVector::zeros(0)),
    };
    let gdx = &qp.g * &dx;
    let ds = -r_g - &gdx;
    let dz = DVector::from_fn(s.len(), |i, _| t[i] + z[i] / s[i] * gdx[i]);
    Dir { dx, dy, dz, ds }
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut a = 1.0f64;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            a = a.min(-v[i] / dv[i]);
        }
    }
    a
}

pub fn solve_qp(qp: &DenseQp, settings: &QpSettings) -> QpSolution {
    let n = qp.q.len();
    let mg = qp.h.len();
    let ma = qp.b.len();
    let tol = settings.tol;
    let scale_d = 1.0 + inf_norm(&qp.q);
    let scale_p = 1.0 + inf_norm(&qp.b);
    let scale_g = 1.0 + inf_norm(&qp.h);

    // Starting point from the W = I system.
    let ones = DVector::from_element(mg, 1.0);
    let (mut x, mut y, mut z, mut s);
    match factor(qp, &ones, 1e-12) {
        Some(f) => {
            let zero_s = DVector::from_element(mg, 1.0);
            let r_d = &qp.q - qp.g.transpose() * &qp.h;
            let r_p = -&qp.b;
            let r_g = -&qp.h;
            let r_c = DVector::zeros(mg);
            let d = solve_newton(qp, &f, &zero_s, &DVector::zeros(mg), &r_d, &r_p, &r_g, &r_c);
            x = d.dx;
            y = d.dy;
            let slack = &qp.h - &qp.g * &x;
            let lo = slack.iter().fold(f64::INFINITY, |m, v| m.min(*v));
            let shift = if mg == 0 || lo > 1e-3 { 0.0 } else { 1.0 - lo };
            s = slack.map(|v| v + shift);
            z = s.map(|v| (1.0 / v).clamp(1e-2, 1e2));
        }
        None => {
            return QpSolution {
                x: DVector::zeros(n),
                y: DVector::zeros(ma),
                z: DVector::zeros(mg),
                s: DVector::zeros(mg),
                iterations: 0,
                status: QpStatus::Infeasible,
            };
        }
    }

    let mut status = QpStatus::MaxIterations;
    let mut iterations = 0;
    for it in 0..settings.max_iter {
        iterations = it;
        let r_d = &qp.p * &x + &qp.q + qp.a.transpose() * &y + qp.g.transpose() * &z;
        let r_p = &qp.a * &x - &qp.b;
        let r_g = &qp.g * &x + &s - &qp.h;
        let gap = s.dot(&z);
        let mu = if mg > 0 { gap / mg as f64 } else { 0.0 };
        let pobj = 0.5 * x.dot(&(&qp.p * &x)) + qp.q.dot(&x);
        if inf_norm(&r_d) <= tol * scale_d
            && inf_norm(&r_p) <= tol * scale_p
            && inf_norm(&r_g) <= tol * scale_g
            && gap <= tol * (1.0 + pobj.abs())
        {
            status = QpStatus::Solved;
            break;
        }
        if !x.iter().all(|v| v.is_finite()) || z.iter().any(|v| *v > 1e30) {
            status = QpStatus::Infeasible;
            break;
        }
        let w = DVector::from_fn(mg, |i, _| z[i] / s[i]);
        let Some(f) = factor(qp, &w, 1e-13) else {
            status = QpStatus::Infeasible;
            break;
        };
        let r_c = s.component_mul(&z);
        let aff = solve_newton(qp, &f, &s, &z, &r_d, &r_p, &r_g, &r_c);
        let a_aff = max_step(&s, &aff.ds).min(max_step(&z, &aff.dz));
        let sigma = if mg > 0 {
            let s_aff = &s + &aff.ds * a_aff;
            let z_aff = &z + &aff.dz * a_aff;
            let mu_aff = s_aff.dot(&z_aff) / mg as f64;
            (mu_aff / mu).clamp(0.0, 1.0).powi(3)
        } else {
            0.0
        };
        let r_c = DVector::from_fn(mg, |i, _| s[i] * z[i] + aff.ds[i] * aff.dz[i] - sigma * mu);
        let d = solve_newton(qp, &f, &s, &z, &r_d, &r_p, &r_g, &r_c);
        let a_max = max_step(&s, &d.ds).min(max_step(&z, &d.dz));
        let alpha = (0.995 * a_max).min(1.0);
        x += &d.dx * alpha;
        y += &d.dy * alpha;
        z += &d.dz * alpha;
        s += &d.ds * alpha;
        iterations = it + 1;
    }
    QpSolution { x, y, z, s, iterations, status }
}
