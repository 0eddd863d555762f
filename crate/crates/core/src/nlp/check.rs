use super::{EvalError, NlpProblem};

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeReport {
    pub max_rel_error: f64,
    /// Where the worst entry sits: "gradient", "eq_jacobian" or "ineq_jacobian",
    /// with its row and column.
    pub worst: (&'static str, usize, usize),
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Compare the analytic gradient and constraint Jacobians against central
/// differences at `x`.
pub fn check_derivatives(problem: &dyn NlpProblem, x: &[f64]) -> Result<DerivativeReport, EvalError> {
    let ders = problem.derivatives(x)?;
    let mut report = DerivativeReport { max_rel_error: 0.0, worst: ("gradient", 0, 0) };
    let mut note = |kind: &'static str, row: usize, col: usize, e: f64| {
        if e > report.max_rel_error {
            report.max_rel_error = e;
            report.worst = (kind, row, col);
        }
    };
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let h = 1e-6 * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        let vp = problem.values(&xp)?;
        xp[j] = x[j] - h;
        let vm = problem.values(&xp)?;
        xp[j] = x[j];
        note("gradient", 0, j, rel_err(ders.grad[j], (vp.f - vm.f) / (2.0 * h)));
        for i in 0..vp.c.len() {
            note("eq_jacobian", i, j, rel_err(ders.jc[(i, j)], (vp.c[i] - vm.c[i]) / (2.0 * h)));
        }
        for i in 0..vp.d.len() {
            note("ineq_jacobian", i, j, rel_err(ders.jd[(i, j)], (vp.d[i] - vm.d[i]) / (2.0 * h)));
        }
    }
    Ok(report)
}
