//! Small problems with known solutions, used to exercise the solver.

use nalgebra::{DMatrix, DVector};

use super::{Derivatives, EvalError, Layout, NlpProblem, Values};

/// Unconstrained convex quadratic `0.5 xᵀPx + qᵀx` in three variables.
pub struct Quadratic {
    layout: Layout,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x0: Vec<f64>,
}

impl Quadratic {
    pub fn new(x0: Vec<f64>) -> Self {
        let mut layout = Layout::default();
        layout.push("x", 3);
        Self { layout, lo: vec![f64::NEG_INFINITY; 3], hi: vec![f64::INFINITY; 3], x0 }
    }

    pub fn p() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0])
    }

    pub fn q() -> DVector<f64> {
        DVector::from_vec(vec![1.0, -2.0, 0.5])
    }
}

impl NlpProblem for Quadratic {
    fn layout(&self) -> &Layout {
        &self.layout
    }
    fn n_eq(&self) -> usize {
        0
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
        self.x0.clone()
    }
    fn values(&self, x: &[f64]) -> Result<Values, EvalError> {
        let v = DVector::from_column_slice(x);
        let f = 0.5 * v.dot(&(Self::p() * &v)) + Self::q().dot(&v);
        Ok(Values { f, c: DVector::zeros(0), d: DVector::zeros(0) })
    }
    fn derivatives(&self, x: &[f64]) -> Result<Derivatives, EvalError> {
        let v = DVector::from_column_slice(x);
        Ok(Derivatives { grad: Self::p() * v + Self::q(), jc: DMatrix::zeros(0, 3), jd: DMatrix::zeros(0, 3) })
    }
    fn hessian(&self, _: &[f64], _: &[f64], _: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        Ok(Self::p())
    }
}

/// min x² s.t. 1 - x ≤ 0
pub struct SquareAboveOne {
    layout: Layout,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    x0: f64,
}

impl SquareAboveOne {
    pub fn new(x0: f64) -> Self {
        let mut layout = Layout::default();
        layout.push("x", 1);
        Self { layout, lo: vec![f64::NEG_INFINITY], hi: vec![f64::INFINITY], x0 }
    }
}

impl NlpProblem for SquareAboveOne {
    fn layout(&self) -> &Layout {
        &self.layout
    }
    fn n_eq(&self) -> usize {
        0
    }
    fn n_ineq(&self) -> usize {
        1
    }
    fn lower(&self) -> &[f64] {
        &self.lo
    }
    fn upper(&self) -> &[f64] {
        &self.hi
    }
    fn initial_guess(&self) -> Vec<f64> {
        vec![self.x0]
    }
    fn values(&self, x: &[f64]) -> Result<Values, EvalError> {
        Ok(Values { f: x[0] * x[0], c: DVector::zeros(0), d: DVector::from_element(1, 1.0 - x[0]) })
    }
    fn derivatives(&self, x: &[f64]) -> Result<Derivatives, EvalError> {
        Ok(Derivatives {
            grad: DVector::from_element(1, 2.0 * x[0]),
            jc: DMatrix::zeros(0, 1),
            jd: DMatrix::from_element(1, 1, -1.0),
        })
    }
    fn hessian(&self, _: &[f64], _: &[f64], _: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        Ok(DMatrix::from_element(1, 1, 2.0))
    }
}

/// Rosenbrock function on the unit circle `x₁² + x₂² = 1`.
pub struct RosenbrockCircle {
    layout: Layout,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x0: Vec<f64>,
}

impl RosenbrockCircle {
    pub fn new(x0: Vec<f64>) -> Self {
        let mut layout = Layout::default();
        layout.push("x", 2);
        Self { layout, lo: vec![f64::NEG_INFINITY; 2], hi: vec![f64::INFINITY; 2], x0 }
    }
}

impl NlpProblem for RosenbrockCircle {
    fn layout(&self) -> &Layout {
        &self.layout
    }
    fn n_eq(&self) -> usize {
        1
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
        self.x0.clone()
    }
    fn values(&self, x: &[f64]) -> Result<Values, EvalError> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        Ok(Values { f, c: DVector::from_element(1, a * a + b * b - 1.0), d: DVector::zeros(0) })
    }
    fn derivatives(&self, x: &[f64]) -> Result<Derivatives, EvalError> {
        let (a, b) = (x[0], x[1]);
        let grad = DVector::from_vec(vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]);
        Ok(Derivatives { grad, jc: DMatrix::from_row_slice(1, 2, &[2.0 * a, 2.0 * b]), jd: DMatrix::zeros(0, 2) })
    }
    fn hessian(&self, x: &[f64], lambda: &[f64], _: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        let (a, b) = (x[0], x[1]);
        let l = lambda[0];
        Ok(DMatrix::from_row_slice(
            2,
            2,
            &[2.0 - 400.0 * (b - a * a) + 800.0 * a * a + 2.0 * l, -400.0 * a, -400.0 * a, 200.0 + 2.0 * l],
        ))
    }
}
