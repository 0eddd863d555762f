//! Forward-mode differentiation helpers on top of `num-dual`.

use num_dual::{DualNum, DualSVec64, DualStruct};

/// Scalar type the model equations are written over: plain `f64` for
/// simulation, dual numbers when a Jacobian is needed.
pub trait Real: DualNum<Primitive = f64> + Copy {
    /// Value part.
    fn val(&self) -> f64;
}

impl<T: DualNum<Primitive = f64> + Copy + DualStruct<Real = f64>> Real for T {
    #[inline]
    fn val(&self) -> f64 {
        self.re()
    }
}

/// Lift a constant.
#[inline]
pub fn cst<T: Real>(v: f64) -> T {
    T::from(v)
}

/// Seed `x` as the independent variables of an `N`-direction dual number.
pub fn seed<const N: usize>(x: &[f64; N]) -> [DualSVec64<N>; N] {
    std::array::from_fn(|i| DualSVec64::from_re(x[i]).derivative(i))
}

/// Value and gradient of a dual number.
pub fn split<const N: usize>(y: &DualSVec64<N>) -> (f64, [f64; N]) {
    let mut g = [0.0; N];
    if let Some(eps) = y.eps.0.as_ref() {
        for (i, gi) in g.iter_mut().enumerate() {
            *gi = eps[i];
        }
    }
    (y.re, g)
}
