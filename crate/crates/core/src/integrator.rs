//! Classical fourth-order Runge-Kutta with zero-order-hold inputs, and the
//! plant step that adds the penstock travelling-wave correction.

use crate::ad::Real;
use crate::error::{ConfigError, IntegrationError, PlantError};
use crate::params::PlantParameters;
use crate::plant::{rigid_derivatives, wave_update, NU, NX, HP, Q};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub dt: f64,
    pub wave_correction_enabled: bool,
}

impl StepConfig {
    /// Step of one wave round trip, with the correction on.
    pub fn for_plant(p: &PlantParameters) -> Self {
        Self { dt: p.wave_step(), wave_correction_enabled: true }
    }

    pub fn validate(&self, p: &PlantParameters) -> Result<(), ConfigError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(ConfigError::Invalid(format!("step length must be positive, got {}", self.dt)));
        }
        if self.wave_correction_enabled && (self.dt - p.wave_step()).abs() > 1e-12 {
            return Err(ConfigError::Invalid(format!(
                "wave correction needs dt = 2*t_e = {}, got {}",
                p.wave_step(),
                self.dt
            )));
        }
        Ok(())
    }
}

/// One RK4 step of `x' = f(x, u)` with `u` held over the step. Errors carry
/// the stage (1 to 4) at which `f` failed.
pub fn rk4_step<T, U, F, const N: usize>(mut f: F, x: &[T; N], u: &U, dt: f64) -> Result<[T; N], IntegrationError>
where
    T: Real,
    F: FnMut(&[T; N], &U) -> Result<[T; N], PlantError>,
{
    let at = |stage: usize| move |cause| IntegrationError { stage, cause };
    let k1 = f(x, u).map_err(at(1))?;
    let x2: [T; N] = std::array::from_fn(|i| x[i] + k1[i] * (0.5 * dt));
    let k2 = f(&x2, u).map_err(at(2))?;
    let x3: [T; N] = std::array::from_fn(|i| x[i] + k2[i] * (0.5 * dt));
    let k3 = f(&x3, u).map_err(at(3))?;
    let x4: [T; N] = std::array::from_fn(|i| x[i] + k3[i] * dt);
    let k4 = f(&x4, u).map_err(at(4))?;
    Ok(std::array::from_fn(|i| x[i] + (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (dt / 6.0)))
}

/// One plant step. The RK4 stages see the rigid-column head; afterwards the
/// wave value is advanced from the uncorrected flow change and fed back into
/// the flow. With the correction disabled the wave value is zero.
pub fn rk4_step_with_wave<T: Real>(
    x: &[T; NX],
    u: &[T; NU],
    p: &PlantParameters,
    cfg: &StepConfig,
) -> Result<[T; NX], IntegrationError> {
    let mut next = rk4_step(|xs, us| rigid_derivatives(xs, us, p), x, u, cfg.dt)?;
    apply_wave_correction(x, &mut next, p, cfg);
    Ok(next)
}

/// Advance the wave value from `x` to the rigid-column result `next` and
/// feed it back into the flow.
pub fn apply_wave_correction<T: Real>(x: &[T; NX], next: &mut [T; NX], p: &PlantParameters, cfg: &StepConfig) {
    if cfg.wave_correction_enabled {
        let h_p = wave_update(x[HP], x[Q], next[Q], p.hydraulic.z_0);
        let gain = p.turbine.head_ratio() * cfg.dt / p.hydraulic.t_w1;
        next[Q] += h_p * gain;
        next[HP] = h_p;
    } else {
        next[HP] = T::zero();
    }
}
