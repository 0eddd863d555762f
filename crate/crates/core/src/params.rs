//! Per-unit physical constants of the plant and its grid connection.
//!
//! The shipped defaults live in `data/plant_default.toml`; the file is the
//! single source for every parameter value used by the simulator, the
//! controller prediction model and the tests.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Text of the shipped default parameter file.
pub const DEFAULT_PARAMETER_FILE: &str = include_str!("../data/plant_default.toml");

/// Waterway: head-race tunnel, surge tank and penstock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HydraulicParams {
    pub c_s: f64,
    pub t_w2: f64,
    pub t_w1: f64,
    pub f_0: f64,
    pub f_p1: f64,
    pub f_p2: f64,
    pub z_0: f64,
    pub t_e: f64,
}

/// Which angle enters the cos/tan/sin terms of the efficiency formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EfficiencyAngle {
    /// The inlet angle alpha_1 derived from the guide-vane opening.
    #[default]
    Inlet,
    /// The rated inlet angle alpha_1R.
    Rated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurbineParams {
    pub h_r: f64,
    pub h_rt: f64,
    pub q_r: f64,
    pub q_rt: f64,
    pub xi: f64,
    pub psi: f64,
    pub sigma: f64,
    pub alpha_1r: f64,
    /// Largest guide-vane opening the arcsine must stay defined for.
    #[serde(default = "default_g_max")]
    pub g_max: f64,
    #[serde(default)]
    pub efficiency_angle: EfficiencyAngle,
}

fn default_g_max() -> f64 {
    1.2
}

impl TurbineParams {
    /// Q_R / Q_Rt.
    pub fn flow_ratio(&self) -> f64 {
        self.q_r / self.q_rt
    }

    /// H_R / H_Rt.
    pub fn head_ratio(&self) -> f64 {
        self.h_r / self.h_rt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MachineParams {
    pub t_g: f64,
    pub h: f64,
    pub d: f64,
}

/// Virtual synchronous generator gains.
///
/// The output law is `P_g = droop_sign*k_vsg_p*df + inertia_sign*k_vsg_d*df_dot + P_g*`.
/// Signs of +1 reproduce the law exactly as written with `df = f - f*`; the
/// shipped defaults use -1 so the converter supports the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VsgParams {
    pub k_vsg_p: f64,
    pub k_vsg_d: f64,
    pub f_star: f64,
    #[serde(default = "plus_one")]
    pub droop_sign: f64,
    #[serde(default = "plus_one")]
    pub inertia_sign: f64,
}

fn plus_one() -> f64 {
    1.0
}

impl VsgParams {
    pub fn signed_kp(&self) -> f64 {
        self.droop_sign * self.k_vsg_p
    }

    pub fn signed_kd(&self) -> f64 {
        self.inertia_sign * self.k_vsg_d
    }
}

/// Aggregated swing-equation grid and the power-balance estimator filters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub h_g: f64,
    pub s_n: f64,
    pub omega_s: f64,
    pub d_m: f64,
    pub omega_f: f64,
    pub omega_fdot: f64,
}

impl GridParams {
    /// Gain `omega_s / (2 H_g S_n)` of the swing equation.
    pub fn swing_gain(&self) -> f64 {
        self.omega_s / (2.0 * self.h_g * self.s_n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantParameters {
    pub hydraulic: HydraulicParams,
    pub turbine: TurbineParams,
    pub machine: MachineParams,
    pub vsg: VsgParams,
    pub grid: GridParams,
}

impl PlantParameters {
    /// Parse and validate a parameter file's contents.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let params: PlantParameters = toml::from_str(text).map_err(|source| ConfigError::Parse {
            what: "plant parameters".into(),
            source,
        })?;
        params.validate()?;
        Ok(params)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// The shipped default parameter set.
    pub fn shipped_default() -> Self {
        Self::from_toml_str(DEFAULT_PARAMETER_FILE).expect("shipped parameter file is valid")
    }

    /// Controller/estimator step length, the wave round-trip time 2*T_e.
    pub fn wave_step(&self) -> f64 {
        2.0 * self.hydraulic.t_e
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let hy = &self.hydraulic;
        let positive = [
            ("hydraulic.c_s", hy.c_s),
            ("hydraulic.t_w2", hy.t_w2),
            ("hydraulic.t_w1", hy.t_w1),
            ("hydraulic.f_0", hy.f_0),
            ("hydraulic.f_p1", hy.f_p1),
            ("hydraulic.f_p2", hy.f_p2),
            ("hydraulic.z_0", hy.z_0),
            ("hydraulic.t_e", hy.t_e),
            ("turbine.h_r", self.turbine.h_r),
            ("turbine.h_rt", self.turbine.h_rt),
            ("turbine.q_r", self.turbine.q_r),
            ("turbine.q_rt", self.turbine.q_rt),
            ("turbine.g_max", self.turbine.g_max),
            ("machine.t_g", self.machine.t_g),
            ("machine.h", self.machine.h),
            ("grid.h_g", self.grid.h_g),
            ("grid.s_n", self.grid.s_n),
            ("grid.omega_s", self.grid.omega_s),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ConfigError::Invalid(format!("{name} must be positive, got {value}")));
            }
        }
        let non_negative = [
            ("machine.d", self.machine.d),
            ("vsg.k_vsg_p", self.vsg.k_vsg_p),
            ("vsg.k_vsg_d", self.vsg.k_vsg_d),
            ("grid.d_m", self.grid.d_m),
            ("grid.omega_f", self.grid.omega_f),
            ("grid.omega_fdot", self.grid.omega_fdot),
        ];
        for (name, value) in non_negative {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(ConfigError::Invalid(format!("{name} must be non-negative, got {value}")));
            }
        }
        if hy.t_e >= hy.t_w1 {
            return Err(ConfigError::Invalid(format!(
                "wave travel time t_e = {} must be well below t_w1 = {}",
                hy.t_e, hy.t_w1
            )));
        }
        let a = self.turbine.alpha_1r;
        if !(a > 0.0 && a < std::f64::consts::FRAC_PI_2) {
            return Err(ConfigError::Invalid(format!("turbine.alpha_1r = {a} outside (0, pi/2)")));
        }
        let reach = self.turbine.flow_ratio() * self.turbine.g_max * a.sin();
        if reach > 1.0 {
            return Err(ConfigError::Invalid(format!(
                "(Q_R/Q_Rt) g_max sin(alpha_1R) = {reach} exceeds 1; inlet angle undefined at full opening"
            )));
        }
        for (name, s) in [("vsg.droop_sign", self.vsg.droop_sign), ("vsg.inertia_sign", self.vsg.inertia_sign)] {
            if s != 1.0 && s != -1.0 {
                return Err(ConfigError::Invalid(format!("{name} must be +1 or -1, got {s}")));
            }
        }
        let loop_gain = 1.0 - self.vsg.signed_kd() * self.grid.swing_gain();
        if loop_gain.abs() < 1e-9 {
            return Err(ConfigError::Invalid(
                "VSG derivative gain makes the VSG/swing algebraic loop singular".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_file_parses_and_validates() {
        let p = PlantParameters::shipped_default();
        assert!((p.wave_step() - 0.252).abs() < 1e-15);
        assert_eq!(p.turbine.efficiency_angle, EfficiencyAngle::Inlet);
    }

    #[test]
    fn rejects_arcsine_overreach() {
        let mut p = PlantParameters::shipped_default();
        p.turbine.q_r = 3.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn rejects_non_positive_constants() {
        let mut p = PlantParameters::shipped_default();
        p.machine.h = 0.0;
        assert!(matches!(p.validate(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn rejects_bad_sign() {
        let mut p = PlantParameters::shipped_default();
        p.vsg.droop_sign = 0.5;
        assert!(p.validate().is_err());
    }
}
