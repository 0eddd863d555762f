//! Scenario files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::grid::TwoAreaParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    /// Nonlinear MPC.
    #[default]
    Mpc,
    /// Constant converter reference and fixed gate.
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    #[default]
    Mhe,
    /// The controller sees the simulated state directly.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Toggles {
    #[serde(default)]
    pub pod: bool,
    #[serde(default = "yes")]
    pub wave: bool,
    #[serde(default)]
    pub efficiency: bool,
    #[serde(default)]
    pub noise: bool,
    #[serde(default)]
    pub controller: ControllerKind,
    #[serde(default)]
    pub estimator: EstimatorKind,
}

fn yes() -> bool {
    true
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            pod: false,
            wave: true,
            efficiency: false,
            noise: false,
            controller: ControllerKind::Mpc,
            estimator: EstimatorKind::Mhe,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    /// Step in the power balance seen by the plant [plant p.u.]. Single-area
    /// runs only.
    PbStep { time: f64, delta: f64 },
    /// Load change in MVA at an area (1 or 2); negative reduces load.
    LoadStep {
        time: f64,
        mva: f64,
        #[serde(default = "area_one")]
        area: usize,
    },
    /// Short power impulse [system p.u. for `duration` s] at an area.
    Impulse {
        time: f64,
        power: f64,
        duration: f64,
        #[serde(default = "area_one")]
        area: usize,
    },
}

fn area_one() -> usize {
    1
}

impl Event {
    pub fn time(&self) -> f64 {
        match *self {
            Event::PbStep { time, .. } | Event::LoadStep { time, .. } | Event::Impulse { time, .. } => time,
        }
    }

    pub fn area(&self) -> usize {
        match *self {
            Event::PbStep { .. } => 1,
            Event::LoadStep { area, .. } | Event::Impulse { area, .. } => area,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoAreaSetup {
    #[serde(flatten)]
    pub grid: TwoAreaParams,
    /// Plant rating as a fraction of the system base.
    pub plant_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Simulated time [s]; a whole number of control periods.
    pub duration: f64,
    /// Plant parameter file, relative to the scenario file. Shipped defaults
    /// when absent.
    #[serde(default)]
    pub parameters: Option<PathBuf>,
    /// Controller configuration file, relative to the scenario file.
    #[serde(default)]
    pub controller: Option<PathBuf>,
    /// Converter power at the initial equilibrium.
    #[serde(default = "default_p_g0")]
    pub p_g0: f64,
    #[serde(default = "default_base")]
    pub system_base_mva: f64,
    /// Integration substeps per control period.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub toggles: Toggles,
    #[serde(default)]
    pub events: Vec<Event>,
    #[serde(default)]
    pub two_area: Option<TwoAreaSetup>,
    /// Where relative paths resolve from; set when loading from a file.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn default_p_g0() -> f64 {
    0.8
}

fn default_base() -> f64 {
    1600.0
}

fn default_substeps() -> usize {
    1
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse { what: "scenario".into(), source })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let mut s = Self::from_toml_str(&text)?;
        s.base_dir = path.parent().map(Path::to_path_buf);
        Ok(s)
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        match &self.base_dir {
            Some(dir) if rel.is_relative() => dir.join(rel),
            _ => rel.to_path_buf(),
        }
    }

    /// Number of control periods for a period `dt`.
    pub fn steps(&self, dt: f64) -> Result<usize, ConfigError> {
        let n = self.duration / dt;
        let k = n.round();
        if !(self.duration > 0.0) || (n - k).abs() > 1e-6 {
            return Err(ConfigError::Invalid(format!(
                "scenario duration {} s is not a whole number of {dt} s control periods",
                self.duration
            )));
        }
        Ok(k as usize)
    }

    pub fn validate(&self, dt: f64) -> Result<(), ConfigError> {
        self.steps(dt)?;
        if self.substeps == 0 {
            return Err(ConfigError::Invalid("substeps must be at least 1".into()));
        }
        if !(self.system_base_mva > 0.0) {
            return Err(ConfigError::Invalid("system_base_mva must be positive".into()));
        }
        for w in self.events.windows(2) {
            if w[1].time() < w[0].time() {
                return Err(ConfigError::Invalid(format!(
                    "events out of order: t = {} after t = {}",
                    w[1].time(),
                    w[0].time()
                )));
            }
        }
        for e in &self.events {
            if !(1..=2).contains(&e.area()) || (e.area() == 2 && self.two_area.is_none()) {
                return Err(ConfigError::Invalid(format!("event at t = {} targets a missing area", e.time())));
            }
            if matches!(e, Event::PbStep { .. }) && self.two_area.is_some() {
                return Err(ConfigError::Invalid("pb_step events need a single-area scenario".into()));
            }
        }
        if let Some(ta) = &self.two_area {
            ta.grid.validate().map_err(ConfigError::Invalid)?;
            if !(ta.plant_share > 0.0 && ta.plant_share <= 1.0) {
                return Err(ConfigError::Invalid("two_area.plant_share must lie in (0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// Command-line overrides of a scenario.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub pod: Option<bool>,
    pub wave: Option<bool>,
    pub noise: Option<bool>,
}

impl Overrides {
    pub fn apply(&self, s: &mut Scenario) {
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = self.pod {
            s.toggles.pod = v;
        }
        if let Some(v) = self.wave {
            s.toggles.wave = v;
        }
        if let Some(v) = self.noise {
            s.toggles.noise = v;
        }
    }
}
