//! Variable-speed hydropower plant model with a nonlinear model-predictive
//! controller and a moving-horizon estimator.
//!
//! Module map:
//! - [`plant`]: continuous-time plant equations (waterway, turbine, rotor, VSG, grid)
//! - [`integrator`]: fixed-step RK4, with the penstock travelling-wave correction
//! - [`grid`]: power-balance estimator, average frequency, two-area test grid
//! - [`nlp`]: SQP solver with a dense interior-point QP subproblem
//! - [`nmpc`]: multiple-shooting MPC
//! - [`mhe`]: moving-horizon estimator
//! - [`harness`]: closed-loop scenario runner, traces and metrics

pub mod ad;
pub mod config;
pub mod error;
pub mod grid;
pub mod harness;
pub mod integrator;
pub mod mhe;
pub mod nlp;
pub mod nmpc;
pub mod params;
pub mod plant;

pub use config::ControllerConfig;
pub use error::{ConfigError, GridError, IntegrationError, PlantError};
pub use params::PlantParameters;
pub use plant::{PlantInputs, PlantState};
