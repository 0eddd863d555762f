use thiserror::Error;

/// Errors raised while evaluating the plant equations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("inlet angle undefined: arcsine argument {argument} outside [-1, 1] (g = {g})")]
    InletAngleDomain { g: f64, argument: f64 },
    #[error("turbine equations need g > 0, got g = {0}")]
    NonPositiveGate(f64),
    #[error("turbine equations need h > 0, got h = {0}")]
    NonPositiveHead(f64),
    #[error("rotor speed must be positive, got omega = {0}")]
    NonPositiveSpeed(f64),
    #[error("efficiency radicand sigma*(omega^2 - 1) = {0} is negative")]
    EfficiencyDomain(f64),
    #[error("VSG/swing algebraic loop is singular (1 - k_d*c = {0})")]
    SingularVsgLoop(f64),
}

/// A domain error raised inside one of the four Runge-Kutta stages.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("RK4 stage {stage}: {cause}")]
pub struct IntegrationError {
    pub stage: usize,
    pub cause: PlantError,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {what}: {source}")]
    Parse {
        what: String,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("average frequency needs at least one generator")]
    Empty,
    #[error("inertia list has {inertias} entries but frequency list has {frequencies}")]
    LengthMismatch { inertias: usize, frequencies: usize },
    #[error("inertia constants must be positive, got {0}")]
    NonPositiveInertia(f64),
}
