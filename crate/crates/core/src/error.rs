use thiserror::Error;

/// Invalid configuration or scenario input. `key` names the offending field.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("invalid configuration `{key}`: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn invalid(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimError {
    #[error("equilibrium solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("contact deflection {deflection:.4} mm reaches the characteristic thickness {t_char} mm")]
    Domain { deflection: f64, t_char: f64 },
    #[error("control input out of actuator limits: {0}")]
    InputOutOfRange(String),
    #[error("measurement ({x:.3}, {y:.3}) outside the feedback workspace")]
    OutsideWorkspace { x: f64, y: f64 },
}

#[derive(Debug, Error)]
pub enum CeError<E> {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("objective failed: {0}")]
    Objective(E),
    #[error("objective returned a non-finite cost {0}")]
    NonFiniteCost(f64),
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no finite-cost rollout found after {iterations} iterations (best cost {best_cost:.3e})")]
    NoFeasibleRollout { iterations: usize, best_cost: f64 },
    #[error("replay of the planned controls failed")]
    Replay(#[from] SimError),
}

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("all tracking rollouts were infeasible at step {step}")]
    AllInfeasible { step: usize },
    #[error("tracking window starting at {start} is outside the nominal horizon {horizon}")]
    BadWindow { start: usize, horizon: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario file {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("scenario is missing required section [{0}]")]
    MissingSection(String),
    #[error(transparent)]
    Invalid(#[from] ConfigError),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EmError {
    #[error("position has {got} coordinates, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("grid point {point} has {got} samples, expected {expected}")]
    Ragged { point: usize, expected: usize, got: usize },
    #[error("piecewise fit needs at least two points on each side of the breakpoint ({below} below, {above} above)")]
    TooFewPoints { below: usize, above: usize },
    #[error("percentile {0} outside (0, 100)")]
    Percentile(f64),
    #[error(transparent)]
    Config(#[from] ConfigError),
}
