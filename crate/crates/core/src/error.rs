use thiserror::Error;

/// Errors raised by the solvers, builders and simulator.
#[derive(Debug, Clone, Error)]
pub enum FluidError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("not a generator: {0}")]
    NotAGenerator(String),

    #[error("stationary vector is not unique (null space of dimension {0})")]
    Reducible(usize),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("Sylvester operator is singular: spectra of A and -B overlap")]
    SingularPencil,

    #[error("{method} did not converge after {iterations} iterations (last step {last_step:e})")]
    NoConvergence {
        method: &'static str,
        iterations: usize,
        last_step: f64,
    },

    #[error("Riccati blocks do not assemble into a (sub)generator: {0}")]
    InvalidBlocks(String),

    #[error("fluid queue is unstable: up-drift {up} >= down-drift {down}")]
    Unstable { up: f64, down: f64 },

    #[error("colored fluid queue is not positive recurrent")]
    NotRecurrent,

    #[error("invalid evaluation point: {0}")]
    InvalidPoint(String),

    #[error("invalid model ({} problem(s)): {}", .0.len(), join(.0))]
    InvalidModel(Vec<String>),

    #[error("reduction hypotheses violated: {}", join(.0))]
    HypothesisViolated(Vec<String>),

    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),

    #[error("phase-type expansion needs {phases} phases, above the bound of {bound}")]
    PhaseBlowup { phases: usize, bound: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

fn join(items: &[String]) -> String {
    items.join("; ")
}

pub type Result<T> = std::result::Result<T, FluidError>;
