use thiserror::Error;

/// Errors raised by mesh construction, assembly, solvers and configuration.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("unsupported quadrature order {0} (expected 1..=5)")]
    QuadratureOrder(usize),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("coefficient `{name}` = {value:e} leaves its declared range [{lower:e}, {upper:e}]")]
    CoefficientBound {
        name: &'static str,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("linear solver failed: {reason}; residual history {history:?}")]
    LinearSolver { reason: String, history: Vec<f64> },

    #[error("Newton iteration stalled after {iterations} steps, last scaled residual {residual:e}")]
    NewtonDivergence { iterations: usize, residual: f64 },

    #[error("epsilon vector outside its admissible box: {0}")]
    EpsilonBox(String),

    #[error("regularity constant M_r = {m_r} must stay below {bound}")]
    InfeasibleRegularity { m_r: f64, bound: f64 },

    #[error("internal root computation failed: {0}")]
    Root(String),

    #[error("transport gate violated: {0}")]
    Gate(String),

    #[error("eigenvalue iteration stagnated: {0}")]
    EigenStagnation(String),

    #[error("configuration rejected:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("outer iteration {iteration}: {source}")]
    Outer {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
