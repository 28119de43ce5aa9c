use thiserror::Error;

/// Errors produced by the lattice, interpolation and optimization layers.
#[derive(Debug, Error)]
pub enum XqcError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("degenerate configuration: interaction {interaction} has length {length:e} below floor {floor:e}")]
    DegenerateConfiguration {
        interaction: usize,
        length: f64,
        floor: f64,
    },

    #[error("Newton solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("Lagrange multiplier did not converge at point ({x}, {y}) after {iterations} iterations (residual {residual:e})")]
    LambdaNonConvergence {
        x: f64,
        y: f64,
        iterations: usize,
        residual: f64,
    },

    #[error("no repatom supports the point ({x}, {y})")]
    EmptySupport { x: f64, y: f64 },

    #[error("shape-function derivative unavailable: {0}")]
    DerivativeUnavailable(String),

    #[error("all enrichment columns are degenerate")]
    EnrichmentDegeneracy,

    #[error("interpolation assembly failed at atom {atom}: {reason}")]
    Assembly { atom: usize, reason: String },

    #[error("reduced system is ill-conditioned (estimate {estimate:e})")]
    Conditioning { estimate: f64 },

    #[error("linear solver failure: {0}")]
    LinearSolver(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("equilibrium state is stale: {0}")]
    StaleState(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl XqcError {
    /// True for failures of an iterative solve; callers such as the locality
    /// optimizer treat these as infeasible trial points.
    pub fn is_nonconvergence(&self) -> bool {
        matches!(
            self,
            XqcError::NonConvergence { .. }
                | XqcError::LambdaNonConvergence { .. }
                | XqcError::Conditioning { .. }
                | XqcError::LinearSolver(_)
        )
    }
}

pub type Result<T, E = XqcError> = std::result::Result<T, E>;
