use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("trajectory diverged at step {index}")]
    Divergence { index: usize },

    #[error("equilibrium not found: {0}")]
    EquilibriumNotFound(String),

    #[error("declared equilibrium is not a fixed point: residual {residual:e} at t={t}")]
    NotAnEquilibrium { t: i64, residual: f64 },

    #[error("not exponentially stable: {0}")]
    NotExponentiallyStable(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("Stein equation is singular: eigenvalue pair with product {product:.6} too close to 1")]
    SingularStein { product: f64 },

    #[error("Stein series diverges: spectral radius {spectral_radius:.6} >= 1")]
    DivergentSeries { spectral_radius: f64 },

    #[error("instability certificate not found: {0}")]
    CertificateNotFound(String),

    #[error("transition matrix decay not detected: {0}")]
    DecayNotDetected(String),

    #[error("not uniformly exponentially stable: {0}")]
    NotUniformlyStable(String),

    #[error("sample grid is empty")]
    EmptyGrid,

    #[error("candidate is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("check not applicable: {0}")]
    Inapplicable(String),

    #[error("certificate construction failed: {0}")]
    Construction(String),

    #[error("fast dynamics do not reach the manifold within {horizon} steps (k={k}, residual {residual:e})")]
    NotFiniteTime { horizon: usize, k: i64, residual: f64 },

    #[error("no tabulated horizon meets the budget threshold {threshold:e}")]
    BudgetInfeasible { threshold: f64 },

    #[error("overflow evaluating (1+L)^T with L={l}, T={t}")]
    Overflow { l: f64, t: usize },

    #[error("composite certificate not attainable: {0}")]
    NotCertifiable(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("config error at {pointer}: {message}")]
    Config { pointer: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
