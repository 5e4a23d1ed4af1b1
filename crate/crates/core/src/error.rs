use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("assembly failed: {0}")]
    Assembly(String),

    #[error("stale state: {0}")]
    Stale(String),

    #[error("degenerate correction: {0}")]
    DegenerateCorrection(String),

    #[error("singular gradient: {0}")]
    SingularGradient(String),

    #[error("optimizer failed at iteration {iteration}: {message}")]
    Optimizer {
        iteration: usize,
        message: String,
        snapshot: Vec<f64>,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("stage {stage} (p = {penalty}, beta = {beta}): {source}")]
    Stage {
        stage: usize,
        penalty: f64,
        beta: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed scenario file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable tag used in CLI error documents.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parameter(_) => "parameter",
            Error::Dimension(_) => "dimension",
            Error::Assembly(_) => "assembly",
            Error::Stale(_) => "stale",
            Error::DegenerateCorrection(_) => "degenerate_correction",
            Error::SingularGradient(_) => "singular_gradient",
            Error::Optimizer { .. } => "optimizer",
            Error::Config(_) => "config",
            Error::Stage { source, .. } => source.kind(),
            Error::Format(_) => "format",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
