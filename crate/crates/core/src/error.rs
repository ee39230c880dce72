use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: {message}")]
    BadCell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("treatment level {level} has no units")]
    EmptyLevel { level: usize },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("mask removes every unit of treatment level {level}")]
    LevelEliminated { level: usize },

    #[error(
        "multinomial logit did not converge after {iterations} iterations \
         (gradient max-norm {gradient_norm:.3e})"
    )]
    NonConvergence {
        iterations: usize,
        gradient_norm: f64,
        coefficients: Vec<f64>,
    },

    #[error(
        "complete separation detected (coefficient norm {norm:.3e}); \
         refit with a positive ridge penalty"
    )]
    Separation { norm: f64 },

    #[error("singular matrix: {0}; prune collinear covariates")]
    SingularMatrix(String),

    #[error("no donors with treatment level {level}")]
    EmptyDonorPool { level: usize },

    #[error(
        "generalized propensity score {score:e} for unit {unit} at level {level} \
         is zero or numerically zero; enable score clipping or trim the sample"
    )]
    ZeroScore { unit: usize, level: usize, score: f64 },

    #[error(
        "subclass {subclass} of p({level}|x) contains no units with treatment {level}; \
         trim the sample or use fewer subclasses"
    )]
    EmptySubclass { subclass: usize, level: usize },

    #[error("treatment level {level} has fewer than two units: {what}")]
    TooFewUnits { level: usize, what: &'static str },

    #[error("{discarded} of {total} bootstrap replicates were discarded (limit 5%)")]
    ExcessiveDiscard { discarded: usize, total: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("refit on the trimmed sample failed: {0} (or keep the original scores by disabling the refit)")]
    TrimRefit(Box<Error>),

    #[error("design generation exceeded {0} draws without filling every arm quota")]
    GenerationCap(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::TrimRefit(inner) => inner.kind(),
            Error::Config(_) => ErrorKind::Config,
            Error::MissingColumn(_)
            | Error::BadCell { .. }
            | Error::EmptyLevel { .. }
            | Error::InvalidData(_)
            | Error::Dimension(_)
            | Error::LevelEliminated { .. }
            | Error::TooFewUnits { .. }
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => ErrorKind::Data,
            Error::NonConvergence { .. }
            | Error::Separation { .. }
            | Error::SingularMatrix(_)
            | Error::EmptyDonorPool { .. }
            | Error::ZeroScore { .. }
            | Error::EmptySubclass { .. }
            | Error::ExcessiveDiscard { .. }
            | Error::GenerationCap(_) => ErrorKind::Numerical,
        }
    }

    /// Name of the module the failure originates from.
    pub fn module(&self) -> &'static str {
        match self {
            Error::TrimRefit(_) => "trimming",
            Error::Config(_) => "config",
            Error::MissingColumn(_)
            | Error::BadCell { .. }
            | Error::EmptyLevel { .. }
            | Error::InvalidData(_)
            | Error::LevelEliminated { .. }
            | Error::Csv(_) => "dataset",
            Error::NonConvergence { .. } | Error::Separation { .. } => "gps_model",
            Error::SingularMatrix(_) | Error::EmptyDonorPool { .. } => "matching_engine",
            Error::ZeroScore { .. } | Error::EmptySubclass { .. } => "estimators",
            Error::TooFewUnits { .. } | Error::ExcessiveDiscard { .. } => "inference",
            Error::GenerationCap(_) => "simulation",
            Error::Dimension(_) | Error::Io(_) | Error::Json(_) => "io",
        }
    }
}
