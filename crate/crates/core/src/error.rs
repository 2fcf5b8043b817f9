use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown model variant `{0}`")]
    UnknownVariant(String),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("unknown quantity `{0}`")]
    UnknownQuantity(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("integration blew up at t = {time}: state = {state:?}")]
    IntegrationBlowup { time: f64, state: Vec<f64> },

    #[error("insufficient data: need {needed}, have {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error("non-uniform sampling at index {index}")]
    NonUniformSpacing { index: usize },

    #[error("degenerate covariance involving columns {columns:?}")]
    Conditioning { columns: Vec<String> },

    #[error("rank-deficient design in equation `{equation}`; collinear candidates: {candidates:?}")]
    RankDeficient {
        equation: String,
        candidates: Vec<String>,
    },

    #[error("zero variance in {0}")]
    ZeroVariance(String),

    #[error("ensemble collapsed at observation {step} (spread {spread:e}); increase inflation")]
    EnsembleCollapse { step: usize, spread: f64 },

    #[error("latent learning diverged; parameter-change trace = {trace:?}")]
    LatentDivergence { trace: Vec<f64> },

    #[error("unit mismatch: {0}")]
    UnitMismatch(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable snake_case name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnknownVariant(_) => "unknown_variant",
            Error::UnknownVariable(_) => "unknown_variable",
            Error::UnknownQuantity(_) => "unknown_quantity",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidModel(_) => "invalid_model",
            Error::InvalidConfig(_) => "invalid_config",
            Error::IntegrationBlowup { .. } => "integration_blowup",
            Error::InsufficientData { .. } => "insufficient_data",
            Error::NonUniformSpacing { .. } => "non_uniform_spacing",
            Error::Conditioning { .. } => "conditioning",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::ZeroVariance(_) => "zero_variance",
            Error::EnsembleCollapse { .. } => "ensemble_collapse",
            Error::LatentDivergence { .. } => "latent_divergence",
            Error::UnitMismatch(_) => "unit_mismatch",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
