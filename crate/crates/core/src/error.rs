use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("feature `{name}` appears twice with different values at row {row}")]
    ConflictingFeature { name: String, row: usize },

    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("affine normalization is degenerate: |sum(p)| = {sum:e} <= 1e-8")]
    NormalizationDegenerate { sum: f64 },

    #[error("weight vector violates its constraint: {0}")]
    InvalidWeights(String),

    #[error("invalid conditional statistics: {0}")]
    InvalidStatistics(String),

    #[error("conditional correlation matrix is not positive definite")]
    SingularStatistics,

    #[error("simplex solver did not converge within {0} iterations")]
    NoConvergence(usize),

    #[error("loss ordering violated: unc={unc}, aff={aff}, con={con}")]
    OrderingViolated { unc: f64, aff: f64, con: f64 },

    #[error("not enough data: {0}")]
    EmptyData(String),

    #[error("non-finite training loss at round {round}")]
    NonFiniteLoss { round: usize },

    #[error("non-finite gradient at epoch {epoch}, sample {sample}")]
    NonFiniteGradient { epoch: usize, sample: usize },

    #[error("too many degenerate affine samples in epoch {epoch}: {skipped} of {total}")]
    DegenerateEpoch {
        epoch: usize,
        skipped: usize,
        total: usize,
    },

    #[error("series too short: need more than {needed} samples, got {got}")]
    SeriesTooShort { needed: usize, got: usize },

    #[error("design matrix is singular")]
    SingularDesign,

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// Stable short name of the variant, used in CLI diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::ConflictingFeature { .. } => "ConflictingFeature",
            Error::DuplicateColumn(_) => "DuplicateColumn",
            Error::NonFinite(_) => "NonFinite",
            Error::IndexOutOfRange(_) => "IndexOutOfRange",
            Error::NormalizationDegenerate { .. } => "NormalizationDegenerate",
            Error::InvalidWeights(_) => "InvalidWeights",
            Error::InvalidStatistics(_) => "InvalidStatistics",
            Error::SingularStatistics => "SingularStatistics",
            Error::NoConvergence(_) => "NoConvergence",
            Error::OrderingViolated { .. } => "OrderingViolated",
            Error::EmptyData(_) => "EmptyData",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::NonFiniteGradient { .. } => "NonFiniteGradient",
            Error::DegenerateEpoch { .. } => "NormalizationDegenerate",
            Error::SeriesTooShort { .. } => "SeriesTooShort",
            Error::SingularDesign => "SingularDesign",
            Error::UnknownColumn(_) => "UnknownColumn",
            Error::ConfigInvalid(_) => "ConfigInvalid",
            Error::ConfigParse(_) => "ConfigParse",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::Csv(_) => "Csv",
            Error::Io(_) => "Io",
            Error::Serde(_) => "Serde",
        }
    }

    /// Configuration problems map to CLI exit code 2, everything else to 1.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::ConfigInvalid(_) | Error::ConfigParse(_))
    }
}
