use thiserror::Error;
use turbdiff_core::analysis::AnalysisError;
use turbdiff_core::corrector::CorrectorError;
use turbdiff_core::field::FieldError;
use turbdiff_core::kubo::KuboError;
use turbdiff_core::quadrature::QuadratureError;
use turbdiff_core::spectrum::SpectrumError;
use turbdiff_core::tracer::TracerError;
use turbdiff_core::validation::ValidationError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENT: i32 = 3;
pub const EXIT_STATISTICAL: i32 = 4;
pub const EXIT_QUADRATURE: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Divergent(String),
    #[error("statistical check failed: {0}")]
    Statistical(String),
    #[error("{0}")]
    Quadrature(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Divergent(_) => EXIT_DIVERGENT,
            CliError::Statistical(_) => EXIT_STATISTICAL,
            CliError::Quadrature(_) => EXIT_QUADRATURE,
            CliError::Io(_) | CliError::Other(_) => EXIT_OTHER,
        }
    }
}

impl From<QuadratureError> for CliError {
    fn from(e: QuadratureError) -> Self {
        CliError::Quadrature(format!("quadrature failure: {e}"))
    }
}

impl From<SpectrumError> for CliError {
    fn from(e: SpectrumError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<KuboError> for CliError {
    fn from(e: KuboError) -> Self {
        match e {
            KuboError::DivergentIntegral { .. } => CliError::Divergent(e.to_string()),
            KuboError::QuadratureFailure(q) => q.into(),
            KuboError::DimensionTooSmall { .. } | KuboError::InvalidParams(_) => CliError::Config(e.to_string()),
            KuboError::Unsupported(_) => CliError::Other(e.to_string()),
        }
    }
}

impl From<FieldError> for CliError {
    fn from(e: FieldError) -> Self {
        match e {
            FieldError::Quadrature(q) => q.into(),
            FieldError::InvalidConfig(_) | FieldError::InvalidParams(_) | FieldError::EmptySpectrum => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<TracerError> for CliError {
    fn from(e: TracerError) -> Self {
        match e {
            TracerError::InvalidConfig(_) => CliError::Config(e.to_string()),
            TracerError::Field(f) => f.into(),
            TracerError::Kubo(k) => k.into(),
            TracerError::Trajectory { index, source } => match CliError::from(*source) {
                CliError::Other(m) => CliError::Other(format!("trajectory {index}: {m}")),
                other => other,
            },
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        CliError::Statistical(e.to_string())
    }
}

impl From<CorrectorError> for CliError {
    fn from(e: CorrectorError) -> Self {
        match e {
            CorrectorError::QuadratureFailure(q) => q.into(),
            CorrectorError::InvalidParams(_) | CorrectorError::InvalidArgument(_) | CorrectorError::GridTooNarrow { .. } => {
                CliError::Config(e.to_string())
            }
        }
    }
}

impl From<ValidationError> for CliError {
    fn from(e: ValidationError) -> Self {
        match e {
            ValidationError::Field(f) => f.into(),
            ValidationError::Kubo(k) => k.into(),
            ValidationError::InvalidConfig(_) => CliError::Config(e.to_string()),
        }
    }
}
