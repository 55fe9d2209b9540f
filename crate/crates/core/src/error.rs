//! Error type shared by every stage of the pipeline.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PrlError>;

#[derive(Debug, Error)]
pub enum PrlError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("referential check failed: {0}")]
    Referential(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("checksum mismatch for {path}: expected {expected}, found {found}")]
    Checksum {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("singular information matrix: {0}")]
    Singular(String),

    #[error("complete or quasi-complete separation on features {features:?}")]
    Separation { features: Vec<String> },

    #[error("monotone partial likelihood on features {features:?}")]
    MonotoneLikelihood { features: Vec<String> },

    #[error("no events observed: {0}")]
    NoEvents(String),

    #[error("loss diverged at step {step}: {value}")]
    Divergence { step: usize, value: f64 },

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<PrlError>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl PrlError {
    /// Short machine-readable category, used in the CLI's JSONL error output.
    pub fn kind(&self) -> &'static str {
        match self {
            PrlError::Parse { .. } => "parse",
            PrlError::Validation(_) => "validation",
            PrlError::Referential(_) => "referential",
            PrlError::Dimension(_) => "dimension",
            PrlError::Precondition(_) => "precondition",
            PrlError::Infeasible(_) => "infeasible",
            PrlError::Checksum { .. } => "checksum",
            PrlError::Singular(_) => "singular",
            PrlError::Separation { .. } => "separation",
            PrlError::MonotoneLikelihood { .. } => "monotone_likelihood",
            PrlError::NoEvents(_) => "no_events",
            PrlError::Divergence { .. } => "divergence",
            PrlError::MissingArtifact(_) => "missing_artifact",
            PrlError::Context { source, .. } => source.kind(),
            PrlError::Io { .. } => "io",
            PrlError::Image(_) => "image",
            PrlError::Serde(_) => "serialization",
            PrlError::Config(_) => "config",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PrlError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn with_context(self, context: impl Into<String>) -> Self {
        PrlError::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| e.with_context(context()))
    }
}
