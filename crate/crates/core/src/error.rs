use std::path::PathBuf;

/// Errors produced by depthkit operations.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    /// Grid shapes are incompatible with the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A numeric parameter is outside its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),
    /// A file or raster does not follow the expected layout.
    #[error("format error: {0}")]
    Format(String),
    /// Filesystem failure, always carrying the offending path.
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Alignment or another closed-form solve is singular.
    #[error("degenerate alignment: {0}")]
    DegenerateAlignment(String),
    /// A masked value is not strictly positive where a metric needs it.
    #[error("nonpositive value at pixel {index} breaks {metric}")]
    Positivity { metric: &'static str, index: usize },
    /// A normal vector deviates from unit length.
    #[error("normalization error: {0}")]
    Normalization(String),
    /// Selection was asked to choose among zero candidates.
    #[error("no candidates to select from")]
    EmptyCandidates,
    /// L1 residuals sit on the kink of |x|, where the gradient is undefined.
    #[error("{} residual(s) within kink tolerance, first at {:?}", pixels.len(), pixels.first())]
    Kink { pixels: Vec<(usize, usize)> },
    /// Another error, tagged with the file or item it concerns.
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Prefixes the message with `context` without changing the kind.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code for this failure: 3 for degenerate math, 2 for
    /// everything data- or format-related.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DegenerateAlignment(_) | Error::Kink { .. } => 3,
            Error::Context { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
