use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// The bytes on disk do not follow the expected layout.
    #[error("format error: {0}")]
    Format(String),

    /// A precondition of an operation was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dataset ingestion failed: {0}")]
    Ingestion(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    /// Weight-file validation failure, naming the offending field.
    #[error("weight load error in field `{field}`: {detail}")]
    WeightLoad { field: &'static str, detail: String },

    #[error(
        "loop instability in channel at {center_hz:.1} Hz: phase difference {phase_cycles:.3} cycles \
         exceeded bound (k_in={k_in:.4}, k1={k1:.4}, k2={k2:.4}, f_fll={f_fll_hz:.1} Hz)"
    )]
    Instability {
        center_hz: f64,
        phase_cycles: f64,
        k_in: f64,
        k1: f64,
        k2: f64,
        f_fll_hz: f64,
    },

    #[error("empty input: {0}")]
    Empty(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
