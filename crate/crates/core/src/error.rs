use thiserror::Error;

/// Errors raised across the laboratory.
///
/// The variants map onto the CLI exit codes: configuration problems exit
/// with 2, insufficient data with 3, everything else with 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Machine-readable kind used in error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Model(_) => "model",
            Error::Input(_) => "input",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Fit(_) => "fit",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Model(_) | Error::Json(_) => 2,
            Error::InsufficientData(_) | Error::Fit(_) => 3,
            Error::Input(_) | Error::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<S: Into<String>>(msg: S) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn insufficient<S: Into<String>>(msg: S) -> Error {
    Error::InsufficientData(msg.into())
}
