use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inputs outside the domain of an operation (dimension mismatch,
    /// non-finite coordinates, negative step, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A state for which the requested quantity is undefined, e.g. a zero
    /// temperature Maxwellian density or a vanishing local mass.
    #[error("degenerate state: {0}")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    /// The solver produced NaN or infinite values. `diagnostics` is a
    /// human-readable dump of the last good state.
    #[error("numerical failure: {message}\n{diagnostics}")]
    NumericalFailure { message: String, diagnostics: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Configuration(msg.into())
}
