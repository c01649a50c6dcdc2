use thiserror::Error;

/// Errors produced by the tensor, layer, model and training code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value produced by layer `{layer}`")]
    NonFinite { layer: String },

    #[error("build error: {0}")]
    Build(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("truncated input: {0}")]
    Truncated(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Prefix the layer path of a `NonFinite` error; other variants pass through.
    pub(crate) fn within(self, scope: &str) -> Self {
        match self {
            Error::NonFinite { layer } => Error::NonFinite {
                layer: format!("{scope}.{layer}"),
            },
            Error::Shape(msg) => Error::Shape(format!("{scope}: {msg}")),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
