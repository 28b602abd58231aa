//! Error type shared by every module in the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("layout error: {0}")]
    Layout(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("infeasible task: {0}")]
    Infeasible(String),

    #[error("weight container error: {0}")]
    Container(String),

    #[error("evaluation of `{config}` failed: {source}")]
    Eval {
        config: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Attach the configuration name a failure occurred under.
    pub fn for_config(self, config: &str) -> Self {
        Error::Eval {
            config: config.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
