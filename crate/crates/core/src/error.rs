use thiserror::Error;

/// Errors surfaced by configuration, protocol setup and experiment I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("peer cache for {0} is empty")]
    EmptyCache(crate::model::NodeId),

    #[error("membership contains no node other than {0}")]
    NoPeers(crate::model::NodeId),

    #[error("expected exactly one seed node, found {0}")]
    SeedCount(usize),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config file: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
