use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("unknown relation `{0}`")]
    UnknownRelation(String),

    #[error("unknown node type `{0}`")]
    UnknownNodeType(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("graph already contains inverse edges")]
    InversesPresent,

    #[error("split ratios sum to {0}, expected 1")]
    InvalidRatios(f64),

    #[error("relation `{0}` has no triples in the graph")]
    RelationAbsent(String),

    #[error("invalid rule: {0}")]
    InvalidRule(String),

    #[error("metapath {metapath} is incompatible with pair types ({source_type}, {target_type})")]
    IncompatibleMetapath {
        metapath: String,
        source_type: String,
        target_type: String,
    },

    #[error("infeasible synthetic configuration: {0}")]
    Infeasible(String),

    #[error("agent already took all {0} steps")]
    StepOverflow(usize),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
