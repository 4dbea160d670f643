use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid configuration `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error(transparent)]
    Core(#[from] dmasim_core::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("output: {0}")]
    Output(#[from] std::io::Error),
}

impl SimError {
    pub fn kind(&self) -> &'static str {
        match self {
            SimError::Io { .. } => "io",
            SimError::Parse(_) => "parse",
            SimError::Config { .. } => "config",
            SimError::Core(dmasim_core::Error::InvalidParameter { .. }) => "config",
            SimError::Core(_) => "numerical",
            SimError::Csv(_) | SimError::Output(_) => "output",
        }
    }

    /// Offending configuration key, when there is one.
    pub fn key(&self) -> Option<String> {
        match self {
            SimError::Config { key, .. } => Some(key.clone()),
            SimError::Core(dmasim_core::Error::InvalidParameter { key, .. }) => {
                Some((*key).to_string())
            }
            _ => None,
        }
    }

    /// Single-line JSON diagnostic.
    pub fn machine_line(&self) -> String {
        json!({
            "error": self.kind(),
            "key": self.key(),
            "message": self.to_string(),
        })
        .to_string()
    }
}
