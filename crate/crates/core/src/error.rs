use thiserror::Error;

/// Errors raised anywhere in the identification toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("unstable configuration on axis {axis}: {reason}")]
    Unstable { axis: String, reason: String },

    #[error("unsupported equation `{0}`")]
    UnsupportedEquation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("field has no `{0}` axis")]
    MissingAxis(String),

    #[error("degenerate system: {0}")]
    DegenerateSystem(String),

    #[error("term selection failed: {0}")]
    Selection(String),

    #[error("structure mismatch: {0}")]
    StructureMismatch(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Strips pipeline-stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at_stage(stage))
    }
}
