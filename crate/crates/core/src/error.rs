use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("under-identified system: {instruments} usable instrument columns for {regressors} regressors")]
    UnderIdentified {
        instruments: usize,
        regressors: usize,
    },

    #[error("numerically singular {what}: {detail}")]
    Singular { what: &'static str, detail: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Annotate an error with the pipeline stage it came from.
    pub fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for failures of a numerical nature (as opposed to bad input files
    /// or configuration). The CLI maps these to a distinct exit code.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::UnderIdentified { .. } | Error::Singular { .. } | Error::Dimension(_) => true,
            Error::Stage { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Attach a stage label to the error branch of a result.
pub(crate) fn stage<T>(stage_name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.at_stage(stage_name))
}
