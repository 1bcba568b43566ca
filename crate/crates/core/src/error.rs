use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown column `{column}` in table `{table}`")]
    UnknownColumn { table: String, column: String },

    #[error("unknown table `{0}`")]
    UnknownTable(String),

    #[error("missing statistics for column `{0}`")]
    MissingStatistics(String),

    #[error("sample size {requested} exceeds table rows {rows}")]
    SampleTooLarge { requested: usize, rows: usize },

    #[error("unsupported query shape: {0}")]
    UnsupportedQuery(String),

    #[error("singular fit: {0}")]
    SingularFit(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
