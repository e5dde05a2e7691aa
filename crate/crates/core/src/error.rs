use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-binary treatment: column `{column}` has value {value} at row {row}")]
    NonBinaryTreatment { column: String, row: usize, value: f64 },

    #[error("missing or non-numeric value in column `{column}` at row {row}")]
    MissingValue { column: String, row: usize },

    #[error("duplicate variable name `{0}`")]
    DuplicateName(String),

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("treatment arm {arm} absent from the {split} split")]
    MissingTreatmentArm { arm: u8, split: &'static str },

    #[error("invalid edge prior: {0}")]
    InvalidPrior(String),

    #[error("self-loop `{0}` is not an admissible pair")]
    SelfLoop(String),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("name collision: a variable named `{0}` already exists")]
    NameCollision(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("adjustment search intractable: {pool} candidate covariates exceed the cap of {cap}")]
    Intractable { pool: usize, cap: usize },

    #[error("empty ensemble after identification")]
    EmptyEnsemble,

    #[error("data separation violated: {stage} received {got} rows, expected {expected}")]
    DataLeak {
        stage: &'static str,
        expected: &'static str,
        got: &'static str,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("http elicitation failed: {0}")]
    Http(String),
}
