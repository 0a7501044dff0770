use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty dataset")]
    EmptyDataset,

    #[error("{name} = {value} is outside [0, 1]")]
    CoefficientOutOfRange { name: &'static str, value: f64 },

    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("label at row {row}, task {task} is {value}; {kind} labels required")]
    InvalidLabel {
        row: usize,
        task: usize,
        value: f64,
        kind: &'static str,
    },

    #[error("RHLS smoothing needs task frequencies from the training split")]
    MissingFrequencies,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("non-finite gradient in parameter group `{0}`")]
    NonFiniteGradient(&'static str),

    #[error("forward cache is stale or does not match these parameters")]
    StaleCache,

    #[error("infeasible target frequency {frequency} for task {task}")]
    InfeasibleFrequency { task: usize, frequency: f64 },

    #[error("intensity {value} at row {row}, column {column} is outside 0..=5")]
    IntensityOutOfRange { row: usize, column: usize, value: i64 },

    #[error("{0} distinct subjects cannot fill {1} folds")]
    TooFewSubjects(usize, usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
