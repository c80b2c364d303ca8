use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("linear solve failed (residual {residual:e})")]
    Solve { residual: f64 },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("data does not cover state {state}, action {action} (target occupancy {target_mass:e})")]
    Coverage {
        state: usize,
        action: usize,
        target_mass: f64,
    },

    #[error("degenerate value class: every member has zero Bellman error under the data distribution")]
    DegenerateClass,

    #[error("weight class is missing the all-ones member")]
    MissingAllOnes,

    #[error("invalid class: {0}")]
    InvalidClass(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("instance parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io: {0}")]
    Io(String),

    #[error("cell {cell}: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },
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

impl Error {
    /// Validation errors are caller mistakes (bad input, bad file); everything
    /// else is a runtime failure. The CLI maps these to exit codes 1 and 2.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Solve { .. } => false,
            Error::Cell { source, .. } => source.is_validation(),
            _ => true,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
