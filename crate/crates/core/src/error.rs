use thiserror::Error;

/// Errors raised by the factorization library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("invalid view graph: {0}")]
    Graph(String),

    #[error("matrix {matrix} has no observed elements")]
    NoObserved { matrix: usize },

    #[error("matrix {matrix}: {axis} {index} has no observed elements, centering is undefined")]
    EmptyLine {
        matrix: usize,
        axis: &'static str,
        index: usize,
    },

    #[error("k-frame could not be inverted: {0}")]
    Inversion(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: &'static str, iteration: usize },

    #[error("every cross-validation candidate failed")]
    AllCandidatesFailed,

    #[error("bicluster depth {requested} exceeds the {available} nonzero components")]
    Depth { requested: usize, available: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
