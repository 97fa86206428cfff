use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("hierarchy contains a cycle through node `{0}`")]
    CyclicHierarchy(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("duplicate node `{0}`")]
    DuplicateNode(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("ensemble of size {0} is too small, at least 2 members are required")]
    InsufficientEnsemble(usize),
    #[error("{0} is not defined for this input")]
    NotDefined(&'static str),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: lower the learning rate or check the inputs")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(expected: &[usize], got: &[usize]) -> Self {
        Error::Shape {
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}

/// Failure while reading a text input, tagged with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ParseError {
    pub line: usize,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseErrorKind {
    #[error("malformed header: {0}")]
    Header(String),
    #[error("unsupported attribute type `{0}`")]
    UnsupportedType(String),
    #[error("expected {expected} fields, found {found}")]
    FieldCount { expected: usize, found: usize },
    #[error("invalid number `{0}`")]
    Number(String),
    #[error("unknown class `{0}`")]
    UnknownNode(String),
    #[error("missing `{0}` section")]
    Missing(&'static str),
    #[error("invalid hierarchy: {0}")]
    Hierarchy(String),
    #[error("input is not valid UTF-8")]
    Encoding,
}

impl ParseError {
    pub(crate) fn new(line: usize, kind: ParseErrorKind) -> Self {
        ParseError { line, kind }
    }
}
