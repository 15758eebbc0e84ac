use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid group law: {0}")]
    NotAGroup(String),

    #[error("marked generators do not generate: Cayley graph reaches {reached} of {order} elements")]
    Disconnected { reached: usize, order: usize },

    #[error("permutation generators have no simply transitive orbit: orbit of {base_point} has {orbit} points but the generated group has at least {group} elements")]
    NotSimplyTransitive {
        base_point: usize,
        orbit: usize,
        group: usize,
    },

    #[error("element index {index} out of range for a group of order {order}")]
    ElementOutOfRange { index: usize, order: usize },

    #[error("invalid quotient description: {0}")]
    InvalidQuotient(String),

    #[error("invalid chain: {0}")]
    InvalidChain(String),

    #[error("ambient element does not match the ambient group: {0}")]
    AmbientMismatch(String),

    #[error("word length has not stabilized along the chain (last two levels give {previous} and {last})")]
    NotStabilized { previous: u64, last: u64 },

    #[error("chain exhausted: no level at or past index {exclude_below} has isometry radius >= {requested} (deepest radius {deepest})")]
    ChainExhausted {
        requested: u64,
        exclude_below: usize,
        deepest: u64,
    },

    #[error("point {0} is not a point of this box space")]
    InvalidPoint(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("exponent mismatch: expected p = {expected}, found p = {found}")]
    ExponentMismatch { expected: String, found: String },

    #[error("invalid exponent {0}: p must lie in [1, inf]")]
    InvalidExponent(String),

    #[error("empty domain")]
    EmptyDomain,

    #[error("control function has no value at realized distance {0}")]
    MissingControl(u64),

    #[error("embedding does not cover point {0}")]
    MissingPoint(String),

    #[error("invalid isometry: {0}")]
    InvalidIsometry(String),

    #[error("no trivialization for subset {subset} at scale r = {r}")]
    MissingTrivialization { r: u64, subset: String },

    #[error("supplied action fails the {identity} identity at {witness}")]
    ActionRelation { identity: String, witness: String },

    #[error("subset mode `all` needs at most {limit} admissible points, found {found}")]
    TooManyPoints { limit: usize, found: usize },

    #[error("fibred embedding check failed: {0}")]
    VerifierFailure(String),

    #[error("locality radius {requested} exceeds the isometry radius {radius} of level {level}")]
    RadiusTooLarge {
        requested: u64,
        radius: u64,
        level: usize,
    },

    #[error("cocycle has no value for {element} although it lies inside radius {r}")]
    MissingCocycleValue { element: String, r: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
