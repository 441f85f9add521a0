use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    IndexOutOfRange { what: &'static str, index: usize, bound: usize },
    OverlappingGroups { index: usize },
    IncompleteCover { missing: usize },
    EmptyGroup { group: usize },
    EmptyPanel,
    InsufficientHistory { rows: usize, lags: usize },
    NonFinite { context: &'static str },
    SingularDesign,
    SingularPrecision { lag: usize, node: usize, group: usize },
    NotPositiveDefinite { context: &'static str },
    InfeasiblePattern { requested: usize, capacity: usize },
    ExplosivePath { step: usize },
    ShapeMismatch { context: &'static str },
    AllCellsExcluded,
    ZeroNormalizer,
    TooManyIndicators { count: usize, limit: usize },
    InvalidConfig(&'static str),
    InvalidHyperParams(&'static str),
    InvalidPanel(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::IndexOutOfRange { what, index, bound } => {
                write!(f, "{what} index {index} out of range (bound {bound})")
            }
            Error::OverlappingGroups { index } => {
                write!(f, "node {} appears in more than one group", index + 1)
            }
            Error::IncompleteCover { missing } => {
                write!(f, "node {} is not covered by any group", missing + 1)
            }
            Error::EmptyGroup { group } => write!(f, "group {} is empty", group + 1),
            Error::EmptyPanel => f.write_str("panel has no rows"),
            Error::InsufficientHistory { rows, lags } => {
                write!(f, "{rows} rows are not enough history for {lags} lags")
            }
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::SingularDesign => f.write_str("least-squares system is singular"),
            Error::SingularPrecision { lag, node, group } => write!(
                f,
                "group precision at lag {}, node {}, group {} cannot be factored",
                lag + 1,
                node + 1,
                group + 1
            ),
            Error::NotPositiveDefinite { context } => {
                write!(f, "{context} is not positive definite")
            }
            Error::InfeasiblePattern { requested, capacity } => write!(
                f,
                "{requested} nonzero coefficients requested but the pattern holds at most {capacity}"
            ),
            Error::ExplosivePath { step } => {
                write!(f, "simulated path exploded at step {step}")
            }
            Error::ShapeMismatch { context } => write!(f, "shape mismatch: {context}"),
            Error::AllCellsExcluded => {
                f.write_str("every actual value is zero; percentage error undefined")
            }
            Error::ZeroNormalizer => f.write_str("mean of actual values is zero"),
            Error::TooManyIndicators { count, limit } => {
                write!(f, "{count} indicators exceed the enumeration limit {limit}")
            }
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::InvalidHyperParams(msg) => write!(f, "invalid hyperparameters: {msg}"),
            Error::InvalidPanel(msg) => write!(f, "invalid panel: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
