use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DopeError {
    #[error("grid must have 2 or 3 positive dimensions, got {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("pixel index {index} out of range for {n} pixels")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("coordinate {coords:?} out of range for dims {dims:?}")]
    CoordOutOfRange { coords: Vec<usize>, dims: Vec<usize> },
    #[error("unsupported kernel size {0} (expected 3, 5, 7 or 9)")]
    UnsupportedKernel(usize),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("too few seeds: {foreground} foreground, {background} background (need at least {needed} each)")]
    TooFewSeeds {
        foreground: usize,
        background: usize,
        needed: usize,
    },
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error(
        "negative pairwise weight {weight} on ({i}, {j}): energy is not submodular, use the icm or exhaustive solver"
    )]
    NonSubmodular { i: usize, j: usize, weight: f64 },
    #[error("exhaustive search over {m} variables exceeds the limit of {max}")]
    TooManyVariables { m: usize, max: usize },
    #[error("relative energy difference is undefined for a zero reference energy")]
    ZeroReferenceEnergy,
    #[error("block {block}: {source}")]
    Block {
        block: usize,
        #[source]
        source: Box<DopeError>,
    },
}

pub type Result<T> = std::result::Result<T, DopeError>;
