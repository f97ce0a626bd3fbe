use thiserror::Error;

/// Errors raised by the library. Input-shape problems and numerical
/// certificates that fail share one enum so callers can map them to exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("distance matrix is not square: row {row} has {len} entries, expected {n}")]
    NotSquare { row: usize, len: usize, n: usize },
    #[error("distance matrix is empty")]
    EmptySpace,
    #[error("non-finite distance at ({0}, {1})")]
    NonFiniteDistance(usize, usize),
    #[error("negative distance at ({0}, {1})")]
    NegativeDistance(usize, usize),
    #[error("asymmetric distance: d({0},{1}) != d({1},{0})")]
    AsymmetricDistance(usize, usize),
    #[error("nonzero self-distance at point {0}")]
    NonzeroDiagonal(usize),
    #[error("distinct points {0} and {1} are at distance zero")]
    CoincidentPoints(usize, usize),
    #[error("triangle inequality fails: d({0},{1}) > d({0},{2}) + d({2},{1})")]
    TriangleViolation(usize, usize, usize),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid cost profile: {0}")]
    InvalidProfile(String),
    #[error("doubling ratio {ratio} exceeds cap {cap}")]
    DoublingUnbounded { ratio: f64, cap: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid probability vector: {0}")]
    InvalidProbability(String),
    #[error("support of nu is not contained in the support of mu (point {0})")]
    AbsoluteContinuityViolated(usize),
    #[error("exact concentration profile needs n <= {max}, got {n}")]
    TooLargeForExact { n: usize, max: usize },

    #[error("transport simplex exceeded {0} pivots")]
    SolverStall(usize),
    #[error("truncation level must be positive, got {0}")]
    InvalidTruncation(f64),

    #[error("invalid functional: {0}")]
    InvalidFunctional(String),
    #[error("relative entropy is infinite")]
    EntropyInfinite,
    #[error("functional derivative is singular at this point")]
    SingularPoint,
    #[error("Young bound is vacuous: a = {a} < 1/delta = {inv_delta}")]
    BoundVacuous { a: f64, inv_delta: f64 },
    #[error("truncation levels must be strictly increasing and positive")]
    ScheduleNotIncreasing,
    #[error("last truncation level {last} is below the maximal cost {max_cost}")]
    ScheduleIncomplete { last: f64, max_cost: f64 },

    #[error("operation requires a one-dimensional grid space")]
    NotAGrid,
    #[error("every probe had zero Fisher information")]
    DegenerateSlope,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
