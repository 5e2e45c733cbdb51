use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("rectangles and points need at least one dimension")]
    ZeroDimension,
    #[error("coordinate {value} on axis {axis} is outside [0, 1]")]
    OutOfDomain { axis: usize, value: f64 },
    #[error("lower bound {lo} exceeds upper bound {hi} on axis {axis}")]
    Inverted { axis: usize, lo: f64, hi: f64 },
    #[error("operation needs a non-empty set of rectangles")]
    EmptySet,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("cover model undefined: need 0 < s < c <= 1 (s = {selectivity}, c = {cover})")]
    CoverModel { selectivity: f64, cover: f64 },
    #[error("height must be at least 2, got {0}")]
    Height(u32),
    #[error("fanout must be at least 1, got {0}")]
    Fanout(u32),
    #[error("alpha must be positive and finite, got {0}")]
    Alpha(f64),
    #[error("query count must be at least 1")]
    QueryCount,
    #[error("element size must be positive, got {0}")]
    ElementSize(f64),
    #[error("merge rate {0} is outside [0, 1]")]
    MergeRate(f64),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("invalid workload: {0}")]
    Workload(String),
    #[error("invalid merge budget: {0}")]
    Budget(String),
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("structure height {structure} does not match topology height {topology}")]
    HeightMismatch { structure: usize, topology: usize },
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
