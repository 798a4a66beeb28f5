use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by graph construction, spectral computation, commute
/// queries, training, and dataset I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("node id {node} out of range for graph with {num_nodes} nodes")]
    NodeOutOfRange { node: usize, num_nodes: usize },

    #[error("graph must have at least one node")]
    EmptyGraph,

    #[error("node {node} has no outgoing edge; rewire or add self-loops before building a transition matrix")]
    AbsorbingNode { node: usize },

    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },

    #[error("permutation of length {len} is not a bijection on [0, {len})")]
    NonBijectivePermutation { len: usize },

    #[error("feature matrix has no rows")]
    EmptyFeatures,

    #[error("power iteration did not converge within {max_iter} iterations (residual {residual:.3e})")]
    PowerIterationDiverged { max_iter: usize, residual: f64 },

    #[error("stationary distribution has non-positive entry at node {node}")]
    NonPositiveStationary { node: usize },

    #[error("rank q={q} out of range: require 1 <= q and q + oversample <= {n}")]
    RankOutOfRange { q: usize, n: usize },

    #[error("all singular values fall below the relative cutoff; operator is numerically zero")]
    DegenerateOperator,

    #[error("transition matrix pattern does not match the graph's out-edges at node {node}")]
    PatternMismatch { node: usize },

    #[error("dense path refused: n={n} exceeds cap {cap}; use per-edge queries instead")]
    DenseCapExceeded { n: usize, cap: usize },

    #[error("linear system is singular; the chain violates the irreducible + aperiodic assumption")]
    SingularSystem,

    #[error("target node {dst} unreached from {src} in all {walks} walks of at most {max_steps} steps")]
    Unreachable {
        src: usize,
        dst: usize,
        walks: u64,
        max_steps: u64,
    },

    #[error("gamma {gamma} outside [0, 1]")]
    InvalidGamma { gamma: f64 },

    #[error("no commute value supplied for edge ({src}, {dst})")]
    MissingCommute { src: usize, dst: usize },

    #[error("no proximity weight for node {node} and neighbor {neighbor}")]
    MissingWeight { node: usize, neighbor: usize },

    #[error("zero-norm reference vector; change ratio undefined")]
    ZeroNorm,

    #[error("graph has no edges")]
    ZeroEdges,

    #[error("node {node} has no label")]
    MissingLabel { node: usize },

    #[error("split '{split}' is empty")]
    EmptySplit { split: &'static str },

    #[error("node {node} assigned to more than one split")]
    OverlappingSplits { node: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// An [`Error`] tagged with the pipeline stage that raised it.
#[derive(Debug, Error)]
#[error("stage '{stage}' failed: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

impl StageError {
    pub fn new(stage: &'static str, source: Error) -> Self {
        Self { stage, source }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|e| StageError::new(stage, e))
    }
}
