//! Node features, labels, and train/val/test partitions shared by the
//! rewiring, training, and diagnostics paths.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::DiGraph;

/// Node feature matrix, one row per node.
pub type FeatureMatrix = DMatrix<f64>;

/// Per-node class labels, indexed by node id.
pub type LabelVector = Vec<usize>;

/// Disjoint train/val/test node sets; nodes may be left unassigned.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitAssignment {
    /// Validates disjointness and id range, and sorts each split.
    pub fn new(
        mut train: Vec<usize>,
        mut val: Vec<usize>,
        mut test: Vec<usize>,
        num_nodes: usize,
    ) -> Result<Self> {
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        let mut seen = vec![false; num_nodes];
        for &node in train.iter().chain(&val).chain(&test) {
            if node >= num_nodes {
                return Err(Error::NodeOutOfRange { node, num_nodes });
            }
            if seen[node] {
                return Err(Error::OverlappingSplits { node });
            }
            seen[node] = true;
        }
        Ok(Self { train, val, test })
    }
}

/// A graph with its features, labels, and split assignment.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: DiGraph,
    pub features: FeatureMatrix,
    pub labels: LabelVector,
    pub splits: SplitAssignment,
}

impl Dataset {
    /// Checks that every component agrees on the node count and that every
    /// node is labeled.
    pub fn validate(&self) -> Result<()> {
        let n = self.graph.num_nodes();
        if self.features.nrows() != n {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "feature matrix has {} rows for a graph with {} nodes",
                    self.features.nrows(),
                    n
                ),
            });
        }
        if self.labels.len() != n {
            return Err(Error::MissingLabel {
                node: self.labels.len().min(n),
            });
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }
}
