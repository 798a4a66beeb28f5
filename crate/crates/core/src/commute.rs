//! Hitting and commute times from the Laplacian pseudoinverse factors,
//! per-edge proximity weights for message passing, and the commute-change
//! diagnostic.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::DiGraph;
use crate::spectral::{dense_pseudoinverse, DigraphLaplacian, LowRankFactors, PerronVector};

/// Default cap for dense N x N commute/hitting matrices; larger graphs must
/// use per-edge queries.
pub const DENSE_PATH_CAP: usize = 2000;

/// Dense hitting-time matrix `H` and commute-time matrix `C = H + H^T`.
#[derive(Debug, Clone)]
pub struct CommuteMatrices {
    pub hitting: DMatrix<f64>,
    pub commute: DMatrix<f64>,
}

impl CommuteMatrices {
    pub(crate) fn from_hitting(hitting: DMatrix<f64>) -> Self {
        let commute = &hitting + hitting.transpose();
        Self { hitting, commute }
    }
}

fn check_pi_positive(pi: &PerronVector) -> Result<()> {
    for (node, &v) in pi.pi.iter().enumerate() {
        if v <= 0.0 {
            return Err(Error::NonPositiveStationary { node });
        }
    }
    Ok(())
}

/// Dense fundamental matrix `Z = T^+` from the Laplacian (guarded dense
/// path).
pub fn fundamental_matrix_from_laplacian(
    t: &DigraphLaplacian,
    cap: usize,
) -> Result<DMatrix<f64>> {
    if t.n() > cap {
        return Err(Error::DenseCapExceeded { n: t.n(), cap });
    }
    dense_pseudoinverse(&t.to_dense())
}

/// Hitting times `H_ij = T^+_jj / pi_j - T^+_ij / sqrt(pi_i pi_j)` and
/// commute times `C = H + H^T`, evaluated densely from the pseudoinverse
/// factors. Small-N path; per-edge queries scale instead.
pub fn hitting_commute_closed_form(
    factors: &LowRankFactors,
    pi: &PerronVector,
) -> Result<CommuteMatrices> {
    check_pi_positive(pi)?;
    let n = pi.n();
    if factors.u.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: format!("factors cover {} nodes, pi covers {n}", factors.u.nrows()),
        });
    }
    let pinv = factors.pinv_dense();
    let mut hitting = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            hitting[(i, j)] =
                pinv[(j, j)] / pi.pi[j] - pinv[(i, j)] / (pi.pi[i] * pi.pi[j]).sqrt();
        }
    }
    Ok(CommuteMatrices::from_hitting(hitting))
}

/// Commute times for the requested node pairs via `O(q)` inner products of
/// factor rows; never materializes an N x N matrix.
pub fn edge_commute_times(
    factors: &LowRankFactors,
    pi: &PerronVector,
    edges: &[(usize, usize)],
) -> Result<Vec<f64>> {
    check_pi_positive(pi)?;
    let n = pi.n();
    for &(i, j) in edges {
        let node = if i >= n { i } else { j };
        if node >= n {
            return Err(Error::NodeOutOfRange {
                node,
                num_nodes: n,
            });
        }
    }
    let values = edges
        .par_iter()
        .map(|&(i, j)| {
            if i == j {
                return 0.0;
            }
            let s = (pi.pi[i] * pi.pi[j]).sqrt();
            factors.pinv_entry(j, j) / pi.pi[j] + factors.pinv_entry(i, i) / pi.pi[i]
                - factors.pinv_entry(i, j) / s
                - factors.pinv_entry(j, i) / s
        })
        .collect();
    Ok(values)
}

/// Per-edge aggregation weights keyed to the original graph's edges.
///
/// `c_out` is keyed by `(i, j)` for each edge `(i, j)`; `c_in` is keyed by
/// `(i, j)` for each edge `(j, i)`, mirroring the transposed adjacency. Each
/// nonempty row's maximum weight is exactly 1.
#[derive(Debug, Clone)]
pub struct ProximityWeights {
    pub c_in: HashMap<(usize, usize), f64>,
    pub c_out: HashMap<(usize, usize), f64>,
}

impl ProximityWeights {
    /// All-ones weights over the edges of `g`; the degenerate case in which
    /// commute-weighted aggregation reduces to plain direction-aware
    /// aggregation.
    pub fn unit(g: &DiGraph) -> Self {
        let mut c_in = HashMap::new();
        let mut c_out = HashMap::new();
        for &(i, j) in g.edges() {
            c_out.insert((i, j), 1.0);
            c_in.insert((j, i), 1.0);
        }
        Self { c_in, c_out }
    }

    pub fn out_weight(&self, src: usize, dst: usize) -> Option<f64> {
        self.c_out.get(&(src, dst)).copied()
    }

    pub fn in_weight(&self, node: usize, in_neighbor: usize) -> Option<f64> {
        self.c_in.get(&(node, in_neighbor)).copied()
    }

    /// Entries sorted by key, for deterministic file output.
    pub fn sorted_out(&self) -> Vec<((usize, usize), f64)> {
        let mut v: Vec<_> = self.c_out.iter().map(|(&k, &w)| (k, w)).collect();
        v.sort_by_key(|&(k, _)| k);
        v
    }

    pub fn sorted_in(&self) -> Vec<((usize, usize), f64)> {
        let mut v: Vec<_> = self.c_in.iter().map(|(&k, &w)| (k, w)).collect();
        v.sort_by_key(|&(k, _)| k);
        v
    }
}

/// Builds proximity weights from per-edge commute values.
///
/// The weight of edge `e` within its row is `exp(-(c_e - min_row))`, the
/// row-min-shifted form of `exp(-c)` followed by row-max normalization; the
/// shift makes the computation immune to underflow for large commute times.
pub fn proximity_weights(
    commutes: &[((usize, usize), f64)],
    g_original: &DiGraph,
) -> Result<ProximityWeights> {
    let by_edge: HashMap<(usize, usize), f64> = commutes.iter().copied().collect();
    let commute_of = |src: usize, dst: usize| -> Result<f64> {
        by_edge
            .get(&(src, dst))
            .copied()
            .ok_or(Error::MissingCommute { src, dst })
    };

    let n = g_original.num_nodes();
    let mut c_out = HashMap::new();
    let mut c_in = HashMap::new();
    for i in 0..n {
        let out = g_original.out_neighbors(i);
        if !out.is_empty() {
            let cs: Vec<f64> = out
                .iter()
                .map(|&j| commute_of(i, j))
                .collect::<Result<_>>()?;
            let min = cs.iter().copied().fold(f64::INFINITY, f64::min);
            for (&j, &c) in out.iter().zip(&cs) {
                c_out.insert((i, j), (-(c - min)).exp());
            }
        }
        let inn = g_original.in_neighbors(i);
        if !inn.is_empty() {
            let cs: Vec<f64> = inn
                .iter()
                .map(|&j| commute_of(j, i))
                .collect::<Result<_>>()?;
            let min = cs.iter().copied().fold(f64::INFINITY, f64::min);
            for (&j, &c) in inn.iter().zip(&cs) {
                c_in.insert((i, j), (-(c - min)).exp());
            }
        }
    }
    Ok(ProximityWeights { c_in, c_out })
}

/// Normalizes commute values by their mean, making downstream change ratios
/// scale-free.
pub fn mean_normalized(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::ZeroNorm);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if mean == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(values.iter().map(|&v| v / mean).collect())
}

/// Relative change `||c_orig - c_rew||_2 / ||c_orig||_2` between two commute
/// vectors over the same pair index set. Callers normalize the inputs (see
/// [`mean_normalized`]) when a scale-free ratio is wanted.
pub fn commute_change_delta(c_orig: &[f64], c_rew: &[f64]) -> Result<f64> {
    if c_orig.len() != c_rew.len() {
        return Err(Error::DimensionMismatch {
            context: format!(
                "commute vectors have lengths {} and {}",
                c_orig.len(),
                c_rew.len()
            ),
        });
    }
    let norm_orig = c_orig.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_orig == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let diff = c_orig
        .iter()
        .zip(c_rew)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(diff / norm_orig)
}
