//! Label-similarity diagnostics: how closely the plain adjacency and the
//! commute-derived proximity weights track same-label neighborhoods, plus
//! the edge homophily ratio.

use std::collections::BTreeSet;

use crate::commute::ProximityWeights;
use crate::data::LabelVector;
use crate::error::{Error, Result};
use crate::graph::DiGraph;
use crate::sparse::CsrMatrix;

/// Squared-distance diagnostics and the homophily ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    /// `||M - (A + A^T)||_F^2`
    pub dist_adjacency: f64,
    /// `||M - (C_in + C_out)||_F^2`
    pub dist_proximity: f64,
    /// Fraction of edges joining same-label nodes.
    pub homophily: f64,
}

impl DiagnosticsReport {
    /// Plain-text key-value lines.
    pub fn render(&self) -> String {
        format!(
            "dist_adjacency {}\ndist_proximity {}\nhomophily {}\n",
            self.dist_adjacency, self.dist_proximity, self.homophily
        )
    }

    /// Tab-separated rows for plotting.
    pub fn render_table(&self) -> String {
        format!(
            "metric\tvalue\ndist_adjacency\t{}\ndist_proximity\t{}\nhomophily\t{}\n",
            self.dist_adjacency, self.dist_proximity, self.homophily
        )
    }
}

/// `Mated_ij = 1` iff `j` neighbors `i` (either direction, matching the
/// `A + A^T` comparison) and the labels agree.
pub fn label_similarity_matrix(g: &DiGraph, labels: &LabelVector) -> Result<CsrMatrix> {
    let n = g.num_nodes();
    if labels.len() < n {
        return Err(Error::MissingLabel { node: labels.len() });
    }
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let neighborhood: BTreeSet<usize> = g
            .out_neighbors(i)
            .iter()
            .chain(g.in_neighbors(i))
            .copied()
            .collect();
        let row: Vec<(usize, f64)> = neighborhood
            .into_iter()
            .filter(|&j| labels[i] == labels[j])
            .map(|j| (j, 1.0))
            .collect();
        rows.push(row);
    }
    Ok(CsrMatrix::from_rows(n, n, rows))
}

/// Squared Frobenius distances `||M - (A + A^T)||^2` and
/// `||M - (C_in + C_out)||^2`, accumulated over the union sparsity pattern.
pub fn heterophily_distances(
    m: &CsrMatrix,
    g: &DiGraph,
    w: &ProximityWeights,
) -> (f64, f64) {
    let n = g.num_nodes();
    let mut dist_adjacency = 0.0;
    let mut dist_proximity = 0.0;
    for i in 0..n {
        let mut pattern: BTreeSet<usize> = g
            .out_neighbors(i)
            .iter()
            .chain(g.in_neighbors(i))
            .copied()
            .collect();
        let (m_cols, _) = m.row(i);
        pattern.extend(m_cols.iter().copied());
        for j in pattern {
            let m_ij = m.get(i, j);
            let a_sum = g.contains_edge(i, j) as u32 as f64 + g.contains_edge(j, i) as u32 as f64;
            // (C_in + C_out)[i][j]: the out-weight rides edge (i, j), the
            // in-weight rides edge (j, i).
            let w_sum = w.out_weight(i, j).unwrap_or(0.0) + w.in_weight(i, j).unwrap_or(0.0);
            dist_adjacency += (m_ij - a_sum) * (m_ij - a_sum);
            dist_proximity += (m_ij - w_sum) * (m_ij - w_sum);
        }
    }
    (dist_adjacency, dist_proximity)
}

/// Fraction of edges `(i, j)` with `y_i == y_j`.
pub fn homophily_ratio(g: &DiGraph, labels: &LabelVector) -> Result<f64> {
    if g.num_edges() == 0 {
        return Err(Error::ZeroEdges);
    }
    if labels.len() < g.num_nodes() {
        return Err(Error::MissingLabel { node: labels.len() });
    }
    let same = g
        .edges()
        .iter()
        .filter(|&&(i, j)| labels[i] == labels[j])
        .count();
    Ok(same as f64 / g.num_edges() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_digraph;

    #[test]
    fn label_similarity_basic() {
        let g = build_digraph(2, &[(0, 1)]).unwrap();
        let same = label_similarity_matrix(&g, &vec![1, 1]).unwrap();
        assert_eq!(same.get(0, 1), 1.0);
        assert_eq!(same.get(1, 0), 1.0);
        let diff = label_similarity_matrix(&g, &vec![0, 1]).unwrap();
        assert_eq!(diff.get(0, 1), 0.0);
        assert_eq!(diff.nnz(), 0);
    }

    #[test]
    fn label_similarity_no_edges_is_zero() {
        let g = build_digraph(3, &[]).unwrap();
        let m = label_similarity_matrix(&g, &vec![0, 0, 0]).unwrap();
        assert_eq!(m.nnz(), 0);
    }

    #[test]
    fn label_similarity_is_symmetric() {
        let g = build_digraph(4, &[(0, 1), (1, 2), (3, 1), (2, 0)]).unwrap();
        let m = label_similarity_matrix(&g, &vec![0, 0, 1, 0]).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
    }

    #[test]
    fn distances_match_when_weights_are_binary() {
        // Fully homophilic graph, all proximity weights 1: the weight matrix
        // equals A + A^T on its pattern.
        let g = build_digraph(3, &[(0, 1), (1, 2)]).unwrap();
        let labels = vec![0, 0, 0];
        let m = label_similarity_matrix(&g, &labels).unwrap();
        let w = ProximityWeights::unit(&g);
        let (da, dp) = heterophily_distances(&m, &g, &w);
        assert_eq!(da, dp);
    }

    #[test]
    fn adjacency_distance_zero_when_m_equals_a_plus_at() {
        // Same-label, no mutual edges: A + A^T is 0/1 and equals M.
        let g = build_digraph(3, &[(0, 1), (1, 2)]).unwrap();
        let m = label_similarity_matrix(&g, &vec![0, 0, 0]).unwrap();
        let w = ProximityWeights::unit(&g);
        let (da, _) = heterophily_distances(&m, &g, &w);
        assert_eq!(da, 0.0);
    }

    #[test]
    fn homophily_ratio_examples() {
        let g = build_digraph(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        assert_eq!(homophily_ratio(&g, &vec![0, 0, 0]).unwrap(), 1.0);
        assert_eq!(homophily_ratio(&g, &vec![0, 1, 2]).unwrap(), 0.0);
        let empty = build_digraph(2, &[]).unwrap();
        assert!(matches!(
            homophily_ratio(&empty, &vec![0, 0]),
            Err(Error::ZeroEdges)
        ));
    }

    #[test]
    fn homophily_invariant_under_relabeling() {
        let g = build_digraph(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        let labels = vec![0, 0, 1, 1];
        let ratio = homophily_ratio(&g, &labels).unwrap();
        let perm = [2usize, 0, 3, 1];
        let permuted = crate::graph::permute(&g, Some(&perm), None).unwrap();
        let mut permuted_labels = vec![0; 4];
        for (old, &new) in perm.iter().enumerate() {
            permuted_labels[new] = labels[old];
        }
        assert_eq!(ratio, homophily_ratio(&permuted, &permuted_labels).unwrap());
    }
}
