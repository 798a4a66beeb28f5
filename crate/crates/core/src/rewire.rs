//! Similarity-based rewiring: orders nodes by cosine similarity to the mean
//! feature vector, threads a bidirectional chain through that order, and
//! adds self-loops, yielding a strongly connected and aperiodic graph.

use nalgebra::DVector;

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::graph::{build_digraph, DiGraph};

/// Output of [`rewire`].
///
/// `rewired` contains every original edge plus the chain edges and
/// self-loops listed in `added_edges`; `ordering` is the similarity order the
/// chain follows.
#[derive(Debug, Clone)]
pub struct RewiringResult {
    pub rewired: DiGraph,
    pub added_edges: Vec<(usize, usize)>,
    pub anchor: DVector<f64>,
    pub ordering: Vec<usize>,
}

/// Arithmetic mean of the feature rows.
pub fn anchor_vector(x: &FeatureMatrix) -> Result<DVector<f64>> {
    if x.nrows() == 0 {
        return Err(Error::EmptyFeatures);
    }
    let n = x.nrows() as f64;
    let mut mean = DVector::zeros(x.ncols());
    for i in 0..x.nrows() {
        mean += x.row(i).transpose();
    }
    Ok(mean / n)
}

fn cosine(a: &DVector<f64>, b: DVector<f64>) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        // Zero-norm rows (or a zero anchor) get neutral similarity.
        return 0.0;
    }
    a.dot(&b) / (na * nb)
}

/// Node ids sorted by cosine similarity to `anchor`, descending, ties broken
/// by ascending node id.
pub fn similarity_order(x: &FeatureMatrix, anchor: &DVector<f64>) -> Result<Vec<usize>> {
    if anchor.len() != x.ncols() {
        return Err(Error::DimensionMismatch {
            context: format!(
                "anchor has dimension {} but features have {} columns",
                anchor.len(),
                x.ncols()
            ),
        });
    }
    let sims: Vec<f64> = (0..x.nrows())
        .map(|i| cosine(anchor, x.row(i).transpose()))
        .collect();
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.sort_by(|&a, &b| {
        sims[b]
            .partial_cmp(&sims[a])
            .expect("cosine similarities are finite")
            .then(a.cmp(&b))
    });
    Ok(order)
}

/// Unions a bidirectional chain (threaded through the similarity order) and
/// per-node self-loops into `g`. The result is strongly connected and, having
/// a self-loop at every node, aperiodic.
pub fn rewire(g: &DiGraph, x: &FeatureMatrix) -> Result<RewiringResult> {
    let n = g.num_nodes();
    if x.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: format!("{} feature rows for a graph with {n} nodes", x.nrows()),
        });
    }
    let anchor = anchor_vector(x)?;
    let ordering = similarity_order(x, &anchor)?;

    let mut edges = g.edges().to_vec();
    let mut added = Vec::new();
    let push_new = |edges: &mut Vec<(usize, usize)>,
                        added: &mut Vec<(usize, usize)>,
                        e: (usize, usize)| {
        if !g.contains_edge(e.0, e.1) && !added.contains(&e) {
            edges.push(e);
            added.push(e);
        }
    };
    for k in 0..n.saturating_sub(1) {
        let (a, b) = (ordering[k], ordering[k + 1]);
        push_new(&mut edges, &mut added, (a, b));
        push_new(&mut edges, &mut added, (b, a));
    }
    for i in 0..n {
        push_new(&mut edges, &mut added, (i, i));
    }
    let rewired = build_digraph(n, &edges)?;
    Ok(RewiringResult {
        rewired,
        added_edges: added,
        anchor,
        ordering,
    })
}

/// Relative edge-count change `(M_rewired - M) / M`; the `N^2` density
/// denominators cancel.
pub fn density_delta(g: &DiGraph, g_rewired: &DiGraph) -> Result<f64> {
    if g.num_edges() == 0 {
        return Err(Error::ZeroEdges);
    }
    let m = g.num_edges() as f64;
    let m_rew = g_rewired.num_edges() as f64;
    Ok((m_rew - m) / m)
}
