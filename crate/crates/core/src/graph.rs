//! Directed-graph data model: adjacency, degree, incidence, and
//! transition-matrix views, plus connectivity and permutation utilities.

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// A directed, unweighted graph with dense node ids in `[0, N)` and stable
/// edge indices in `[0, M)`.
///
/// Immutable after construction. Duplicate `(src, dst)` pairs passed to the
/// constructor are dropped, keeping the first occurrence, so every ordered
/// pair appears at most once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiGraph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    has_self_loop: Vec<bool>,
    out_adj: Vec<Vec<usize>>,
    in_adj: Vec<Vec<usize>>,
}

impl DiGraph {
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges in index order; position `k` is edge `k`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn has_self_loop(&self, node: usize) -> bool {
        self.has_self_loop[node]
    }

    pub fn all_self_loops(&self) -> bool {
        self.has_self_loop.iter().all(|&b| b)
    }

    /// Out-neighbors of `node` in ascending order (self-loop included).
    pub fn out_neighbors(&self, node: usize) -> &[usize] {
        &self.out_adj[node]
    }

    /// In-neighbors of `node` in ascending order (self-loop included).
    pub fn in_neighbors(&self, node: usize) -> &[usize] {
        &self.in_adj[node]
    }

    pub fn out_degree(&self, node: usize) -> usize {
        self.out_adj[node].len()
    }

    pub fn contains_edge(&self, src: usize, dst: usize) -> bool {
        self.out_adj[src].binary_search(&dst).is_ok()
    }
}

/// Builds a [`DiGraph`], deduplicating edges (first occurrence kept).
pub fn build_digraph(num_nodes: usize, edges: &[(usize, usize)]) -> Result<DiGraph> {
    if num_nodes == 0 {
        return Err(Error::EmptyGraph);
    }
    let mut seen = std::collections::HashSet::with_capacity(edges.len());
    let mut out_adj: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
    let mut dedup = Vec::with_capacity(edges.len());
    for &(src, dst) in edges {
        if src >= num_nodes {
            return Err(Error::NodeOutOfRange {
                node: src,
                num_nodes,
            });
        }
        if dst >= num_nodes {
            return Err(Error::NodeOutOfRange {
                node: dst,
                num_nodes,
            });
        }
        if !seen.insert((src, dst)) {
            continue;
        }
        out_adj[src].push(dst);
        dedup.push((src, dst));
    }
    let mut has_self_loop = vec![false; num_nodes];
    let mut in_adj: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
    for &(src, dst) in &dedup {
        if src == dst {
            has_self_loop[src] = true;
        }
        in_adj[dst].push(src);
    }
    for adj in out_adj.iter_mut().chain(in_adj.iter_mut()) {
        adj.sort_unstable();
    }
    Ok(DiGraph {
        num_nodes,
        edges: dedup,
        has_self_loop,
        out_adj,
        in_adj,
    })
}

/// Row-stochastic transition matrix of the uniform random walk on a graph.
///
/// The nonzero pattern of row `i` equals the out-edge set of node `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    matrix: CsrMatrix,
}

impl StochasticMatrix {
    /// Wraps an arbitrary row-stochastic CSR matrix. Every row must sum to 1
    /// within 1e-12.
    pub fn from_csr(matrix: CsrMatrix) -> Result<Self> {
        for i in 0..matrix.nrows() {
            let (_, vals) = matrix.row(i);
            let sum: f64 = vals.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::AbsorbingNode { node: i });
            }
        }
        Ok(Self { matrix })
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn csr(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn prob(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        self.matrix.row(i)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        self.matrix.to_dense()
    }
}

/// `P[i][j] = 1/out_degree(i)` on each out-edge. Errors on any absorbing
/// node; rewiring (or adding self-loops) is the sanctioned repair path.
pub fn transition_matrix(g: &DiGraph) -> Result<StochasticMatrix> {
    let n = g.num_nodes();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let deg = g.out_degree(i);
        if deg == 0 {
            return Err(Error::AbsorbingNode { node: i });
        }
        let p = 1.0 / deg as f64;
        rows.push(g.out_neighbors(i).iter().map(|&j| (j, p)).collect());
    }
    Ok(StochasticMatrix {
        matrix: CsrMatrix::from_rows(n, n, rows),
    })
}

/// Node-by-edge incidence matrix: column `k` has `+1` at the source of edge
/// `k` and `-1` at its destination. Self-loop columns are identically zero
/// because both unit entries land in the same row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidenceMatrix {
    num_nodes: usize,
    columns: Vec<(usize, usize)>,
}

impl IncidenceMatrix {
    pub fn nrows(&self) -> usize {
        self.num_nodes
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    /// `(src, dst)` of column `k`; the column is zero when `src == dst`.
    pub fn column(&self, k: usize) -> (usize, usize) {
        self.columns[k]
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut b = nalgebra::DMatrix::zeros(self.num_nodes, self.columns.len());
        for (k, &(src, dst)) in self.columns.iter().enumerate() {
            if src != dst {
                b[(src, k)] = 1.0;
                b[(dst, k)] = -1.0;
            }
        }
        b
    }
}

/// Incidence matrix with columns in graph edge-index order.
pub fn incidence_matrix(g: &DiGraph) -> IncidenceMatrix {
    IncidenceMatrix {
        num_nodes: g.num_nodes(),
        columns: g.edges().to_vec(),
    }
}

/// Whether the graph is strongly connected, plus the number of strongly
/// connected components.
pub fn strongly_connected(g: &DiGraph) -> (bool, usize) {
    let count = scc_components(g).len();
    (count == 1, count)
}

/// Strongly connected components (iterative Tarjan). Deterministic: roots
/// are explored in ascending node order.
pub fn scc_components(g: &DiGraph) -> Vec<Vec<usize>> {
    let n = g.num_nodes();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut next_index = 0usize;
    let mut components: Vec<Vec<usize>> = Vec::new();

    // Explicit DFS frames: (node, position in its out-neighbor list).
    let mut frames: Vec<(usize, usize)> = Vec::new();
    for start in 0..n {
        if index[start] != usize::MAX {
            continue;
        }
        frames.push((start, 0));
        index[start] = next_index;
        low[start] = next_index;
        next_index += 1;
        stack.push(start);
        on_stack[start] = true;

        while let Some(&mut (v, ref mut pos)) = frames.last_mut() {
            if *pos < g.out_neighbors(v).len() {
                let w = g.out_neighbors(v)[*pos];
                *pos += 1;
                if index[w] == usize::MAX {
                    index[w] = next_index;
                    low[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    frames.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                frames.pop();
                if let Some(&(parent, _)) = frames.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut component = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack underflow");
                        on_stack[w] = false;
                        component.push(w);
                        if w == v {
                            break;
                        }
                    }
                    component.sort_unstable();
                    components.push(component);
                }
            }
        }
    }
    components
}

/// Returns a graph in which every node carries a self-loop. Idempotent:
/// existing self-loops are not duplicated.
pub fn add_self_loops(g: &DiGraph) -> DiGraph {
    let mut edges = g.edges().to_vec();
    for i in 0..g.num_nodes() {
        if !g.has_self_loop(i) {
            edges.push((i, i));
        }
    }
    build_digraph(g.num_nodes(), &edges).expect("self-loop augmentation preserves validity")
}

fn check_permutation(perm: &[usize]) -> Result<()> {
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || seen[p] {
            return Err(Error::NonBijectivePermutation { len: perm.len() });
        }
        seen[p] = true;
    }
    Ok(())
}

/// Relabels nodes and/or reorders edge indices.
///
/// `node_perm[i]` is the new id of old node `i`; new edge `k` is the
/// relabeled old edge `edge_perm[k]`. Used by the permutation property
/// tests; identity arguments give a graph equal to the input.
pub fn permute(
    g: &DiGraph,
    node_perm: Option<&[usize]>,
    edge_perm: Option<&[usize]>,
) -> Result<DiGraph> {
    if let Some(p) = node_perm {
        if p.len() != g.num_nodes() {
            return Err(Error::NonBijectivePermutation { len: p.len() });
        }
        check_permutation(p)?;
    }
    if let Some(p) = edge_perm {
        if p.len() != g.num_edges() {
            return Err(Error::NonBijectivePermutation { len: p.len() });
        }
        check_permutation(p)?;
    }
    let relabel = |v: usize| node_perm.map_or(v, |p| p[v]);
    let m = g.num_edges();
    let mut edges = Vec::with_capacity(m);
    for k in 0..m {
        let old = edge_perm.map_or(k, |p| p[k]);
        let (src, dst) = g.edges()[old];
        edges.push((relabel(src), relabel(dst)));
    }
    build_digraph(g.num_nodes(), &edges)
}
