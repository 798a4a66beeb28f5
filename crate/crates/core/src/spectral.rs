//! Spectral machinery: stationary distribution by power iteration, the
//! divergence-form digraph Laplacian and its stationary-weighted variant,
//! and a randomized truncated SVD used to factor the Laplacian's
//! pseudoinverse.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::graph::{DiGraph, StochasticMatrix};
use crate::sparse::CsrMatrix;

/// Relative singular-value cutoff: values below `cutoff * sigma_max` are
/// treated as part of the kernel and excluded from inversion.
pub const SV_CUTOFF_REL: f64 = 1e-10;

/// Default oversampling for the randomized range finder.
pub const DEFAULT_OVERSAMPLE: usize = 8;

/// Power iterations inside the randomized range finder.
const SUBSPACE_ITERS: usize = 2;

/// Stationary distribution of an irreducible, aperiodic chain.
#[derive(Debug, Clone)]
pub struct PerronVector {
    pub pi: DVector<f64>,
    pub iterations_used: usize,
    pub residual: f64,
}

impl PerronVector {
    pub fn n(&self) -> usize {
        self.pi.len()
    }
}

/// Left fixed point of `P` by power iteration on `P^T`, starting uniform,
/// normalized to sum 1.
///
/// Convergence requires the chain to be irreducible and aperiodic, which the
/// rewiring stage guarantees; non-convergence is reported as an error rather
/// than repaired.
pub fn perron_vector(p: &StochasticMatrix, tol: f64, max_iter: usize) -> Result<PerronVector> {
    let n = p.n();
    let mut pi = DVector::from_element(n, 1.0 / n as f64);
    let mut residual = f64::INFINITY;
    for iteration in 1..=max_iter {
        let mut next = p.csr().tr_mul_vec(&pi);
        let sum: f64 = next.iter().sum();
        next /= sum;
        residual = (&next - &pi).abs().sum();
        pi = next;
        if residual <= tol {
            // Report the residual of the vector actually returned.
            let check = p.csr().tr_mul_vec(&pi);
            let final_residual = (&check - &pi).abs().sum();
            for (node, &v) in pi.iter().enumerate() {
                if v <= 0.0 {
                    return Err(Error::NonPositiveStationary { node });
                }
            }
            return Ok(PerronVector {
                pi,
                iterations_used: iteration,
                residual: final_residual,
            });
        }
    }
    Err(Error::PowerIterationDiverged { max_iter, residual })
}

/// The divergence-form Laplacian `T = B diag(P_e) B^T`, stored sparsely.
///
/// `T` is symmetric positive semi-definite; self-loop edges contribute
/// nothing because their incidence columns are zero. The weighted variant
/// (rows scaled by the stationary distribution) shares this type but is not
/// symmetric in general.
#[derive(Debug, Clone, PartialEq)]
pub struct DigraphLaplacian {
    matrix: CsrMatrix,
}

impl DigraphLaplacian {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn csr(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn nnz(&self) -> usize {
        self.matrix.nnz()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.matrix.to_dense()
    }
}

/// Assembles `T = B diag(P_e) B^T` directly from the adjacency structure,
/// without materializing incidence-matrix products.
///
/// Entries are accumulated in ascending-neighbor order per row, so the output
/// depends only on the edge set, never on edge indexing.
pub fn digraph_laplacian(g: &DiGraph, p: &StochasticMatrix) -> Result<DigraphLaplacian> {
    let n = g.num_nodes();
    if p.n() != n {
        return Err(Error::DimensionMismatch {
            context: format!("transition matrix is {}x{} for {n}-node graph", p.n(), p.n()),
        });
    }
    for i in 0..n {
        let (cols, _) = p.row(i);
        if cols != g.out_neighbors(i) {
            return Err(Error::PatternMismatch { node: i });
        }
    }
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = Vec::new();
        // Diagonal: sum of incident non-self-loop edge probabilities, out
        // first then in, each group in ascending neighbor order.
        let mut diag = 0.0;
        for &j in g.out_neighbors(i) {
            if j != i {
                diag += p.prob(i, j);
            }
        }
        for &j in g.in_neighbors(i) {
            if j != i {
                diag += p.prob(j, i);
            }
        }
        if diag != 0.0 {
            row.push((i, diag));
        }
        // Off-diagonal: -(P_ij + P_ji) over the union of out/in neighbors.
        let out = g.out_neighbors(i);
        let inn = g.in_neighbors(i);
        let (mut a, mut b) = (0, 0);
        while a < out.len() || b < inn.len() {
            let j = match (out.get(a), inn.get(b)) {
                (Some(&x), Some(&y)) => x.min(y),
                (Some(&x), None) => x,
                (None, Some(&y)) => y,
                (None, None) => unreachable!(),
            };
            while a < out.len() && out[a] == j {
                a += 1;
            }
            while b < inn.len() && inn[b] == j {
                b += 1;
            }
            if j == i {
                continue;
            }
            let v = -(p.prob(i, j) + p.prob(j, i));
            row.push((j, v));
        }
        rows.push(row);
    }
    Ok(DigraphLaplacian {
        matrix: CsrMatrix::from_rows(n, n, rows),
    })
}

/// Stationary-weighted Laplacian: row `i` of `T` scaled by `pi_i`.
pub fn weighted_laplacian(t: &DigraphLaplacian, pi: &PerronVector) -> DigraphLaplacian {
    let mut matrix = t.matrix.clone();
    matrix.scale_rows(&pi.pi);
    DigraphLaplacian { matrix }
}

/// Rank-`q` factorization `M ~ U diag(sigma) V^T` with orthonormal columns.
///
/// When produced by [`pseudoinverse_factors`], the represented operator is
/// the Moore-Penrose pseudoinverse `V diag(1/sigma) U^T`.
#[derive(Debug, Clone)]
pub struct LowRankFactors {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl LowRankFactors {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `(U diag(sigma) V^T)_{ij}`.
    pub fn approx_entry(&self, i: usize, j: usize) -> f64 {
        (0..self.rank())
            .map(|k| self.u[(i, k)] * self.sigma[k] * self.v[(j, k)])
            .sum()
    }

    pub fn approx_dense(&self) -> DMatrix<f64> {
        let mut scaled = self.v.clone();
        for k in 0..self.rank() {
            scaled.column_mut(k).scale_mut(self.sigma[k]);
        }
        &self.u * scaled.transpose()
    }

    /// `(V diag(1/sigma) U^T)_{ij}`: entry of the implied pseudoinverse.
    pub fn pinv_entry(&self, i: usize, j: usize) -> f64 {
        (0..self.rank())
            .map(|k| self.v[(i, k)] * self.u[(j, k)] / self.sigma[k])
            .sum()
    }

    pub fn pinv_dense(&self) -> DMatrix<f64> {
        let mut scaled = self.u.clone();
        for k in 0..self.rank() {
            scaled.column_mut(k).scale_mut(1.0 / self.sigma[k]);
        }
        &self.v * scaled.transpose()
    }
}

/// Randomized truncated SVD (Gaussian sketch, QR range finder with two
/// subspace iterations, exact SVD of the projected matrix).
///
/// Deterministic for a fixed seed. Cost is proportional to `q` times the
/// nonzero count of `m`.
pub fn randomized_truncated_svd(
    m: &CsrMatrix,
    q: usize,
    oversample: usize,
    seed: u64,
) -> Result<LowRankFactors> {
    let min_dim = m.nrows().min(m.ncols());
    if q == 0 || q + oversample > min_dim {
        return Err(Error::RankOutOfRange { q, n: min_dim });
    }
    let sketch = q + oversample;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = DMatrix::from_fn(m.ncols(), sketch, |_, _| {
        StandardNormal.sample(&mut rng)
    });

    let mut q_basis = orthonormalize(m.mul_dense(&omega));
    for _ in 0..SUBSPACE_ITERS {
        let z = orthonormalize(m.tr_mul_dense(&q_basis));
        q_basis = orthonormalize(m.mul_dense(&z));
    }

    // B = Q^T M, computed as (M^T Q)^T to reuse the sparse product.
    let b = m.tr_mul_dense(&q_basis).transpose();
    let svd = b.svd(true, true);
    let u_small = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let u_full = &q_basis * u_small;

    let u = u_full.columns(0, q).into_owned();
    let sigma = DVector::from_iterator(q, svd.singular_values.iter().take(q).copied());
    let v = v_t.rows(0, q).transpose().into_owned();
    Ok(LowRankFactors { u, sigma, v })
}

fn orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

/// Truncated factors of the Laplacian pseudoinverse.
///
/// Runs the randomized SVD at rank `q` (oversampling clamped to fit), then
/// drops singular values below `SV_CUTOFF_REL * sigma_max`; the Laplacian's
/// kernel would otherwise leak noise-level reciprocals into every commute
/// estimate.
pub fn pseudoinverse_factors(t: &DigraphLaplacian, q: usize, seed: u64) -> Result<LowRankFactors> {
    let n = t.n();
    if q == 0 || q > n {
        return Err(Error::RankOutOfRange { q, n });
    }
    let oversample = DEFAULT_OVERSAMPLE.min(n - q);
    let factors = randomized_truncated_svd(&t.matrix, q, oversample, seed)?;
    let sigma_max = factors.sigma[0];
    if !(sigma_max > 0.0) {
        return Err(Error::DegenerateOperator);
    }
    let cutoff = SV_CUTOFF_REL * sigma_max;
    let kept = factors.sigma.iter().take_while(|&&s| s >= cutoff).count();
    if kept == 0 {
        return Err(Error::DegenerateOperator);
    }
    Ok(LowRankFactors {
        u: factors.u.columns(0, kept).into_owned(),
        sigma: DVector::from_iterator(kept, factors.sigma.iter().take(kept).copied()),
        v: factors.v.columns(0, kept).into_owned(),
    })
}

/// Dense SVD pseudoinverse with the same relative cutoff as the low-rank
/// path. Small-`n` use only.
pub fn dense_pseudoinverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let sigma_max = svd.singular_values.max();
    if !(sigma_max > 0.0) {
        return Err(Error::DegenerateOperator);
    }
    let cutoff = SV_CUTOFF_REL * sigma_max;
    let r = svd.singular_values.len();
    let mut pinv = DMatrix::zeros(m.ncols(), m.nrows());
    for k in 0..r {
        let s = svd.singular_values[k];
        if s < cutoff {
            continue;
        }
        let vk = v_t.row(k).transpose();
        let uk = u.column(k);
        pinv += (vk * uk.transpose()) / s;
    }
    Ok(pinv)
}
