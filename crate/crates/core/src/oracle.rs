//! Independent ground-truth backends: the series and dense fundamental
//! matrices, hitting/commute times derived from them, Monte Carlo
//! first-passage simulation, and the teleporting-transition alternative.
//! These exist to validate the Laplacian-based path, not to scale.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::commute::CommuteMatrices;
use crate::error::{Error, Result};
use crate::graph::StochasticMatrix;
use crate::sparse::CsrMatrix;
use crate::spectral::PerronVector;

/// Dense oracle paths are refused beyond this size; cubic solves are for
/// validation scale only.
pub const ORACLE_CAP: usize = 500;

/// 99% two-sided normal quantile.
const Z_99: f64 = 2.5758293035489004;

fn check_cap(n: usize) -> Result<()> {
    if n > ORACLE_CAP {
        return Err(Error::DenseCapExceeded { n, cap: ORACLE_CAP });
    }
    Ok(())
}

fn check_pi(pi: &PerronVector) -> Result<()> {
    for (node, &v) in pi.pi.iter().enumerate() {
        if v <= 0.0 {
            return Err(Error::NonPositiveStationary { node });
        }
    }
    Ok(())
}

/// Fundamental matrix by direct linear algebra:
/// `Z = (I - P + J Pi)^{-1} - J Pi`.
pub fn dense_fundamental(p: &StochasticMatrix, pi: &PerronVector) -> Result<DMatrix<f64>> {
    let n = p.n();
    check_cap(n)?;
    check_pi(pi)?;
    // (J Pi)[i][j] = pi_j for every row i.
    let j_pi = DMatrix::from_fn(n, n, |_, j| pi.pi[j]);
    let system = DMatrix::identity(n, n) - p.to_dense() + &j_pi;
    let inv = system.try_inverse().ok_or(Error::SingularSystem)?;
    Ok(inv - j_pi)
}

/// Truncated series `sum_{t=0}^{t_max} (P^t - e pi^T)`; converges to
/// [`dense_fundamental`] for irreducible aperiodic chains.
pub fn series_fundamental(
    p: &StochasticMatrix,
    pi: &PerronVector,
    t_max: usize,
) -> Result<DMatrix<f64>> {
    let n = p.n();
    check_cap(n)?;
    check_pi(pi)?;
    let e_pi = DMatrix::from_fn(n, n, |_, j| pi.pi[j]);
    let p_dense = p.to_dense();
    let mut power = DMatrix::identity(n, n);
    let mut acc = &power - &e_pi;
    for _ in 1..=t_max {
        power *= &p_dense;
        acc += &power - &e_pi;
    }
    Ok(acc)
}

/// Hitting times `h(i, j) = (Z_jj - Z_ij) / pi_j` from a fundamental matrix,
/// and commute times `c = h(i, j) + h(j, i)`.
pub fn hitting_from_z(z: &DMatrix<f64>, pi: &PerronVector) -> Result<CommuteMatrices> {
    check_pi(pi)?;
    let n = pi.n();
    if z.nrows() != n || z.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: format!("Z is {}x{}, pi has length {n}", z.nrows(), z.ncols()),
        });
    }
    let mut hitting = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                hitting[(i, j)] = (z[(j, j)] - z[(i, j)]) / pi.pi[j];
            }
        }
    }
    Ok(CommuteMatrices::from_hitting(hitting))
}

/// Seeded Monte Carlo estimate of a hitting time.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    /// Sample mean of first-passage steps over completed walks.
    pub estimate: f64,
    /// 99% confidence half-width of the mean.
    pub half_width: f64,
    pub walks: u64,
    /// Walks that hit `max_steps` without reaching the target; counted and
    /// surfaced, never silently dropped.
    pub censored: u64,
    pub seed: u64,
}

/// Simulates `walks` independent random walks from `src` until first arrival
/// at `dst`, each on its own RNG stream derived from `(seed, walk index)`,
/// so the result is independent of thread scheduling.
pub fn monte_carlo_hitting(
    p: &StochasticMatrix,
    src: usize,
    dst: usize,
    walks: u64,
    max_steps: u64,
    seed: u64,
) -> Result<McEstimate> {
    let n = p.n();
    for node in [src, dst] {
        if node >= n {
            return Err(Error::NodeOutOfRange { node, num_nodes: n });
        }
    }
    if walks == 0 {
        return Err(Error::InvalidParam("walks must be >= 1".into()));
    }
    if src == dst {
        return Ok(McEstimate {
            estimate: 0.0,
            half_width: 0.0,
            walks,
            censored: 0,
            seed,
        });
    }

    // Per-walk accumulation in integers keeps the reduction exact and
    // order-independent under parallel scheduling.
    let (sum, sum_sq, censored) = (0..walks)
        .into_par_iter()
        .map(|walk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(walk);
            let mut node = src;
            let mut steps: u64 = 0;
            while steps < max_steps {
                let (cols, vals) = p.row(node);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut next = cols[cols.len() - 1];
                for (&j, &v) in cols.iter().zip(vals) {
                    acc += v;
                    if u < acc {
                        next = j;
                        break;
                    }
                }
                node = next;
                steps += 1;
                if node == dst {
                    return (steps as u128, (steps as u128) * (steps as u128), 0u64);
                }
            }
            (0u128, 0u128, 1u64)
        })
        .reduce(
            || (0u128, 0u128, 0u64),
            |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2),
        );

    let completed = walks - censored;
    if completed == 0 {
        return Err(Error::Unreachable {
            src,
            dst,
            walks,
            max_steps,
        });
    }
    let m = completed as f64;
    let mean = sum as f64 / m;
    let half_width = if completed > 1 {
        let var = (sum_sq as f64 - m * mean * mean) / (m - 1.0);
        Z_99 * (var.max(0.0) / m).sqrt()
    } else {
        0.0
    };
    Ok(McEstimate {
        estimate: mean,
        half_width,
        walks,
        censored,
        seed,
    })
}

/// Teleporting transition matrix `gamma P + (1 - gamma) e e^T / N`,
/// materialized densely (validation scale only). Every entry is at least
/// `(1 - gamma) / N`, so the chain is irreducible and aperiodic for
/// `gamma < 1`.
pub fn ppr_transition(p: &StochasticMatrix, gamma: f64) -> Result<StochasticMatrix> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidGamma { gamma });
    }
    if gamma == 1.0 {
        return Ok(p.clone());
    }
    let n = p.n();
    check_cap(n)?;
    let uniform = (1.0 - gamma) / n as f64;
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mut row: Vec<(usize, f64)> = (0..n).map(|j| (j, uniform)).collect();
        let (cols, vals) = p.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            row[j].1 += gamma * v;
        }
        rows.push(row);
    }
    StochasticMatrix::from_csr(CsrMatrix::from_rows(n, n, rows))
}

/// Ground-truth report produced by one of the oracle backends.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleReport {
    Series {
        pairs: Vec<(usize, usize)>,
        values: Vec<f64>,
        t_max: usize,
    },
    Dense {
        pairs: Vec<(usize, usize)>,
        values: Vec<f64>,
    },
    MonteCarlo {
        pairs: Vec<(usize, usize)>,
        estimates: Vec<McEstimate>,
    },
}

impl OracleReport {
    pub fn method_tag(&self) -> &'static str {
        match self {
            OracleReport::Series { .. } => "series",
            OracleReport::Dense { .. } => "dense",
            OracleReport::MonteCarlo { .. } => "monte_carlo",
        }
    }
}
