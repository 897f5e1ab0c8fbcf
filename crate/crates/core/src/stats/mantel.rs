//! Mantel permutation test.
//!
//! The second matrix is permuted jointly on rows and columns; the statistic is
//! the correlation over the `K(K-1)/2` upper-triangle pairs. Permutation `j`
//! draws from substream `(seed, j)`, so the p-value does not depend on the
//! rayon pool size.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::correlation::{average_ranks, pearson};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{random_permutation, substream};

pub const DEFAULT_PERMUTATIONS: usize = 9_999;

/// Permuted statistics within this distance of `|r_obs|` count as ties.
/// Permutations that only relabel automorphic entries reproduce `r_obs` up to
/// summation-order rounding.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMethod {
    #[default]
    Spearman,
    Pearson,
}

impl std::str::FromStr for CorrelationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spearman" => Ok(Self::Spearman),
            "pearson" => Ok(Self::Pearson),
            other => Err(Error::InvalidArgument(format!("unknown correlation method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MantelResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_permutations: usize,
    pub method: CorrelationMethod,
}

/// Fixed part of the test: centred upper triangle of A and the centred,
/// possibly rank-transformed, full B.
struct Prepared {
    k: usize,
    a: Vec<f64>,
    b: Matrix,
    norm: f64,
}

impl Prepared {
    fn new(a: &Matrix, b: &Matrix, method: CorrelationMethod) -> Result<Self> {
        let k = a.rows();
        if !a.is_square() || !b.is_square() || b.rows() != k {
            return Err(Error::DimensionMismatch(format!(
                "Mantel inputs are {}x{} and {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            )));
        }
        if k < 3 {
            return Err(Error::InvalidArgument(format!("Mantel test needs K >= 3, got {k}")));
        }
        for (name, m) in [("first", a), ("second", b)] {
            if !m.is_symmetric(1e-9) || !m.has_zero_diagonal() {
                return Err(Error::InvalidArgument(format!(
                    "{name} Mantel matrix must be symmetric with zero diagonal"
                )));
            }
        }
        let ua = a.upper_triangle();
        let ub = b.upper_triangle();
        // Rejects constant inputs with the same error the plain correlation uses.
        pearson(&ua, &ub)?;
        let (ua, ub) = match method {
            CorrelationMethod::Pearson => (ua, ub),
            CorrelationMethod::Spearman => (average_ranks(&ua), average_ranks(&ub)),
        };
        let centre = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| x - m).collect::<Vec<_>>()
        };
        let ca = centre(&ua);
        let cb = centre(&ub);
        let norm = ca.iter().map(|x| x * x).sum::<f64>().sqrt()
            * cb.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut full_b = Matrix::zeros(k, k);
        let mut idx = 0;
        for i in 0..k {
            for j in (i + 1)..k {
                full_b[(i, j)] = cb[idx];
                full_b[(j, i)] = cb[idx];
                idx += 1;
            }
        }
        Ok(Self {
            k,
            a: ca,
            b: full_b,
            norm,
        })
    }

    /// Correlation with B permuted by `perm`. Permuting B only reorders its
    /// upper-triangle multiset, so the centring and norm stay valid.
    fn statistic(&self, perm: &[usize]) -> f64 {
        let mut s = 0.0;
        let mut idx = 0;
        for i in 0..self.k {
            let pi = perm[i];
            for &pj in &perm[(i + 1)..self.k] {
                s += self.a[idx] * self.b[(pi, pj)];
                idx += 1;
            }
        }
        (s / self.norm).clamp(-1.0, 1.0)
    }

    fn permuted_statistic(&self, seed: u64, j: usize) -> f64 {
        let perm = random_permutation(&mut substream(seed, j as u64), self.k);
        self.statistic(&perm)
    }
}

pub fn mantel_test(
    a: &Matrix,
    b: &Matrix,
    n_perm: usize,
    seed: u64,
    method: CorrelationMethod,
) -> Result<MantelResult> {
    if n_perm == 0 {
        return Err(Error::InvalidArgument("need at least one permutation".into()));
    }
    let prep = Prepared::new(a, b, method)?;
    let identity: Vec<usize> = (0..prep.k).collect();
    let observed = prep.statistic(&identity);
    let threshold = observed.abs() - TIE_TOL;
    let extreme = (0..n_perm)
        .into_par_iter()
        .filter(|&j| prep.permuted_statistic(seed, j).abs() >= threshold)
        .count();
    Ok(MantelResult {
        statistic: observed,
        p_value: (1 + extreme) as f64 / (n_perm + 1) as f64,
        n_permutations: n_perm,
        method,
    })
}

/// The permuted statistics `r_1..r_n` that [`mantel_test`] compares against.
pub fn mantel_null_distribution(
    a: &Matrix,
    b: &Matrix,
    n_perm: usize,
    seed: u64,
    method: CorrelationMethod,
) -> Result<Vec<f64>> {
    let prep = Prepared::new(a, b, method)?;
    Ok((0..n_perm)
        .into_par_iter()
        .map(|j| prep.permuted_statistic(seed, j))
        .collect())
}
