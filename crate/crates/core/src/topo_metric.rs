//! Five-factor class distance.
//!
//! `D = w1*crossing + w2*family + w3*type + w4*components + w5*derivation`,
//! with fixed, perturbed, softmax-parameterised, or permuted weightings.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{random_permutation, substream};
use crate::taxonomy::Taxonomy;

pub const N_FACTORS: usize = 5;

pub const FACTOR_NAMES: [&str; N_FACTORS] =
    ["crossing", "family", "type", "components", "derivation"];

/// Tolerance on the weight simplex constraint.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;
pub const USER_WEIGHT_TOL: f64 = 1e-6;

/// FSK-FMB distance as printed in the published discussion of confused pairs.
/// Evaluating the formula on the published tables gives 0.1875 instead.
pub const FSK_FMB_REPORTED: f64 = 0.150;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorWeights([f64; N_FACTORS]);

impl FactorWeights {
    pub const DEFAULT: FactorWeights = FactorWeights([0.25, 0.25, 0.15, 0.10, 0.25]);
    pub const UNIFORM: FactorWeights = FactorWeights([0.2; N_FACTORS]);

    pub fn new(w: [f64; N_FACTORS]) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(format!("weights must be nonnegative, got {w:?}")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidArgument(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Self(w))
    }

    /// Divides by the sum. Fails on an all-zero or negative vector.
    pub fn normalized(w: [f64; N_FACTORS]) -> Result<Self> {
        let sum: f64 = w.iter().sum();
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || sum <= 0.0 {
            return Err(Error::InvalidArgument(format!("cannot normalise weights {w:?}")));
        }
        let mut out = w;
        out.iter_mut().for_each(|v| *v /= sum);
        Ok(Self(out))
    }

    /// Accepts user-supplied weights summing to 1 within [`USER_WEIGHT_TOL`]
    /// and renormalises them exactly.
    pub fn from_user(w: [f64; N_FACTORS]) -> Result<Self> {
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > USER_WEIGHT_TOL {
            return Err(Error::InvalidArgument(format!(
                "weights sum to {sum}, expected 1 within {USER_WEIGHT_TOL}"
            )));
        }
        Self::normalized(w)
    }

    pub fn as_array(&self) -> &[f64; N_FACTORS] {
        &self.0
    }
}

impl Default for FactorWeights {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightLogits(pub [f64; N_FACTORS]);

/// Precomputed per-factor matrices, in factor order.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrices {
    labels: Vec<String>,
    factors: [Matrix; N_FACTORS],
}

impl FactorMatrices {
    pub fn new(labels: Vec<String>, factors: [Matrix; N_FACTORS]) -> Result<Self> {
        let k = labels.len();
        for (f, m) in factors.iter().enumerate() {
            if m.shape() != (k, k) || !m.is_symmetric(0.0) || !m.has_zero_diagonal() {
                return Err(Error::DimensionMismatch(format!(
                    "factor {} must be a symmetric {k}x{k} matrix with zero diagonal",
                    FACTOR_NAMES[f]
                )));
            }
        }
        Ok(Self { labels, factors })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn factor(&self, f: usize) -> &Matrix {
        &self.factors[f]
    }

    pub fn factors(&self) -> &[Matrix; N_FACTORS] {
        &self.factors
    }
}

/// Symmetric, zero-diagonal, nonnegative matrix with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    labels: Vec<String>,
    values: Matrix,
}

impl DistanceMatrix {
    pub const SYMMETRY_TOL: f64 = 1e-9;

    pub fn new(labels: Vec<String>, values: Matrix) -> Result<Self> {
        let k = labels.len();
        if values.shape() != (k, k) {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for a {}x{} matrix",
                k,
                values.rows(),
                values.cols()
            )));
        }
        if values.as_slice().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("distances must be finite and nonnegative".into()));
        }
        if !values.has_zero_diagonal() {
            return Err(Error::InvalidArgument("distance matrix diagonal must be zero".into()));
        }
        if !values.is_symmetric(Self::SYMMETRY_TOL) {
            return Err(Error::InvalidArgument("distance matrix is not symmetric".into()));
        }
        Ok(Self { labels, values })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == code)
    }

    pub fn lookup(&self, a: &str, b: &str) -> Result<f64> {
        let i = self.index_of(a).ok_or_else(|| Error::UnknownCode(a.to_string()))?;
        let j = self.index_of(b).ok_or_else(|| Error::UnknownCode(b.to_string()))?;
        Ok(self.values[(i, j)])
    }

    pub fn upper_triangle(&self) -> Vec<f64> {
        self.values.upper_triangle()
    }

    /// Sub-matrix on the given codes, in the given order.
    pub fn restrict(&self, codes: &[String]) -> Result<Self> {
        let idx = codes
            .iter()
            .map(|c| self.index_of(c).ok_or_else(|| Error::UnknownCode(c.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            labels: codes.to_vec(),
            values: self.values.submatrix(&idx),
        })
    }

    pub fn into_parts(self) -> (Vec<String>, Matrix) {
        (self.labels, self.values)
    }
}

/// Factor matrices derived from class attributes, or taken from the
/// taxonomy's overrides where supplied.
pub fn factor_matrices(tax: &Taxonomy) -> FactorMatrices {
    let cls = tax.classes();
    let k = cls.len();
    let divisor = tax.crossing_divisor();
    let derived = |f: &dyn Fn(usize, usize) -> f64| {
        Matrix::from_fn(k, k, |i, j| if i == j { 0.0 } else { f(i, j) })
    };
    let or_override = |m: &Option<Vec<Vec<f64>>>, fallback: Matrix| match m {
        Some(rows) => Matrix::from_rows(rows).expect("validated on construction"),
        None => fallback,
    };
    let ov = tax.overrides();
    let crossing = or_override(
        &ov.crossing,
        derived(&|i, j| f64::from(cls[i].c_vis.abs_diff(cls[j].c_vis)) / divisor),
    );
    let family = or_override(
        &ov.family,
        derived(&|i, j| if cls[i].family == cls[j].family { 0.0 } else { 1.0 }),
    );
    let knot_type = or_override(
        &ov.knot_type,
        derived(&|i, j| if cls[i].knot_type == cls[j].knot_type { 0.0 } else { 0.5 }),
    );
    let components = or_override(
        &ov.components,
        derived(&|i, j| f64::from(cls[i].n_comp.abs_diff(cls[j].n_comp))),
    );
    FactorMatrices {
        labels: tax.codes(),
        factors: [crossing, family, knot_type, components, tax.delta5().clone()],
    }
}

fn weighted_sum(fm: &FactorMatrices, w: &[f64; N_FACTORS]) -> Matrix {
    let k = fm.len();
    Matrix::from_fn(k, k, |i, j| {
        fm.factors.iter().zip(w).map(|(m, wf)| wf * m[(i, j)]).sum()
    })
}

pub fn topo_distance(fm: &FactorMatrices, w: &FactorWeights) -> DistanceMatrix {
    DistanceMatrix {
        labels: fm.labels.clone(),
        values: weighted_sum(fm, &w.0),
    }
}

/// Softmax with max-subtraction.
pub fn softmax_weights(logits: &WeightLogits) -> FactorWeights {
    let max = logits.0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w = logits.0.map(|l| (l - max).exp());
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    FactorWeights(w)
}

/// Distance under `softmax(logits)` and its Jacobian with respect to each logit.
///
/// `dD/dl_f = sum_j Delta_j * w_j * ([j == f] - w_f) = w_f * (Delta_f - D)`.
pub fn topo_distance_grad_logits(
    fm: &FactorMatrices,
    logits: &WeightLogits,
) -> (DistanceMatrix, [Matrix; N_FACTORS]) {
    let w = softmax_weights(logits);
    let d = topo_distance(fm, &w);
    let k = fm.len();
    let grads = std::array::from_fn(|f| {
        let wf = w.0[f];
        Matrix::from_fn(k, k, |i, j| wf * (fm.factors[f][(i, j)] - d.values[(i, j)]))
    });
    (d, grads)
}

/// Multiplicative Monte Carlo perturbation: each component is scaled by
/// `u ~ U[1 - amplitude, 1 + amplitude]` and the vector is renormalised.
pub fn perturb_weights(
    w: &FactorWeights,
    amplitude: f64,
    seed: u64,
    n: usize,
) -> Result<Vec<FactorWeights>> {
    if !(amplitude > 0.0 && amplitude <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "perturbation amplitude must lie in (0, 1], got {amplitude}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one perturbed vector".into()));
    }
    (0..n)
        .map(|i| {
            let mut rng = substream(seed, i as u64);
            let raw = w.0.map(|wf| wf * rng.random_range((1.0 - amplitude)..=(1.0 + amplitude)));
            FactorWeights::normalized(raw)
        })
        .collect()
}

/// Applies one seeded uniform permutation to rows and columns together.
/// Labels stay in place, so the values no longer belong to their classes.
pub fn permute_distance(d: &DistanceMatrix, seed: u64) -> DistanceMatrix {
    let perm = random_permutation(&mut substream(seed, 0), d.len());
    permute_distance_with(d, &perm)
}

pub fn permute_distance_with(d: &DistanceMatrix, perm: &[usize]) -> DistanceMatrix {
    DistanceMatrix {
        labels: d.labels.clone(),
        values: d.values.permuted(perm),
    }
}
