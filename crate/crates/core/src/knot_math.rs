//! Classical invariants for the classes that are genuine mathematical knots,
//! connected sums, and an invariant-based distance used to sanity-check the
//! heuristic metric.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::spearman;
use crate::topo_metric::DistanceMatrix;

/// Published rank correlation between the invariant-based and heuristic
/// distances over six pairs. A soft reference only: the normalisation behind
/// it is not pinned down.
pub const REFERENCE_RHO: f64 = 0.49;

pub const CHIRALITY_CAVEAT: &str = "signatures use plain additivity with 3_1 at -2; \
the reef knot is classically 3_1 # mirror(3_1) with signature 0";

pub const NORMALIZATION_NOTE: &str =
    "each component is min-max normalised over the active pair set; a constant component contributes 0";

/// Laurent polynomial with exponents `-h..=h`, `h = (len - 1) / 2`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SymmetricPoly(Vec<i64>);

impl SymmetricPoly {
    pub fn new(coeffs: Vec<i64>) -> Result<Self> {
        if coeffs.is_empty() || coeffs.len().is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "symmetric polynomial needs an odd number of coefficients, got {}",
                coeffs.len()
            )));
        }
        Ok(Self(coeffs))
    }

    pub fn coeffs(&self) -> &[i64] {
        &self.0
    }

    pub fn half_span(&self) -> usize {
        (self.0.len() - 1) / 2
    }

    pub fn is_palindromic(&self) -> bool {
        self.0.iter().eq(self.0.iter().rev())
    }

    pub fn eval_minus_one(&self) -> i64 {
        let h = self.half_span();
        self.0
            .iter()
            .enumerate()
            .map(|(k, c)| if k.abs_diff(h) % 2 == 0 { *c } else { -c })
            .sum()
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = vec![0i64; self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Self(out)
    }

    /// Coefficients centred on `t^0` and zero-padded to exponents `-h..=h`.
    pub fn padded(&self, h: usize) -> Vec<f64> {
        let pad = h.saturating_sub(self.half_span());
        let mut v = vec![0.0; pad];
        v.extend(self.0.iter().map(|&c| c as f64));
        v.extend(std::iter::repeat_n(0.0, pad));
        v
    }
}

impl fmt::Display for SymmetricPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let h = self.half_span() as i64;
        let mut first = true;
        for (k, &c) in self.0.iter().enumerate().rev() {
            if c == 0 {
                continue;
            }
            let e = k as i64 - h;
            let sign = if c < 0 { "-" } else if first { "" } else { "+" };
            let mag = c.abs();
            let body = match (e, mag) {
                (0, m) => m.to_string(),
                (1, 1) => "t".to_string(),
                (1, m) => format!("{m}t"),
                (e, 1) => format!("t^{e}"),
                (e, m) => format!("{m}t^{e}"),
            };
            if first {
                write!(f, "{sign}{body}")?;
            } else {
                write!(f, " {sign} {body}")?;
            }
            first = false;
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KnotInvariants {
    pub crossing: u32,
    pub genus: u32,
    pub signature: i32,
    pub determinant: u64,
    pub alexander: SymmetricPoly,
}

impl KnotInvariants {
    /// `det = |Alexander(-1)| > 0` and a palindromic Alexander polynomial.
    pub fn is_consistent(&self) -> bool {
        self.determinant > 0
            && self.alexander.is_palindromic()
            && self.alexander.eval_minus_one().unsigned_abs() == self.determinant
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrimeKnot {
    Trefoil,
    FigureEight,
}

pub fn prime_invariants(knot: PrimeKnot) -> KnotInvariants {
    match knot {
        PrimeKnot::Trefoil => KnotInvariants {
            crossing: 3,
            genus: 1,
            signature: -2,
            determinant: 3,
            alexander: SymmetricPoly(vec![1, -1, 1]),
        },
        PrimeKnot::FigureEight => KnotInvariants {
            crossing: 4,
            genus: 1,
            signature: 0,
            determinant: 5,
            alexander: SymmetricPoly(vec![-1, 3, -1]),
        },
    }
}

/// Additive crossing number, genus and signature; multiplicative determinant;
/// product of Alexander polynomials.
pub fn connect_sum(a: &KnotInvariants, b: &KnotInvariants) -> KnotInvariants {
    KnotInvariants {
        crossing: a.crossing + b.crossing,
        genus: a.genus + b.genus,
        signature: a.signature + b.signature,
        determinant: a.determinant * b.determinant,
        alexander: a.alexander.mul(&b.alexander),
    }
}

/// The five classes with formal counterparts, in catalog order.
pub fn default_assignments() -> Vec<(String, KnotInvariants)> {
    let t = prime_invariants(PrimeKnot::Trefoil);
    let e = prime_invariants(PrimeKnot::FigureEight);
    vec![
        ("OHK".into(), t.clone()),
        ("F8K".into(), e.clone()),
        ("RK".into(), connect_sum(&t, &t)),
        ("FSK".into(), connect_sum(&t, &t)),
        ("FMB".into(), connect_sum(&e, &e)),
    ]
}

/// Keeps the first code for each distinct invariant set.
pub fn distinct_assignments(assignments: &[(String, KnotInvariants)]) -> Vec<(String, KnotInvariants)> {
    let mut out: Vec<(String, KnotInvariants)> = Vec::new();
    for (code, inv) in assignments {
        if !out.iter().any(|(_, seen)| seen == inv) {
            out.push((code.clone(), inv.clone()));
        }
    }
    out
}

pub const COMPONENT_NAMES: [&str; 5] = ["crossing", "genus", "signature", "determinant", "alexander_l2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantPair {
    pub a: String,
    pub b: String,
    /// Raw, unnormalised differences in [`COMPONENT_NAMES`] order.
    pub raw: [f64; 5],
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantDistance {
    pub pairs: Vec<InvariantPair>,
    /// Components that were constant over the pair set and contributed 0.
    pub constant_components: Vec<String>,
}

impl InvariantDistance {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        if a == b {
            return Some(0.0);
        }
        self.pairs
            .iter()
            .find(|p| (p.a == a && p.b == b) || (p.a == b && p.b == a))
            .map(|p| p.distance)
    }
}

fn raw_components(x: &KnotInvariants, y: &KnotInvariants) -> [f64; 5] {
    let h = x.alexander.half_span().max(y.alexander.half_span());
    let alex = x
        .alexander
        .padded(h)
        .iter()
        .zip(y.alexander.padded(h))
        .map(|(p, q)| (p - q).powi(2))
        .sum::<f64>()
        .sqrt();
    [
        f64::from(x.crossing.abs_diff(y.crossing)),
        f64::from(x.genus.abs_diff(y.genus)),
        f64::from(x.signature.abs_diff(y.signature)),
        x.determinant.abs_diff(y.determinant) as f64,
        alex,
    ]
}

/// Equal-weight mean of five min-max normalised invariant differences over
/// every unordered pair of assigned codes.
pub fn invariant_distance(assignments: &[(String, KnotInvariants)]) -> Result<InvariantDistance> {
    if assignments.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "invariant distance needs at least 2 codes, got {}",
            assignments.len()
        )));
    }
    let mut pairs = Vec::new();
    for (i, (a, x)) in assignments.iter().enumerate() {
        for (b, y) in &assignments[i + 1..] {
            if a == b {
                return Err(Error::DuplicateCode(a.clone()));
            }
            pairs.push(InvariantPair {
                a: a.clone(),
                b: b.clone(),
                raw: raw_components(x, y),
                distance: 0.0,
            });
        }
    }
    let mut constant_components = Vec::new();
    let mut ranges = [(0.0, 0.0); 5];
    for (f, range) in ranges.iter_mut().enumerate() {
        let lo = pairs.iter().map(|p| p.raw[f]).fold(f64::INFINITY, f64::min);
        let hi = pairs.iter().map(|p| p.raw[f]).fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            constant_components.push(COMPONENT_NAMES[f].to_string());
        }
        *range = (lo, hi);
    }
    for p in &mut pairs {
        let sum: f64 = (0..5)
            .map(|f| {
                let (lo, hi) = ranges[f];
                if hi > lo {
                    (p.raw[f] - lo) / (hi - lo)
                } else {
                    0.0
                }
            })
            .sum();
        p.distance = sum / 5.0;
    }
    Ok(InvariantDistance {
        pairs,
        constant_components,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub a: String,
    pub b: String,
    pub invariant: f64,
    pub heuristic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicValidation {
    pub spearman: f64,
    pub reference_rho: f64,
    pub pairs: Vec<PairComparison>,
}

/// Rank agreement between invariant and heuristic distances over the pairs
/// whose codes both appear in `d_topo`.
pub fn validate_heuristic(dist_inv: &InvariantDistance, d_topo: &DistanceMatrix) -> Result<HeuristicValidation> {
    let pairs: Vec<PairComparison> = dist_inv
        .pairs
        .iter()
        .filter_map(|p| {
            d_topo.lookup(&p.a, &p.b).ok().map(|h| PairComparison {
                a: p.a.clone(),
                b: p.b.clone(),
                invariant: p.distance,
                heuristic: h,
            })
        })
        .collect();
    if pairs.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 shared pairs, found {}",
            pairs.len()
        )));
    }
    let inv: Vec<f64> = pairs.iter().map(|p| p.invariant).collect();
    let heu: Vec<f64> = pairs.iter().map(|p| p.heuristic).collect();
    Ok(HeuristicValidation {
        spearman: spearman(&inv, &heu)?,
        reference_rho: REFERENCE_RHO,
        pairs,
    })
}
