//! Class catalog, structural-derivation penalties, and difficulty tiers.
//!
//! Class order in a [`Taxonomy`] fixes row/column indexing for every matrix
//! derived from it.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Divisor applied to crossing-number differences unless a document overrides it.
pub const DEFAULT_CROSSING_DIVISOR: f64 = 8.0;

/// Penalty for class pairs without a recorded structural relationship.
pub const DEFAULT_DERIVATION_PENALTY: f64 = 0.5;

macro_rules! label_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
        #[serde(from = "String", into = "String")]
        pub enum $name {
            $($variant,)+
            /// Free-form label for taxonomies outside the built-in catalog.
            Other(String),
        }

        impl $name {
            pub fn as_str(&self) -> &str {
                match self {
                    $($name::$variant => $text,)+
                    $name::Other(s) => s,
                }
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                match s.as_str() {
                    $($text => $name::$variant,)+
                    _ => $name::Other(s),
                }
            }
        }

        impl From<$name> for String {
            fn from(v: $name) -> String {
                v.as_str().to_string()
            }
        }

        impl FromStr for $name {
            type Err = std::convert::Infallible;

            fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
                Ok(s.to_string().into())
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

label_enum! {
    /// Base knot type. Parenthetical designations such as `3_1` are not part of
    /// the label, so two `Prime` classes compare equal regardless of base knot.
    KnotType {
        Prime => "Prime",
        Slip => "Slip",
        Loop => "Loop",
        Hitch => "Hitch",
        Composite => "Composite",
    }
}

label_enum! {
    /// Functional family. Independent of [`KnotType`] even where the tokens coincide.
    Family {
        Stopper => "Stopper",
        Loop => "Loop",
        Hitch => "Hitch",
        Binding => "Binding",
        Bend => "Bend",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotClass {
    pub code: String,
    pub name: String,
    #[serde(rename = "type")]
    pub knot_type: KnotType,
    pub c_vis: u32,
    pub family: Family,
    pub n_comp: u32,
}

impl KnotClass {
    fn new(code: &str, name: &str, knot_type: KnotType, c_vis: u32, family: Family) -> Self {
        let n_comp = if knot_type == KnotType::Composite { 2 } else { 1 };
        Self {
            code: code.to_string(),
            name: name.to_string(),
            knot_type,
            c_vis,
            family,
            n_comp,
        }
    }
}

/// User-supplied factor matrices that replace the ones derived from class
/// attributes. Lets non-knot taxonomies reuse the five-factor machinery.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FactorOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crossing: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    #[serde(rename = "type")]
    pub knot_type: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<Vec<f64>>>,
}

impl FactorOverrides {
    fn is_empty(&self) -> bool {
        self.crossing.is_none()
            && self.family.is_none()
            && self.knot_type.is_none()
            && self.components.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    classes: Vec<KnotClass>,
    delta5: Matrix,
    crossing_divisor: f64,
    overrides: FactorOverrides,
}

/// On-disk taxonomy document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxonomyDocument {
    pub classes: Vec<KnotClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta5: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta5_default: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crossing_divisor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factors: Option<FactorOverrides>,
}

impl Taxonomy {
    /// Validating constructor.
    pub fn new(classes: Vec<KnotClass>, delta5: Matrix) -> Result<Self> {
        Self::with_options(classes, delta5, DEFAULT_CROSSING_DIVISOR, FactorOverrides::default())
    }

    pub fn with_options(
        classes: Vec<KnotClass>,
        delta5: Matrix,
        crossing_divisor: f64,
        overrides: FactorOverrides,
    ) -> Result<Self> {
        let k = classes.len();
        if k < 2 {
            return Err(Error::Taxonomy(format!("need at least 2 classes, got {k}")));
        }
        let mut seen = HashSet::new();
        for c in &classes {
            if c.code.is_empty() {
                return Err(Error::Taxonomy("empty class code".into()));
            }
            if !seen.insert(c.code.as_str()) {
                return Err(Error::DuplicateCode(c.code.clone()));
            }
            if c.n_comp == 0 {
                return Err(Error::Taxonomy(format!("class {}: n_comp must be >= 1", c.code)));
            }
            let composite = c.knot_type == KnotType::Composite;
            let known = !matches!(c.knot_type, KnotType::Other(_));
            if known && composite != (c.n_comp >= 2) {
                return Err(Error::Taxonomy(format!(
                    "class {}: type {} inconsistent with n_comp = {}",
                    c.code, c.knot_type, c.n_comp
                )));
            }
        }
        if !(crossing_divisor.is_finite() && crossing_divisor > 0.0) {
            return Err(Error::Taxonomy(format!(
                "crossing divisor must be positive, got {crossing_divisor}"
            )));
        }
        validate_factor("delta5", &delta5, k)?;
        for (name, m) in [
            ("factors.crossing", &overrides.crossing),
            ("factors.family", &overrides.family),
            ("factors.type", &overrides.knot_type),
            ("factors.components", &overrides.components),
        ] {
            if let Some(rows) = m {
                validate_factor(name, &Matrix::from_rows(rows)?, k)?;
            }
        }
        Ok(Self {
            classes,
            delta5,
            crossing_divisor,
            overrides,
        })
    }

    pub fn classes(&self) -> &[KnotClass] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn codes(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.code.clone()).collect()
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.code == code)
    }

    pub fn require_index(&self, code: &str) -> Result<usize> {
        self.index_of(code).ok_or_else(|| Error::UnknownCode(code.to_string()))
    }

    pub fn class(&self, code: &str) -> Option<&KnotClass> {
        self.classes.iter().find(|c| c.code == code)
    }

    pub fn delta5(&self) -> &Matrix {
        &self.delta5
    }

    /// Structural-derivation penalty between two codes.
    pub fn derivation_penalty(&self, a: &str, b: &str) -> Result<f64> {
        Ok(self.delta5[(self.require_index(a)?, self.require_index(b)?)])
    }

    pub fn crossing_divisor(&self) -> f64 {
        self.crossing_divisor
    }

    pub fn overrides(&self) -> &FactorOverrides {
        &self.overrides
    }

    pub fn to_document(&self) -> TaxonomyDocument {
        TaxonomyDocument {
            classes: self.classes.clone(),
            delta5: Some(self.delta5.to_rows()),
            delta5_default: None,
            crossing_divisor: Some(self.crossing_divisor),
            factors: (!self.overrides.is_empty()).then(|| self.overrides.clone()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("taxonomy serializes")
    }

    pub fn from_document(doc: TaxonomyDocument) -> Result<Self> {
        let k = doc.classes.len();
        let delta5 = match (doc.delta5, doc.delta5_default) {
            (Some(_), Some(_)) => {
                return Err(Error::Taxonomy(
                    "give either `delta5` or `delta5_default`, not both".into(),
                ))
            }
            (Some(rows), None) => Matrix::from_rows(&rows)?,
            (None, default) => {
                let p = default.unwrap_or(DEFAULT_DERIVATION_PENALTY);
                Matrix::from_fn(k, k, |i, j| if i == j { 0.0 } else { p })
            }
        };
        Self::with_options(
            doc.classes,
            delta5,
            doc.crossing_divisor.unwrap_or(DEFAULT_CROSSING_DIVISOR),
            doc.factors.unwrap_or_default(),
        )
    }
}

/// Parses and validates a taxonomy document.
pub fn load_taxonomy(source: &str) -> Result<Taxonomy> {
    let doc: TaxonomyDocument = serde_json::from_str(source)?;
    Taxonomy::from_document(doc)
}

pub fn load_taxonomy_file(path: &Path) -> Result<Taxonomy> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_taxonomy(&text).map_err(|e| Error::file(path, e.to_string()))
}

fn validate_factor(name: &str, m: &Matrix, k: usize) -> Result<()> {
    if m.shape() != (k, k) {
        return Err(Error::Taxonomy(format!(
            "{name} is {}x{}, expected {k}x{k}",
            m.rows(),
            m.cols()
        )));
    }
    if m.as_slice().iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Taxonomy(format!("{name} has negative or non-finite entries")));
    }
    if !m.has_zero_diagonal() {
        return Err(Error::Taxonomy(format!("{name} must have a zero diagonal")));
    }
    if !m.is_symmetric(0.0) {
        return Err(Error::Taxonomy(format!("{name} is not symmetric")));
    }
    Ok(())
}

/// The ten-class knot catalog in its canonical order.
pub fn builtin_taxonomy() -> Taxonomy {
    use Family as F;
    use KnotType as T;
    let classes = vec![
        KnotClass::new("OHK", "Overhand Knot", T::Prime, 3, F::Stopper),
        KnotClass::new("SK", "Slip Knot", T::Slip, 3, F::Stopper),
        KnotClass::new("F8K", "Figure-8 Knot", T::Prime, 4, F::Stopper),
        KnotClass::new("BK", "Bowline", T::Loop, 4, F::Loop),
        KnotClass::new("F8L", "Figure-8 Loop", T::Loop, 4, F::Loop),
        KnotClass::new("ABK", "Alpine Butterfly", T::Loop, 4, F::Loop),
        KnotClass::new("CH", "Clove Hitch", T::Hitch, 2, F::Hitch),
        KnotClass::new("RK", "Reef Knot", T::Composite, 6, F::Binding),
        KnotClass::new("FSK", "Fisherman's Knot", T::Composite, 6, F::Bend),
        KnotClass::new("FMB", "Flemish Bend", T::Composite, 8, F::Bend),
    ];
    let idx = |code: &str| classes.iter().position(|c| c.code == code).unwrap();
    let k = classes.len();
    let mut delta5 = Matrix::from_fn(k, k, |i, j| {
        if i == j {
            0.0
        } else {
            DEFAULT_DERIVATION_PENALTY
        }
    });
    for (a, b, p) in [
        ("OHK", "SK", 0.10),
        ("F8K", "F8L", 0.10),
        ("F8K", "FMB", 0.15),
        ("RK", "FSK", 0.10),
    ] {
        let (i, j) = (idx(a), idx(b));
        delta5[(i, j)] = p;
        delta5[(j, i)] = p;
    }
    Taxonomy::new(classes, delta5).expect("built-in taxonomy is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tier {
    Easy,
    Medium,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultyTier {
    pub tier: Tier,
    pub members: Vec<String>,
}

/// Easy / Medium / Hard partition of the built-in classes.
pub fn difficulty_tiers() -> Vec<DifficultyTier> {
    let tier = |tier, codes: &[&str]| DifficultyTier {
        tier,
        members: codes.iter().map(|s| s.to_string()).collect(),
    };
    vec![
        tier(Tier::Easy, &["CH", "ABK", "BK"]),
        tier(Tier::Medium, &["F8L", "OHK", "SK"]),
        tier(Tier::Hard, &["F8K", "RK", "FSK", "FMB"]),
    ]
}

pub fn tier_of(code: &str) -> Option<Tier> {
    difficulty_tiers()
        .into_iter()
        .find(|t| t.members.iter().any(|m| m == code))
        .map(|t| t.tier)
}
