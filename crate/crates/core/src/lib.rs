//! Topology-aware diagnostics for knot classification: a five-factor class
//! distance, permutation and paired significance tests, topology-aware
//! auxiliary losses, and embedding geometry checks.

pub mod embedding;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod knot_math;
pub mod losses;
pub mod matrix;
pub mod report;
pub mod rng;
pub mod split;
pub mod stats;
pub mod taxonomy;
pub mod topo_metric;
pub mod validate;

pub use error::{Error, ErrorKind, Result};
pub use matrix::Matrix;
pub use taxonomy::{builtin_taxonomy, load_taxonomy, load_taxonomy_file, KnotClass, Taxonomy};
pub use topo_metric::{topo_distance, DistanceMatrix, FactorMatrices, FactorWeights};
