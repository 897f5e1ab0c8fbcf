use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::correlation::spearman;
use super::metrics::{confusion_rates, ConfusionMatrix};
use crate::error::{Error, Result};
use crate::topo_metric::{perturb_weights, topo_distance, FactorMatrices, FactorWeights};

pub const DEFAULT_RHO_THRESHOLD: f64 = -0.25;
pub const DEFAULT_AMPLITUDE: f64 = 0.5;
pub const DEFAULT_VECTORS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityResult {
    /// Spearman rho under the unperturbed weights.
    pub baseline_rho: f64,
    pub mean_rho: f64,
    /// Sample standard deviation; zero for a single vector.
    pub std_rho: f64,
    pub threshold: f64,
    pub fraction_below: f64,
    pub rhos: Vec<f64>,
    pub weights: Vec<FactorWeights>,
}

/// Monte Carlo robustness of the distance/confusion rank correlation to the
/// choice of factor weights.
pub fn weight_sensitivity(
    cm: &ConfusionMatrix,
    fm: &FactorMatrices,
    w: &FactorWeights,
    amplitude: f64,
    n: usize,
    seed: u64,
    threshold: f64,
) -> Result<SensitivityResult> {
    if cm.labels() != fm.labels() {
        return Err(Error::DimensionMismatch(format!(
            "confusion labels {:?} differ from distance labels {:?}",
            cm.labels(),
            fm.labels()
        )));
    }
    let rates = confusion_rates(cm)?.upper_triangle();
    let rho_for = |w: &FactorWeights| spearman(&topo_distance(fm, w).upper_triangle(), &rates);
    let baseline_rho = rho_for(w)?;
    let weights = perturb_weights(w, amplitude, seed, n)?;
    let rhos = weights.par_iter().map(rho_for).collect::<Result<Vec<_>>>()?;
    let mean_rho = rhos.iter().sum::<f64>() / n as f64;
    let std_rho = if n > 1 {
        (rhos.iter().map(|r| (r - mean_rho).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let fraction_below = rhos.iter().filter(|&&r| r < threshold).count() as f64 / n as f64;
    Ok(SensitivityResult {
        baseline_rho,
        mean_rho,
        std_rho,
        threshold,
        fraction_below,
        rhos,
        weights,
    })
}
