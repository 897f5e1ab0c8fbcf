//! Central finite-difference checks for the analytic loss gradients.

use crate::error::Result;
use crate::losses::{combined_loss, taca_loss, taml_loss, LossConfig, MiniBatch};
use crate::matrix::Matrix;
use crate::topo_metric::DistanceMatrix;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Entries whose analytic and numeric magnitudes are both below this are
/// compared absolutely instead of relatively.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max)
}

/// Central differences of `f` at `x`, one entry at a time.
pub fn numeric_gradient(
    x: &Matrix,
    h: f64,
    mut f: impl FnMut(&Matrix) -> Result<f64>,
) -> Result<Matrix> {
    let mut probe = x.clone();
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    for idx in 0..x.as_slice().len() {
        let orig = probe.as_slice()[idx];
        probe.as_mut_slice()[idx] = orig + h;
        let plus = f(&probe)?;
        probe.as_mut_slice()[idx] = orig - h;
        let minus = f(&probe)?;
        probe.as_mut_slice()[idx] = orig;
        grad.as_mut_slice()[idx] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct GradCheck {
    pub value: f64,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LossCheck {
    pub taca: GradCheck,
    pub taml: GradCheck,
    pub combined: GradCheck,
}

/// Checks TACA, TAML and the combined loss (with zero cross-entropy) at `batch`.
pub fn check_losses(batch: &MiniBatch, d_ref: &DistanceMatrix, cfg: &LossConfig, h: f64) -> Result<LossCheck> {
    let x = batch.embeddings();
    let run = |loss: &dyn Fn(&MiniBatch) -> Result<(f64, Matrix)>| -> Result<GradCheck> {
        let (value, analytic) = loss(batch)?;
        let numeric = numeric_gradient(x, h, |m| Ok(loss(&batch.with_embeddings(m.clone())?)?.0))?;
        Ok(GradCheck {
            value,
            max_relative_error: max_relative_error(analytic.as_slice(), numeric.as_slice()),
        })
    };
    let zero = Matrix::zeros(x.rows(), x.cols());
    Ok(LossCheck {
        taca: run(&|b| taca_loss(b, d_ref, cfg).map(|o| (o.value, o.grad)))?,
        taml: run(&|b| taml_loss(b, d_ref, cfg).map(|o| (o.value, o.grad)))?,
        combined: run(&|b| combined_loss(0.0, &zero, b, d_ref, cfg).map(|o| (o.value, o.grad)))?,
    })
}
