//! Centroid-alignment and hard-negative margin losses with analytic
//! gradients with respect to the batch embeddings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::topo_metric::{
    softmax_weights, topo_distance_grad_logits, DistanceMatrix, FactorMatrices, FactorWeights,
    WeightLogits, N_FACTORS,
};

#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    embeddings: Matrix,
    labels: Vec<usize>,
}

impl MiniBatch {
    /// `embeddings` is N x E, one row per sample; labels index the classes.
    pub fn new(embeddings: Matrix, labels: Vec<usize>) -> Result<Self> {
        if embeddings.rows() == 0 || embeddings.cols() == 0 {
            return Err(Error::InvalidArgument("mini-batch must have N >= 1 and E >= 1".into()));
        }
        if labels.len() != embeddings.rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} embeddings",
                labels.len(),
                embeddings.rows()
            )));
        }
        if embeddings.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("embeddings must be finite".into()));
        }
        Ok(Self { embeddings, labels })
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    /// Same labels, new embedding values.
    pub fn with_embeddings(&self, embeddings: Matrix) -> Result<Self> {
        Self::new(embeddings, self.labels.clone())
    }

    fn check_classes(&self, k: usize) -> Result<()> {
        if let Some(&l) = self.labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidArgument(format!(
                "label {l} out of range for {k} classes"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_taca: f64,
    pub lambda_taml: f64,
    pub tau: f64,
    pub margin: f64,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_taca: 0.1,
            lambda_taml: 0.005,
            tau: 0.3,
            margin: 1.2,
            epsilon: 1e-12,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("lambda_taca", self.lambda_taca),
            ("lambda_taml", self.lambda_taml),
            ("tau", self.tau),
            ("margin", self.margin),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }

    /// A threshold above every reference distance selects all pairs as hard negatives.
    pub fn warn_if_tau_uninformative(&self, d: &DistanceMatrix) {
        let max = d.values().max();
        if self.tau > max {
            log::warn!("tau = {} exceeds the largest reference distance {max}", self.tau);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// d loss / d embeddings, N x E.
    pub grad: Matrix,
    pub present_classes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Centroids {
    /// K x E; rows of absent classes are zero.
    pub means: Matrix,
    pub counts: Vec<usize>,
}

impl Centroids {
    pub fn is_present(&self, k: usize) -> bool {
        self.counts[k] > 0
    }

    pub fn present(&self) -> Vec<usize> {
        (0..self.counts.len()).filter(|&k| self.counts[k] > 0).collect()
    }
}

pub fn class_centroids(batch: &MiniBatch, k: usize) -> Result<Centroids> {
    batch.check_classes(k)?;
    let e = batch.dim();
    let mut means = Matrix::zeros(k, e);
    let mut counts = vec![0usize; k];
    for (i, &l) in batch.labels.iter().enumerate() {
        counts[l] += 1;
        for (m, z) in means.row_mut(l).iter_mut().zip(batch.embeddings.row(i)) {
            *m += z;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            means.row_mut(c).iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    Ok(Centroids { means, counts })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_reference(batch: &MiniBatch, d: &DistanceMatrix) -> Result<usize> {
    let k = d.len();
    batch.check_classes(k)?;
    Ok(k)
}

/// Spreads centroid gradients back to the samples that formed each centroid.
fn centroid_grad_to_samples(batch: &MiniBatch, cents: &Centroids, g_mu: &Matrix) -> Matrix {
    let mut grad = Matrix::zeros(batch.len(), batch.dim());
    for (i, &l) in batch.labels.iter().enumerate() {
        let n = cents.counts[l] as f64;
        for (g, gm) in grad.row_mut(i).iter_mut().zip(g_mu.row(l)) {
            *g += gm / n;
        }
    }
    grad
}

/// Centroid alignment: `(1/K^2) * ||D_emb / max(D_emb) - D_ref||_F^2` over the
/// classes present in the batch, with K the number of present classes.
///
/// The max normaliser is differentiated through its argmax pair; ties go to
/// the lowest `(a, b)` in row-major order.
pub fn taca_loss(batch: &MiniBatch, d_ref: &DistanceMatrix, cfg: &LossConfig) -> Result<LossOutput> {
    let k = check_reference(batch, d_ref)?;
    let cents = class_centroids(batch, k)?;
    let present = cents.present();
    let kp = present.len();
    if kp < 2 {
        return Err(Error::Degenerate(format!(
            "centroid alignment needs at least 2 classes in the batch, found {kp}"
        )));
    }
    let e = batch.dim();
    let scale = 1.0 / (kp * kp) as f64;

    let mut pairs = Vec::with_capacity(kp * (kp - 1) / 2);
    let mut max_d = f64::NEG_INFINITY;
    let mut argmax = 0;
    for a in 0..kp {
        for b in (a + 1)..kp {
            let (ca, cb) = (present[a], present[b]);
            let diff: Vec<f64> = cents
                .means
                .row(ca)
                .iter()
                .zip(cents.means.row(cb))
                .map(|(x, y)| x - y)
                .collect();
            let dist = norm(&diff);
            if dist > max_d {
                max_d = dist;
                argmax = pairs.len();
            }
            pairs.push((ca, cb, dist, diff));
        }
    }

    if max_d < cfg.epsilon {
        let value = scale
            * present
                .iter()
                .flat_map(|&a| present.iter().map(move |&b| (a, b)))
                .map(|(a, b)| d_ref.get(a, b).powi(2))
                .sum::<f64>();
        return Ok(LossOutput {
            value,
            grad: Matrix::zeros(batch.len(), e),
            present_classes: present,
        });
    }

    // Both triangles of the Frobenius norm: factor 2 per unordered pair.
    let mut value = 0.0;
    let mut g_dist = vec![0.0; pairs.len()];
    let mut g_max = 0.0;
    for (p, (ca, cb, dist, _)) in pairs.iter().enumerate() {
        let resid = dist / max_d - d_ref.get(*ca, *cb);
        value += 2.0 * scale * resid * resid;
        g_dist[p] = 4.0 * scale * resid / max_d;
        g_max -= 4.0 * scale * resid * dist / (max_d * max_d);
    }
    g_dist[argmax] += g_max;

    let mut g_mu = Matrix::zeros(k, e);
    for (p, (ca, cb, dist, diff)) in pairs.iter().enumerate() {
        if *dist == 0.0 {
            continue;
        }
        let coef = g_dist[p] / dist;
        for (j, dj) in diff.iter().enumerate() {
            g_mu[(*ca, j)] += coef * dj;
            g_mu[(*cb, j)] -= coef * dj;
        }
    }
    Ok(LossOutput {
        value,
        grad: centroid_grad_to_samples(batch, &cents, &g_mu),
        present_classes: present,
    })
}

/// Ordered hard-negative pairs `(c, c')`: distinct, both in `present`, with
/// reference distance below `tau`.
pub fn hard_negative_pairs(present: &[usize], d_ref: &DistanceMatrix, tau: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for &c in present {
        for &c2 in present {
            if c != c2 && d_ref.get(c, c2) < tau {
                out.push((c, c2));
            }
        }
    }
    out
}

/// Backward pass of `x / max(||x||, eps)`.
fn normalize_backward(x: &[f64], g: &[f64], eps: f64) -> Vec<f64> {
    let n = norm(x);
    if n <= eps {
        return g.iter().map(|v| v / eps).collect();
    }
    let dot: f64 = x.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / (n * n);
    x.iter().zip(g).map(|(xi, gi)| (gi - xi * dot) / n).collect()
}

fn normalized(x: &[f64], eps: f64) -> Vec<f64> {
    let n = norm(x).max(eps);
    x.iter().map(|v| v / n).collect()
}

/// Hinge `max(0, m - ||z_i/|z_i| - mu_c'/|mu_c'|| )` averaged over samples of
/// `c` and then over hard-negative pairs `(c, c')`.
pub fn taml_loss(batch: &MiniBatch, d_ref: &DistanceMatrix, cfg: &LossConfig) -> Result<LossOutput> {
    let k = check_reference(batch, d_ref)?;
    let cents = class_centroids(batch, k)?;
    let present = cents.present();
    let e = batch.dim();
    let hard = hard_negative_pairs(&present, d_ref, cfg.tau);
    let mut grad = Matrix::zeros(batch.len(), e);
    if hard.is_empty() {
        return Ok(LossOutput {
            value: 0.0,
            grad,
            present_classes: present,
        });
    }
    let eps = cfg.epsilon;
    let z_hat: Vec<Vec<f64>> = (0..batch.len())
        .map(|i| normalized(batch.embeddings.row(i), eps))
        .collect();
    let mu_hat: Vec<Vec<f64>> = (0..k).map(|c| normalized(cents.means.row(c), eps)).collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in batch.labels.iter().enumerate() {
        members[l].push(i);
    }

    let h = hard.len() as f64;
    let mut value = 0.0;
    let mut g_zhat = Matrix::zeros(batch.len(), e);
    let mut g_muhat = Matrix::zeros(k, e);
    for &(c, c2) in &hard {
        let coef = 1.0 / (h * members[c].len() as f64);
        for &i in &members[c] {
            let diff: Vec<f64> = z_hat[i].iter().zip(&mu_hat[c2]).map(|(a, b)| a - b).collect();
            let r = norm(&diff);
            let slack = cfg.margin - r;
            if slack <= 0.0 {
                continue;
            }
            value += coef * slack;
            if r == 0.0 {
                continue;
            }
            for (j, dj) in diff.iter().enumerate() {
                g_zhat[(i, j)] -= coef * dj / r;
                g_muhat[(c2, j)] += coef * dj / r;
            }
        }
    }

    for i in 0..batch.len() {
        let g = normalize_backward(batch.embeddings.row(i), g_zhat.row(i), eps);
        grad.row_mut(i).copy_from_slice(&g);
    }
    let mut g_mu = Matrix::zeros(k, e);
    for c in 0..k {
        if cents.is_present(c) {
            let g = normalize_backward(cents.means.row(c), g_muhat.row(c), eps);
            g_mu.row_mut(c).copy_from_slice(&g);
        }
    }
    grad.add_scaled(1.0, &centroid_grad_to_samples(batch, &cents, &g_mu));
    Ok(LossOutput {
        value,
        grad,
        present_classes: present,
    })
}

/// `ce + lambda_taca * taca + lambda_taml * taml`. Cross-entropy value and its
/// embedding gradient come from the caller. A term whose lambda is zero is not
/// evaluated.
pub fn combined_loss(
    ce_value: f64,
    ce_grad: &Matrix,
    batch: &MiniBatch,
    d_ref: &DistanceMatrix,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    if ce_grad.shape() != batch.embeddings.shape() {
        return Err(Error::DimensionMismatch(format!(
            "cross-entropy gradient is {:?}, embeddings are {:?}",
            ce_grad.shape(),
            batch.embeddings.shape()
        )));
    }
    let k = check_reference(batch, d_ref)?;
    let mut value = ce_value;
    let mut grad = ce_grad.clone();
    if cfg.lambda_taca != 0.0 {
        let t = taca_loss(batch, d_ref, cfg)?;
        value += cfg.lambda_taca * t.value;
        grad.add_scaled(cfg.lambda_taca, &t.grad);
    }
    if cfg.lambda_taml != 0.0 {
        let t = taml_loss(batch, d_ref, cfg)?;
        value += cfg.lambda_taml * t.value;
        grad.add_scaled(cfg.lambda_taml, &t.grad);
    }
    Ok(LossOutput {
        value,
        grad,
        present_classes: class_centroids(batch, k)?.present(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitFit {
    /// Logits before the first step and after each step.
    pub trajectory: Vec<WeightLogits>,
    /// Objective at each entry of `trajectory`.
    pub objectives: Vec<f64>,
    pub final_weights: FactorWeights,
}

/// `(1/K^2) * ||D(softmax(logits)) - target||_F^2` and its logit gradient.
pub fn logit_objective(
    fm: &FactorMatrices,
    target: &DistanceMatrix,
    logits: &WeightLogits,
) -> (f64, [f64; N_FACTORS]) {
    let k = fm.len();
    let scale = 1.0 / (k * k) as f64;
    let (d, grads) = topo_distance_grad_logits(fm, logits);
    let resid: Vec<f64> = d
        .values()
        .as_slice()
        .iter()
        .zip(target.values().as_slice())
        .map(|(a, b)| a - b)
        .collect();
    let value = scale * resid.iter().map(|r| r * r).sum::<f64>();
    let grad = std::array::from_fn(|f| {
        2.0 * scale
            * grads[f]
                .as_slice()
                .iter()
                .zip(&resid)
                .map(|(g, r)| g * r)
                .sum::<f64>()
    });
    (value, grad)
}

/// Plain gradient descent on the weight logits from zero (uniform weights).
pub fn fit_logits_demo(
    fm: &FactorMatrices,
    target: &DistanceMatrix,
    lr: f64,
    steps: usize,
) -> Result<LogitFit> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("need at least one step".into()));
    }
    if target.len() != fm.len() {
        return Err(Error::DimensionMismatch(format!(
            "target is {}x{}, factors are {}x{}",
            target.len(),
            target.len(),
            fm.len(),
            fm.len()
        )));
    }
    let mut logits = WeightLogits::default();
    let mut trajectory = vec![logits];
    let (mut value, mut grad) = logit_objective(fm, target, &logits);
    let mut objectives = vec![value];
    for _ in 0..steps {
        for (l, g) in logits.0.iter_mut().zip(&grad) {
            *l -= lr * g;
        }
        (value, grad) = logit_objective(fm, target, &logits);
        trajectory.push(logits);
        objectives.push(value);
    }
    Ok(LogitFit {
        trajectory,
        objectives,
        final_weights: softmax_weights(&logits),
    })
}
