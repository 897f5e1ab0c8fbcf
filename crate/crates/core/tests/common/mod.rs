//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use topodiag::embedding::{EmbeddingRecord, LabeledEmbeddings};
use topodiag::losses::{combined_loss, logit_objective, taca_loss, taml_loss, LossConfig, MiniBatch};
use topodiag::rng::substream;
use topodiag::stats::ConfusionMatrix;
use topodiag::topo_metric::{factor_matrices, softmax_weights, topo_distance_grad_logits, WeightLogits};
use topodiag::{builtin_taxonomy, topo_distance, DistanceMatrix, FactorMatrices, FactorWeights, Matrix};

pub fn builtin_distance() -> DistanceMatrix {
    topo_distance(&factor_matrices(&builtin_taxonomy()), &FactorWeights::DEFAULT)
}

/// Classical multidimensional scaling of `d`: coordinates from the positive
/// spectrum of `-1/2 J D^2 J`.
pub fn mds_coordinates(d: &DistanceMatrix) -> Vec<Vec<f64>> {
    let k = d.len();
    let sq = DMatrix::from_fn(k, k, |i, j| d.get(i, j).powi(2));
    let j = DMatrix::identity(k, k) - DMatrix::from_element(k, k, 1.0 / k as f64);
    let b = -0.5 * &j * sq * &j;
    let eig = SymmetricEigen::new(b);
    let dims: Vec<usize> = (0..k).filter(|&c| eig.eigenvalues[c] > 1e-12).collect();
    (0..k)
        .map(|i| {
            dims.iter()
                .map(|&c| eig.eigenvectors[(i, c)] * eig.eigenvalues[c].sqrt())
                .collect()
        })
        .collect()
}

/// `per_class` samples per class placed symmetrically around the MDS
/// coordinates, so every class mean is the MDS point.
pub fn mds_embedding(d: &DistanceMatrix, per_class: usize, spread: f64) -> LabeledEmbeddings {
    let coords = mds_coordinates(d);
    let dim = coords[0].len();
    let mut records = Vec::new();
    for (c, x) in coords.iter().enumerate() {
        for s in 0..per_class {
            let axis = (s / 2) % dim;
            let sign = if s % 2 == 0 { 1.0 } else { -1.0 };
            let vector = x
                .iter()
                .enumerate()
                .map(|(a, v)| {
                    let offset = if a == axis && !(per_class % 2 == 1 && s == per_class - 1) {
                        sign * spread
                    } else {
                        0.0
                    };
                    (v + offset) as f32
                })
                .collect();
            records.push(EmbeddingRecord {
                sample_id: format!("{}_{s:03}", d.labels()[c]),
                label: d.labels()[c].clone(),
                vector,
            });
        }
    }
    LabeledEmbeddings::new(records).unwrap()
}

/// Central differences on a flat parameter vector.
pub fn central_difference(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let plus = f(&probe);
            probe[i] = x[i] - h;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Random mini-batch with every one of `k` classes present at least once.
pub fn random_batch(seed: u64, n: usize, e: usize, k: usize) -> MiniBatch {
    assert!(n >= k);
    let mut rng = substream(seed, 0);
    let mut labels: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);
    let x = Matrix::from_fn(n, e, |_, _| rng.random_range(-1.0..1.0));
    MiniBatch::new(x, labels).unwrap()
}

/// Ranks with ties averaged, computed by brute force.
fn naive_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

pub fn naive_spearman(x: &[f64], y: &[f64]) -> f64 {
    naive_pearson(&naive_ranks(x), &naive_ranks(y))
}

fn upper(m: &Matrix, perm: &[usize]) -> Vec<f64> {
    let k = m.rows();
    let mut out = Vec::new();
    for i in 0..k {
        for j in (i + 1)..k {
            out.push(m[(perm[i], perm[j])]);
        }
    }
    out
}

fn all_permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in all_permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

/// Fraction of all `k!` joint row/column permutations of `b` whose Spearman
/// statistic is at least as extreme as the observed one.
pub fn exhaustive_mantel_p(a: &Matrix, b: &Matrix) -> (f64, f64) {
    let k = a.rows();
    let ident: Vec<usize> = (0..k).collect();
    let ua = upper(a, &ident);
    let observed = naive_spearman(&ua, &upper(b, &ident));
    let perms = all_permutations(k);
    let extreme = perms
        .iter()
        .filter(|p| naive_spearman(&ua, &upper(b, p)).abs() >= observed.abs() - 1e-12)
        .count();
    (observed, extreme as f64 / perms.len() as f64)
}

/// Symmetric confusion with equal row sums whose rates are exactly
/// `(1600 - 1600 * d) / row_total`, an affine decreasing map of `d`.
pub fn affine_confusion(d: &DistanceMatrix) -> ConfusionMatrix {
    let k = d.len();
    let off = |i: usize, j: usize| (1600.0 * (1.0 - d.get(i, j))).round() as u64;
    let row_total = 20_000u64;
    let counts = (0..k)
        .map(|i| {
            let off_sum: u64 = (0..k).filter(|&j| j != i).map(|j| off(i, j)).sum();
            (0..k)
                .map(|j| if i == j { row_total - off_sum } else { off(i, j) })
                .collect()
        })
        .collect();
    ConfusionMatrix::new(d.labels().to_vec(), counts).unwrap()
}

/// Mostly diagonal confusion: 48 correct per class and one error in each of
/// the given (true, predicted) cells.
pub fn near_diagonal_confusion(labels: &[String], errors: &[(usize, usize)]) -> ConfusionMatrix {
    let k = labels.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (i, row) in counts.iter_mut().enumerate() {
        row[i] = 48;
    }
    for &(t, p) in errors {
        counts[t][t] -= 1;
        counts[t][p] += 1;
    }
    ConfusionMatrix::new(labels.to_vec(), counts).unwrap()
}

fn class_means(x: &[Vec<f64>], labels: &[usize], k: usize) -> Vec<Option<Vec<f64>>> {
    (0..k)
        .map(|c| {
            let rows: Vec<&Vec<f64>> = x.iter().zip(labels).filter(|(_, &l)| l == c).map(|(r, _)| r).collect();
            if rows.is_empty() {
                return None;
            }
            let mut m = vec![0.0; x[0].len()];
            for r in &rows {
                for (a, b) in m.iter_mut().zip(r.iter()) {
                    *a += b;
                }
            }
            Some(m.into_iter().map(|v| v / rows.len() as f64).collect())
        })
        .collect()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
}

fn unit(a: &[f64]) -> Vec<f64> {
    let n = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    a.iter().map(|v| v / n).collect()
}

pub fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// Centroid-alignment value by direct evaluation over the full K x K grid of
/// present classes.
pub fn taca_oracle(x: &[Vec<f64>], labels: &[usize], d: &DistanceMatrix) -> f64 {
    let means = class_means(x, labels, d.len());
    let present: Vec<usize> = (0..d.len()).filter(|&c| means[c].is_some()).collect();
    let dist = |a: usize, b: usize| euclid(means[a].as_ref().unwrap(), means[b].as_ref().unwrap());
    let mut max = 0.0f64;
    for &a in &present {
        for &b in &present {
            max = max.max(dist(a, b));
        }
    }
    let kp = present.len() as f64;
    let mut sum = 0.0;
    for &a in &present {
        for &b in &present {
            sum += (dist(a, b) / max - d.get(a, b)).powi(2);
        }
    }
    sum / (kp * kp)
}

/// Gap between the largest and second-largest centroid distances.
pub fn taca_max_gap(x: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let means = class_means(x, labels, k);
    let present: Vec<usize> = (0..k).filter(|&c| means[c].is_some()).collect();
    let mut all = Vec::new();
    for (i, &a) in present.iter().enumerate() {
        for &b in &present[i + 1..] {
            all.push(euclid(means[a].as_ref().unwrap(), means[b].as_ref().unwrap()));
        }
    }
    all.sort_by(|a, b| b.total_cmp(a));
    all[0] - all[1]
}

/// Hinge terms `m - ||z_hat_i - mu_hat_c'||` for every sample of `c` and every
/// hard-negative `(c, c')`, grouped per pair.
fn taml_slacks(x: &[Vec<f64>], labels: &[usize], d: &DistanceMatrix, tau: f64, margin: f64) -> Vec<Vec<f64>> {
    let k = d.len();
    let means = class_means(x, labels, k);
    let mut out = Vec::new();
    for c in 0..k {
        for c2 in 0..k {
            if c == c2 || means[c].is_none() || means[c2].is_none() || d.get(c, c2) >= tau {
                continue;
            }
            let mu = unit(means[c2].as_ref().unwrap());
            out.push(
                x.iter()
                    .zip(labels)
                    .filter(|(_, &l)| l == c)
                    .map(|(r, _)| margin - euclid(&unit(r), &mu))
                    .collect(),
            );
        }
    }
    out
}

pub fn taml_oracle(x: &[Vec<f64>], labels: &[usize], d: &DistanceMatrix, tau: f64, margin: f64) -> f64 {
    let slacks = taml_slacks(x, labels, d, tau, margin);
    if slacks.is_empty() {
        return 0.0;
    }
    let per_pair: f64 = slacks
        .iter()
        .map(|s| s.iter().map(|v| v.max(0.0)).sum::<f64>() / s.len() as f64)
        .sum();
    per_pair / slacks.len() as f64
}

/// Smallest distance of any hinge argument from its kink.
pub fn taml_kink_distance(x: &[Vec<f64>], labels: &[usize], d: &DistanceMatrix, tau: f64, margin: f64) -> f64 {
    taml_slacks(x, labels, d, tau, margin)
        .iter()
        .flatten()
        .map(|s| s.abs())
        .fold(f64::INFINITY, f64::min)
}

/// Brute-force cosine k-NN: full sort of every train sample, then a plain
/// count of labels among the first `k`.
pub fn knn_oracle(train: &LabeledEmbeddings, test: &LabeledEmbeddings, k: usize) -> f64 {
    let unit32 = |v: &[f32]| {
        let n = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        v.iter().map(|x| f64::from(*x) / n).collect::<Vec<f64>>()
    };
    let tr: Vec<(Vec<f64>, &str, &str)> = train
        .records()
        .iter()
        .map(|r| (unit32(&r.vector), r.sample_id.as_str(), r.label.as_str()))
        .collect();
    let mut correct = 0;
    for q in test.records() {
        let qu = unit32(&q.vector);
        let mut ranked: Vec<(f64, &str, &str)> = tr
            .iter()
            .map(|(v, id, l)| (v.iter().zip(&qu).map(|(a, b)| a * b).sum(), *id, *l))
            .collect();
        ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
        let top = &ranked[..k];
        let mut best: Option<(&str, usize)> = None;
        for (_, _, l) in top {
            let votes = top.iter().filter(|t| t.2 == *l).count();
            if best.is_none_or(|(_, v)| votes > v) {
                best = Some((l, votes));
            }
        }
        if best.unwrap().0 == q.label {
            correct += 1;
        }
    }
    correct as f64 / test.len() as f64
}

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_CONFIGS: usize = 20;
const GRAD_K: usize = 10;

fn reshape(flat: &[f64], e: usize) -> Vec<Vec<f64>> {
    flat.chunks(e).map(<[f64]>::to_vec).collect()
}

/// Batch sizes drawn per seed: N in [10, 64], E in [2, 16], all ten classes present.
pub fn sized_batch(seed: u64) -> MiniBatch {
    let mut rng = substream(seed, 99);
    let n = rng.random_range(GRAD_K..=64);
    let e = rng.random_range(2..=16);
    random_batch(seed, n, e, GRAD_K)
}

/// First `GRAD_CONFIGS` seeds from `base` whose batch passes `ok`.
pub fn grad_configs(base: u64, ok: impl Fn(&MiniBatch) -> bool) -> Vec<MiniBatch> {
    let out: Vec<MiniBatch> = (base..base + 1000).map(sized_batch).filter(|b| ok(b)).take(GRAD_CONFIGS).collect();
    assert_eq!(out.len(), GRAD_CONFIGS, "not enough non-degenerate configurations");
    out
}

/// Checks the library value against `oracle` and returns the max relative
/// error of `analytic` against central differences of `oracle`.
pub fn fd_check(batch: &MiniBatch, analytic: &Matrix, value: f64, oracle: impl Fn(&[Vec<f64>]) -> f64) -> Result<f64, String> {
    let e = batch.dim();
    let x = batch.embeddings().as_slice().to_vec();
    let reference = oracle(&reshape(&x, e));
    if (value - reference).abs() > 1e-10 * reference.abs().max(1.0) {
        return Err(format!("value {value} differs from oracle {reference}"));
    }
    let numeric = central_difference(&x, FD_STEP, |p| oracle(&reshape(p, e)));
    Ok(max_rel_error(analytic.as_slice(), &numeric))
}

fn far_from_kinks(b: &MiniBatch, d: &DistanceMatrix, cfg: &LossConfig, taca: bool, taml: bool) -> bool {
    let x = rows_of(b.embeddings());
    (!taca || taca_max_gap(&x, b.labels(), GRAD_K) > 1e-3)
        && (!taml || taml_kink_distance(&x, b.labels(), d, cfg.tau, cfg.margin) > 1e-3)
}

/// Max relative gradient error of TACA on each configuration.
pub fn taca_grad_errors() -> Result<Vec<f64>, String> {
    let d = builtin_distance();
    let cfg = LossConfig::default();
    grad_configs(1000, |b| far_from_kinks(b, &d, &cfg, true, false))
        .iter()
        .map(|b| {
            let out = taca_loss(b, &d, &cfg).map_err(|e| e.to_string())?;
            fd_check(b, &out.grad, out.value, |x| taca_oracle(x, b.labels(), &d))
        })
        .collect()
}

pub fn taml_grad_errors() -> Result<Vec<f64>, String> {
    let d = builtin_distance();
    let cfg = LossConfig::default();
    grad_configs(2000, |b| far_from_kinks(b, &d, &cfg, false, true))
        .iter()
        .map(|b| {
            let out = taml_loss(b, &d, &cfg).map_err(|e| e.to_string())?;
            if out.value <= 0.0 {
                return Err("inactive hinge configuration".into());
            }
            fd_check(b, &out.grad, out.value, |x| taml_oracle(x, b.labels(), &d, cfg.tau, cfg.margin))
        })
        .collect()
}

/// Combined loss with `0.5 * ||x - t||^2` standing in for cross-entropy.
pub fn combined_grad_errors() -> Result<Vec<f64>, String> {
    let d = builtin_distance();
    let cfg = LossConfig::default();
    grad_configs(3000, |b| far_from_kinks(b, &d, &cfg, true, true))
        .iter()
        .enumerate()
        .map(|(s, b)| {
            let mut rng = substream(s as u64, 7);
            let t: Vec<f64> = (0..b.len() * b.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ce = |x: &[f64]| 0.5 * x.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let x = b.embeddings().as_slice();
            let ce_grad = Matrix::from_fn(b.len(), b.dim(), |i, j| x[i * b.dim() + j] - t[i * b.dim() + j]);
            let out = combined_loss(ce(x), &ce_grad, b, &d, &cfg).map_err(|e| e.to_string())?;
            fd_check(b, &out.grad, out.value, |rows| {
                ce(&rows.concat())
                    + cfg.lambda_taca * taca_oracle(rows, b.labels(), &d)
                    + cfg.lambda_taml * taml_oracle(rows, b.labels(), &d, cfg.tau, cfg.margin)
            })
        })
        .collect()
}

fn random_logits(seed: u64) -> WeightLogits {
    let mut rng = substream(seed, 0);
    WeightLogits(std::array::from_fn(|_| rng.random_range(-2.0..2.0)))
}

/// Distance under softmax weights, with the softmax written out directly.
fn softmax_distance(fm: &FactorMatrices, logits: &[f64]) -> Matrix {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    let k = fm.len();
    Matrix::from_fn(k, k, |i, j| (0..5).map(|f| e[f] / s * fm.factor(f)[(i, j)]).sum())
}

/// Max relative error over the logit objective gradient and a sample of
/// Jacobian entries, for each seeded logit vector.
pub fn logit_grad_errors() -> Vec<f64> {
    let fm = factor_matrices(&builtin_taxonomy());
    (0..GRAD_CONFIGS as u64)
        .map(|seed| {
            let logits = random_logits(seed);
            let target = topo_distance(&fm, &softmax_weights(&random_logits(seed + 500)));
            let (_, analytic) = logit_objective(&fm, &target, &logits);
            let numeric = central_difference(&logits.0, FD_STEP, |l| {
                let d = softmax_distance(&fm, l);
                let k = fm.len();
                let s: f64 = (0..k)
                    .flat_map(|i| (0..k).map(move |j| (i, j)))
                    .map(|(i, j)| (d[(i, j)] - target.get(i, j)).powi(2))
                    .sum();
                s / (k * k) as f64
            });
            let mut worst = max_rel_error(&analytic, &numeric);
            let (_, jac) = topo_distance_grad_logits(&fm, &logits);
            for (i, j) in [(0, 1), (0, 2), (2, 7), (3, 9), (8, 9)] {
                let num = central_difference(&logits.0, FD_STEP, |l| softmax_distance(&fm, l)[(i, j)]);
                let ana: Vec<f64> = (0..5).map(|f| jac[f][(i, j)]).collect();
                worst = worst.max(max_rel_error(&ana, &num));
            }
            worst
        })
        .collect()
}

/// (b, c, chi2, p) as published for the twelve paired comparisons.
pub const MCNEMAR_TABLE: [(u64, u64, f64, f64); 12] = [
    (1, 1, 0.50, 0.480),
    (4, 5, 0.00, 1.000),
    (15, 14, 0.00, 1.000),
    (18, 15, 0.12, 0.728),
    (16, 19, 0.11, 0.735),
    (19, 19, 0.03, 0.871),
    (17, 0, 15.06, 1e-4),
    (20, 0, 18.05, 2e-5),
    (21, 1, 16.41, 1e-4),
    (12, 22, 2.38, 0.123),
    (14, 17, 0.13, 0.719),
    (20, 13, 1.09, 0.296),
];
