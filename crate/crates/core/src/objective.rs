//! Training objectives for the mixed classifier.
//!
//! * plain: cross-entropy on the raw inputs.
//! * Mixup (label mixing): one mixed input per example, mixed soft label,
//!   `λ ~ Beta(α, α)`.
//! * label preserving: `S` mixed inputs per example, logits averaged before
//!   the loss, original label, `λ ~ Beta(α+1, α)`. This is the Monte-Carlo
//!   upper bound `L_upper,S` of the marginalized empirical risk; it decreases
//!   towards the risk as `S` grows.
//!
//! The `*_with` variants take a pre-drawn [`MixDraws`] table so tests can pin
//! every random choice.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mixing::{
    lambda_prior, mix_rows, mix_scalar, BetaParams, LambdaPrior, MixConfig, MixDraws, MixMode,
    PartnerStrategy,
};
use crate::nn::{
    argmax, backward, check_label_rows, log_softmax, softmax_xent, Batch, ModelParams, OptimState,
    ParamGrads,
};
use crate::quadrature::gauss_legendre_unit;
use crate::rng::RngStream;

/// A Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_reps: usize,
}

impl LossEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        assert!(n >= 1, "estimate needs at least one sample");
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        LossEstimate {
            value: mean,
            std_error,
            n_reps: n,
        }
    }
}

/// Mean cross-entropy on the raw features.
pub fn plain_loss(params: &ModelParams, batch: &Batch) -> Result<f64> {
    let logits = params.forward(batch.features())?;
    Ok(softmax_xent(logits.view(), batch.soft_labels())?.0)
}

pub fn plain_loss_grad(params: &ModelParams, batch: &Batch) -> Result<(f64, ParamGrads)> {
    backward(params, batch)
}

/// Averages consecutive groups of `s` logit rows.
fn group_mean(logits: &Array2<f64>, s: usize) -> Array2<f64> {
    let (rows, k) = logits.dim();
    let m = rows / s;
    let grouped = logits
        .view()
        .into_shape_with_order((m, s, k))
        .expect("contiguous logits");
    grouped.mean_axis(Axis(1)).expect("s >= 1")
}

/// Label-preserving objective with pinned draws.
///
/// `pool` supplies the partners; for in-batch mixing pass the batch features.
pub fn dip_loss_preserving_with(
    params: &ModelParams,
    batch: &Batch,
    pool: ArrayView2<f64>,
    draws: &MixDraws,
) -> Result<(f64, ParamGrads)> {
    let s = draws.samples();
    let mixed = mix_rows(batch.features(), pool, draws)?;
    let cache = params.forward_cached(mixed.view())?;
    let averaged = group_mean(&cache.logits, s);
    let (loss, d_avg) = softmax_xent(averaged.view(), batch.soft_labels())?;
    // d loss / d logits_ij = d loss / d avg_i / S
    let inv_s = 1.0 / s as f64;
    let k = d_avg.ncols();
    let mut dlogits = Array2::zeros((d_avg.nrows() * s, k));
    for (i, row) in d_avg.outer_iter().enumerate() {
        for j in 0..s {
            dlogits.row_mut(i * s + j).assign(&(&row * inv_s));
        }
    }
    let grads = params.backprop(&cache, &dlogits)?;
    Ok((loss, grads))
}

/// Label-preserving objective `L_upper,S` with in-batch partners.
pub fn dip_loss_preserving(
    params: &ModelParams,
    batch: &Batch,
    cfg: &MixConfig,
    rng: &mut RngStream,
) -> Result<(f64, ParamGrads)> {
    if cfg.mode != MixMode::LabelPreserving {
        return Err(Error::config(format!(
            "label-preserving objective called with mode {}",
            cfg.mode
        )));
    }
    cfg.validate()?;
    let prior = cfg.prior()?;
    let m = batch.len();
    let draws = MixDraws::draw(m, cfg.samples, &prior, cfg.partner, m, rng)?;
    dip_loss_preserving_with(params, batch, batch.features(), &draws)
}

/// Mixup objective with pinned draws: input `ψ(x_i, x'_i, λ_i)`, target
/// `λ_i y_i + (1-λ_i) y'_i`. Uses the first column of `draws`.
pub fn mixup_loss_with(
    params: &ModelParams,
    batch: &Batch,
    pool_features: ArrayView2<f64>,
    pool_labels: ArrayView2<f64>,
    draws: &MixDraws,
) -> Result<(f64, ParamGrads)> {
    if draws.samples() != 1 {
        return Err(Error::config("Mixup uses exactly one draw per example"));
    }
    if pool_labels.dim() != (pool_features.nrows(), batch.soft_labels().ncols()) {
        return Err(Error::shape("partner labels do not match the partner pool"));
    }
    let mixed = mix_rows(batch.features(), pool_features, draws)?;
    let y = batch.soft_labels();
    let mut targets = Array2::zeros(y.dim());
    for (i, mut row) in targets.outer_iter_mut().enumerate() {
        let lam = draws.lambdas[[i, 0]];
        let partner = pool_labels.row(draws.partners[[i, 0]]);
        for (k, t) in row.iter_mut().enumerate() {
            *t = mix_scalar(y[[i, k]], partner[k], lam);
        }
    }
    let mixed_batch = Batch::new(mixed, targets)?;
    backward(params, &mixed_batch)
}

/// Mixup with `λ ~ Beta(α, α)` per example and a batch permutation for partners.
pub fn mixup_loss(
    params: &ModelParams,
    batch: &Batch,
    alpha: f64,
    rng: &mut RngStream,
) -> Result<(f64, ParamGrads)> {
    let prior = lambda_prior(MixMode::LabelMixing, alpha)?;
    let m = batch.len();
    let draws = MixDraws::draw(m, 1, &prior, PartnerStrategy::BatchPermutation, m, rng)?;
    mixup_loss_with(params, batch, batch.features(), batch.soft_labels(), &draws)
}

/// Pointwise loss `ℓ(logits, label)` used by the verification oracles.
pub type PointLoss = dyn Fn(ArrayView1<f64>, ArrayView1<f64>) -> f64 + Sync;

/// Soft-label cross-entropy of one row.
pub fn xent_point(logits: ArrayView1<f64>, label: ArrayView1<f64>) -> f64 {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    logits
        .iter()
        .zip(label.iter())
        .map(|(&z, &y)| y * (lse - z))
        .sum()
}

/// Two sides of the label-mixing / label-preserving identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prop1Report {
    pub lhs: f64,
    pub rhs: f64,
    pub abs_diff: f64,
}

pub const PROP1_MAX_N: usize = 32;

/// Brute-force check that label mixing under `Beta(α, α)` has the same
/// expected loss as label preserving under `Beta(α+1, α)`.
///
/// Both sides sum over all `n²` ordered pairs and integrate over `λ` with a
/// Gauss–Legendre rule whose weights carry the Beta density.
pub fn prop1_check(
    params: &ModelParams,
    features: ArrayView2<f64>,
    labels: ArrayView2<f64>,
    alpha: f64,
    quad_nodes: usize,
) -> Result<Prop1Report> {
    prop1_check_with_loss(params, features, labels, alpha, quad_nodes, &xent_point)
}

pub fn prop1_check_with_loss(
    params: &ModelParams,
    features: ArrayView2<f64>,
    labels: ArrayView2<f64>,
    alpha: f64,
    quad_nodes: usize,
    loss: &PointLoss,
) -> Result<Prop1Report> {
    let n = features.nrows();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if n > PROP1_MAX_N {
        return Err(Error::config(format!(
            "pairwise oracle limited to {PROP1_MAX_N} examples, got {n}"
        )));
    }
    if labels.nrows() != n {
        return Err(Error::shape("labels and features differ in length"));
    }
    check_label_rows(&labels)?;
    if labels.ncols() != params.n_classes() {
        return Err(Error::shape(format!(
            "{} label columns for a {}-class network",
            labels.ncols(),
            params.n_classes()
        )));
    }
    if quad_nodes < 64 {
        return Err(Error::config(format!(
            "need at least 64 quadrature nodes, got {quad_nodes}"
        )));
    }
    if !(alpha >= 0.5 && alpha.is_finite()) {
        return Err(Error::config(format!(
            "oracle requires alpha >= 0.5, got {alpha}"
        )));
    }
    let mixing = BetaParams::new(alpha, alpha)?;
    let preserving = BetaParams::new(alpha + 1.0, alpha)?;
    let (nodes, weights) = gauss_legendre_unit(quad_nodes)?;
    let w_mix: Vec<f64> = nodes
        .iter()
        .zip(&weights)
        .map(|(&t, &w)| w * mixing.pdf(t))
        .collect();
    let w_pre: Vec<f64> = nodes
        .iter()
        .zip(&weights)
        .map(|(&t, &w)| w * preserving.pdf(t))
        .collect();

    let q = nodes.len();
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let mut mixed = Array2::zeros((q, features.ncols()));
    for i in 0..n {
        for j in 0..n {
            for (k, &t) in nodes.iter().enumerate() {
                for c in 0..features.ncols() {
                    mixed[[k, c]] = mix_scalar(features[[i, c]], features[[j, c]], t);
                }
            }
            let logits = params.forward(mixed.view())?;
            let (yi, yj) = (labels.row(i), labels.row(j));
            for (k, &t) in nodes.iter().enumerate() {
                let z = logits.row(k);
                let soft: Array1<f64> = yi
                    .iter()
                    .zip(yj.iter())
                    .map(|(&a, &b)| mix_scalar(a, b, t))
                    .collect();
                lhs += w_mix[k] * loss(z, soft.view());
                rhs += w_pre[k] * loss(z, yi);
            }
        }
    }
    let norm = (n * n) as f64;
    let (lhs, rhs) = (lhs / norm, rhs / norm);
    Ok(Prop1Report {
        lhs,
        rhs,
        abs_diff: (lhs - rhs).abs(),
    })
}

/// Marginalized empirical risk with the expectation over `λ` done by
/// quadrature and the expectation over partners done exactly:
/// `mean_i ℓ( mean_j ∫ h(ψ(x_i, x_j, λ)) p(λ) dλ, y_i )`.
pub fn marginal_risk_quadrature(
    params: &ModelParams,
    features: ArrayView2<f64>,
    labels: ArrayView2<f64>,
    prior: &BetaParams,
    quad_nodes: usize,
) -> Result<f64> {
    let n = features.nrows();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let (nodes, weights) = gauss_legendre_unit(quad_nodes)?;
    let w: Vec<f64> = nodes
        .iter()
        .zip(&weights)
        .map(|(&t, &w)| w * prior.pdf(t))
        .collect();
    let d = features.ncols();
    let q = nodes.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut mixed = Array2::zeros((n * q, d));
        for j in 0..n {
            for (k, &t) in nodes.iter().enumerate() {
                for c in 0..d {
                    mixed[[j * q + k, c]] = mix_scalar(features[[i, c]], features[[j, c]], t);
                }
            }
        }
        let logits = params.forward(mixed.view())?;
        let mut avg = Array1::<f64>::zeros(logits.ncols());
        for (r, row) in logits.outer_iter().enumerate() {
            avg.scaled_add(w[r % q], &row);
        }
        avg /= n as f64;
        total += xent_point(avg.view(), labels.row(i));
    }
    Ok(total / n as f64)
}

/// One draw of `L_upper,S`: per-example `S` draws with partners from the
/// whole feature set, logits averaged, then the pointwise loss.
fn upper_bound_draw(
    params: &ModelParams,
    features: ArrayView2<f64>,
    labels: ArrayView2<f64>,
    prior: &LambdaPrior,
    samples: usize,
    rng: &mut RngStream,
    loss: &PointLoss,
) -> Result<f64> {
    let n = features.nrows();
    let draws = MixDraws::draw(n, samples, prior, PartnerStrategy::DatasetUniform, n, rng)?;
    let mixed = mix_rows(features, features, &draws)?;
    let logits = params.forward(mixed.view())?;
    let averaged = group_mean(&logits, samples);
    let total: f64 = averaged
        .outer_iter()
        .zip(labels.outer_iter())
        .map(|(z, y)| loss(z, y))
        .sum();
    Ok(total / n as f64)
}

/// Monte-Carlo estimate of `E[L_upper,S]` from `reps` independent draws.
///
/// Repetitions run in parallel, each on its own derived stream.
#[allow(clippy::too_many_arguments)]
pub fn upper_bound_estimate(
    params: &ModelParams,
    features: ArrayView2<f64>,
    labels: ArrayView2<f64>,
    prior: &LambdaPrior,
    samples: usize,
    reps: usize,
    rng: &RngStream,
    loss: &PointLoss,
) -> Result<LossEstimate> {
    if samples == 0 || reps == 0 {
        return Err(Error::config("samples and reps must be positive"));
    }
    if features.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let values: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut stream = rng.derive(r as u64);
            upper_bound_draw(params, features, labels, prior, samples, &mut stream, loss)
        })
        .collect::<Result<_>>()?;
    Ok(LossEstimate::from_samples(&values))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JensenReport {
    /// `(S, estimate of E[L_upper,S])` in the order requested.
    pub estimates: Vec<(usize, LossEstimate)>,
    /// Large-`S` proxy for the marginalized risk itself.
    pub proxy_samples: usize,
    pub proxy: LossEstimate,
}

impl JensenReport {
    /// Largest amount by which a later (larger-`S`) estimate exceeds an
    /// earlier one, in units of the combined standard error. Non-positive
    /// when the ordering holds exactly.
    pub fn worst_violation_in_se(&self) -> f64 {
        self.estimates
            .windows(2)
            .map(|w| {
                let (a, b) = (w[0].1, w[1].1);
                let se = a.std_error.hypot(b.std_error);
                let excess = b.value - a.value;
                if se > 0.0 {
                    excess / se
                } else if excess > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub const JENSEN_MIN_REPS: usize = 1000;
pub const JENSEN_PROXY_SAMPLES: usize = 256;

/// Estimates `E[L_upper,S]` for each `S` under the label-preserving prior
/// `Beta(α+1, α)`, plus a large-`S` proxy of the marginalized risk.
pub fn jensen_check(
    params: &ModelParams,
    dataset: &Dataset,
    alpha: f64,
    s_list: &[usize],
    reps: usize,
    rng: &RngStream,
) -> Result<JensenReport> {
    jensen_check_with_loss(params, dataset, alpha, s_list, reps, rng, &xent_point)
}

pub fn jensen_check_with_loss(
    params: &ModelParams,
    dataset: &Dataset,
    alpha: f64,
    s_list: &[usize],
    reps: usize,
    rng: &RngStream,
    loss: &PointLoss,
) -> Result<JensenReport> {
    if reps < JENSEN_MIN_REPS {
        return Err(Error::config(format!(
            "need at least {JENSEN_MIN_REPS} repetitions, got {reps}"
        )));
    }
    if s_list.is_empty() {
        return Err(Error::config("empty list of sample counts"));
    }
    let prior = lambda_prior(MixMode::LabelPreserving, alpha)?;
    let (x, y) = (dataset.features(), dataset.labels());
    let mut estimates = Vec::with_capacity(s_list.len());
    for (k, &s) in s_list.iter().enumerate() {
        let stream = RngStream::with_stream(rng.seed(), 1 << 32 | k as u64);
        estimates.push((
            s,
            upper_bound_estimate(params, x, y, &prior, s, reps, &stream, loss)?,
        ));
    }
    let proxy_stream = RngStream::with_stream(rng.seed(), 2 << 32);
    let proxy_reps = (reps / 100).max(10);
    let proxy = upper_bound_estimate(
        params,
        x,
        y,
        &prior,
        JENSEN_PROXY_SAMPLES,
        proxy_reps,
        &proxy_stream,
        loss,
    )?;
    Ok(JensenReport {
        estimates,
        proxy_samples: JENSEN_PROXY_SAMPLES,
        proxy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub lr: f64,
}

/// Writes `epoch,train_loss,train_acc,lr` rows.
pub fn write_metrics_csv<W: Write>(metrics: &[EpochMetrics], mut out: W) -> std::io::Result<()> {
    writeln!(out, "epoch,train_loss,train_acc,lr")?;
    for m in metrics {
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e}",
            m.epoch, m.train_loss, m.train_acc, m.lr
        )?;
    }
    Ok(())
}

/// Fraction of rows whose raw-input argmax matches the label.
pub fn raw_accuracy(params: &ModelParams, dataset: &Dataset) -> Result<f64> {
    let logits = params.forward(dataset.features())?;
    let correct = logits
        .outer_iter()
        .zip(dataset.classes())
        .filter(|(z, c)| argmax(z.as_slice().expect("standard layout")) == *c)
        .count();
    Ok(correct as f64 / dataset.len() as f64)
}

/// Mini-batch SGD on the objective selected by `cfg.mode`.
///
/// Epochs are numbered from 1. Each epoch reshuffles the data; partners are
/// drawn per `cfg.partner` (a fresh permutation of the batch, or uniform
/// indices into the whole training set). Metrics record the mean objective
/// over the epoch and the raw-input training accuracy after it.
pub fn train(
    mut params: ModelParams,
    train_set: &Dataset,
    cfg: &MixConfig,
    optim: &mut OptimState,
    epochs: usize,
    batch_size: usize,
    rng: &mut RngStream,
) -> Result<(ModelParams, Vec<EpochMetrics>)> {
    cfg.validate()?;
    let n = train_set.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if batch_size == 0 || batch_size > n {
        return Err(Error::config(format!(
            "batch size must lie in 1..={n}, got {batch_size}"
        )));
    }
    if train_set.dim() != params.input_dim() || train_set.n_classes() != params.n_classes() {
        return Err(Error::shape(format!(
            "data is {}-d with {} classes, network expects {}-d with {}",
            train_set.dim(),
            train_set.n_classes(),
            params.input_dim(),
            params.n_classes()
        )));
    }
    let prior = cfg.prior()?;
    let (x_all, y_all) = (train_set.features(), train_set.labels());
    let mut order: Vec<usize> = (0..n).collect();
    let mut metrics = Vec::with_capacity(epochs);

    for epoch in 1..=epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch_size) {
            let m = chunk.len();
            let batch = Batch::new(x_all.select(Axis(0), chunk), y_all.select(Axis(0), chunk))?;
            let (pool_x, pool_y) = match cfg.partner {
                PartnerStrategy::BatchPermutation => (batch.features(), batch.soft_labels()),
                PartnerStrategy::DatasetUniform => (x_all.view(), y_all.view()),
            };
            let (loss, grads) = match cfg.mode {
                MixMode::None => backward(&params, &batch)?,
                MixMode::LabelMixing => {
                    let draws = MixDraws::draw(m, 1, &prior, cfg.partner, pool_x.nrows(), rng)?;
                    mixup_loss_with(&params, &batch, pool_x, pool_y, &draws)?
                }
                MixMode::LabelPreserving => {
                    let draws =
                        MixDraws::draw(m, cfg.samples, &prior, cfg.partner, pool_x.nrows(), rng)?;
                    dip_loss_preserving_with(&params, &batch, pool_x, &draws)?
                }
            };
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("loss diverged at epoch {epoch}")));
            }
            loss_sum += loss * m as f64;
            crate::nn::sgd_step(&mut params, &grads, optim, epoch)?;
        }
        metrics.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / n as f64,
            train_acc: raw_accuracy(&params, train_set)?,
            lr: optim.lr_at(epoch),
        });
    }
    Ok((params, metrics))
}

/// Per-row log-probabilities of the true class; used for evaluation losses.
pub(crate) fn row_xent(logits: ArrayView2<f64>, labels: ArrayView2<f64>) -> Vec<f64> {
    let lp = log_softmax(logits);
    lp.outer_iter()
        .zip(labels.outer_iter())
        .map(|(l, y)| -l.dot(&y))
        .collect()
}
