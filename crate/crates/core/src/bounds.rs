//! Rademacher-complexity bound for the mixed function class.
//!
//! With `C_λ = E[λ² + (1-λ)²]` the complexity of the loss class is bounded by
//!
//! ```text
//! ρ C_H / √n · sqrt( C_λ · mean_i ‖x_i‖² + (1 - C_λ) · ‖mean_i x_i‖² )
//! ```
//!
//! and the generalization bound adds `2 R + 3B sqrt(ln(2/δ) / 2n)` to the
//! empirical risk. `ρ` (Lipschitz constant of the loss), `C_H` (complexity
//! constant of the base class) and `B` (loss bound) are not computable for a
//! concrete network and are supplied by the caller. Cross-entropy is not
//! bounded, so `B` is a nominal cap.

use ndarray::{ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixing::{sample_lambda, LambdaPrior};
use crate::objective::LossEstimate;
use crate::predictor::Evaluation;

/// `E[λ² + (1-λ)²] = 1 - 2ab / ((a+b)(a+b+1))` for `λ ~ Beta(a, b)`.
pub fn c_lambda_closed(prior: &LambdaPrior) -> f64 {
    match prior {
        LambdaPrior::PointMassOne => 1.0,
        LambdaPrior::Beta(p) => {
            let (a, b) = (p.a(), p.b());
            let s = a + b;
            1.0 - 2.0 * a * b / (s * (s + 1.0))
        }
    }
}

pub const C_LAMBDA_MC_MIN_SAMPLES: usize = 10_000;

/// Sample mean of `λ² + (1-λ)²` and its standard error.
pub fn c_lambda_mc<R: Rng + ?Sized>(
    prior: &LambdaPrior,
    n_samples: usize,
    rng: &mut R,
) -> Result<LossEstimate> {
    if n_samples < C_LAMBDA_MC_MIN_SAMPLES {
        return Err(Error::config(format!(
            "need at least {C_LAMBDA_MC_MIN_SAMPLES} samples, got {n_samples}"
        )));
    }
    let values: Vec<f64> = (0..n_samples)
        .map(|_| {
            let l = sample_lambda(prior, rng);
            l * l + (1.0 - l) * (1.0 - l)
        })
        .collect();
    Ok(LossEstimate::from_samples(&values))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub bracket: f64,
    pub mean_sq_norm: f64,
    pub sq_norm_mean: f64,
}

/// Relative slack allowed in `mean ‖x‖² >= ‖mean x‖²` for rounding.
const JENSEN_SLACK: f64 = 1e-12;

/// Data term `sqrt(C_λ · mean‖x‖² + (1-C_λ) · ‖mean x‖²)`.
pub fn rademacher_bracket(features: ArrayView2<f64>, c_lambda: f64) -> Result<Bracket> {
    let n = features.nrows();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if !(0.0..=1.0).contains(&c_lambda) {
        return Err(Error::Domain(format!(
            "C_lambda = {c_lambda} outside [0, 1]"
        )));
    }
    let mean_sq_norm = features.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let mean = features.mean_axis(Axis(0)).expect("n >= 1");
    let sq_norm_mean = mean.dot(&mean);
    if sq_norm_mean > mean_sq_norm * (1.0 + JENSEN_SLACK) {
        return Err(Error::Numeric(format!(
            "mean squared norm {mean_sq_norm} below squared norm of mean {sq_norm_mean}"
        )));
    }
    let inner = c_lambda * mean_sq_norm + (1.0 - c_lambda) * sq_norm_mean;
    Ok(Bracket {
        bracket: inner.max(0.0).sqrt(),
        mean_sq_norm,
        sq_norm_mean,
    })
}

/// Assembled bound terms with every input echoed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub prior: LambdaPrior,
    pub c_lambda: f64,
    pub mean_sq_norm: f64,
    pub sq_norm_mean: f64,
    pub bracket: f64,
    pub rho: f64,
    pub c_h: f64,
    pub n: usize,
    /// `ρ C_H / √n · bracket`
    pub rad_bound: f64,
    pub delta: f64,
    /// `3B sqrt(ln(2/δ) / 2n)`
    pub confidence_term: f64,
    pub loss_bound_b: f64,
    /// `2 · rad_bound + confidence_term`: the bound on the expected minus empirical risk.
    pub gap_bound: f64,
}

pub fn bound_report(
    features: ArrayView2<f64>,
    prior: &LambdaPrior,
    rho: f64,
    c_h: f64,
    loss_bound_b: f64,
    delta: f64,
) -> Result<BoundReport> {
    let positive = |name: &str, v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::config(format!(
                "{name} must be positive and finite, got {v}"
            )))
        }
    };
    positive("rho", rho)?;
    positive("C_H", c_h)?;
    positive("B", loss_bound_b)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::config(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let c_lambda = c_lambda_closed(prior);
    let b = rademacher_bracket(features, c_lambda)?;
    let n = features.nrows();
    let nf = n as f64;
    let rad_bound = rho * c_h / nf.sqrt() * b.bracket;
    let confidence_term = 3.0 * loss_bound_b * ((2.0 / delta).ln() / (2.0 * nf)).sqrt();
    Ok(BoundReport {
        prior: *prior,
        c_lambda,
        mean_sq_norm: b.mean_sq_norm,
        sq_norm_mean: b.sq_norm_mean,
        bracket: b.bracket,
        rho,
        c_h,
        n,
        rad_bound,
        delta,
        confidence_term,
        loss_bound_b,
        gap_bound: 2.0 * rad_bound + confidence_term,
    })
}

/// Test minus train misclassification rate.
pub fn generalization_gap(train_eval: &Evaluation, test_eval: &Evaluation) -> f64 {
    test_eval.misclassification_rate - train_eval.misclassification_rate
}
