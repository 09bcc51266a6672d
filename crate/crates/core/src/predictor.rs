//! Prediction with the marginalized classifier.
//!
//! In `Dip` mode the logits for `x` are the average of `h(λ_j x + (1-λ_j) x'_j)`
//! over `S_test` draws, `λ_j` from the prior and `x'_j` uniform over the
//! partner pool; probabilities are the softmax of that average. Row `i` of a
//! batch always uses stream `i` derived from the configured seed, so results
//! do not depend on evaluation order or thread count.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mixing::{mix_rows, LambdaPrior, MixDraws, PartnerStrategy};
use crate::nn::{argmax, softmax, ModelParams};
use crate::objective::row_xent;
use crate::rng::RngStream;

pub const DEFAULT_S_TEST: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictMode {
    Raw,
    Dip,
}

#[derive(Debug, Clone)]
pub struct PredictorConfig {
    pub mode: PredictMode,
    pub s_test: usize,
    pub prior: LambdaPrior,
    /// Partner candidates, normally the (preprocessed) training inputs.
    pub partner_pool: Array2<f64>,
    pub seed: u64,
}

impl PredictorConfig {
    pub fn raw() -> Self {
        PredictorConfig {
            mode: PredictMode::Raw,
            s_test: DEFAULT_S_TEST,
            prior: LambdaPrior::PointMassOne,
            partner_pool: Array2::zeros((0, 0)),
            seed: 0,
        }
    }

    pub fn dip(prior: LambdaPrior, partner_pool: Array2<f64>, s_test: usize, seed: u64) -> Self {
        PredictorConfig {
            mode: PredictMode::Dip,
            s_test,
            prior,
            partner_pool,
            seed,
        }
    }

    pub fn validate(&self, input_dim: usize) -> Result<()> {
        if self.mode == PredictMode::Raw {
            return Ok(());
        }
        if self.s_test == 0 {
            return Err(Error::config("S_test must be at least 1"));
        }
        if self.partner_pool.nrows() == 0 {
            return Err(Error::config(
                "marginalized prediction needs a non-empty partner pool",
            ));
        }
        if self.partner_pool.ncols() != input_dim {
            return Err(Error::shape(format!(
                "partner pool has width {}, network input is {input_dim}",
                self.partner_pool.ncols()
            )));
        }
        Ok(())
    }

    fn collapses_to_raw(&self) -> bool {
        self.mode == PredictMode::Raw || self.prior == LambdaPrior::PointMassOne
    }
}

fn dip_logits_row(
    params: &ModelParams,
    x: ArrayView1<f64>,
    cfg: &PredictorConfig,
    stream: &mut RngStream,
) -> Result<Array1<f64>> {
    let pool = cfg.partner_pool.view();
    let draws = MixDraws::draw(
        1,
        cfg.s_test,
        &cfg.prior,
        PartnerStrategy::DatasetUniform,
        pool.nrows(),
        stream,
    )?;
    let xs = x.insert_axis(Axis(0));
    let mixed = mix_rows(xs, pool, &draws)?;
    let logits = params.forward(mixed.view())?;
    Ok(logits.mean_axis(Axis(0)).expect("s_test >= 1"))
}

/// Output-layer scores of the configured predictor for every row.
pub fn predict_logits(
    params: &ModelParams,
    features: ArrayView2<f64>,
    cfg: &PredictorConfig,
) -> Result<Array2<f64>> {
    cfg.validate(params.input_dim())?;
    if cfg.collapses_to_raw() {
        return params.forward(features);
    }
    if features.ncols() != params.input_dim() {
        return Err(Error::shape(format!(
            "feature width {} does not match network input {}",
            features.ncols(),
            params.input_dim()
        )));
    }
    let root = RngStream::new(cfg.seed);
    let rows: Vec<Array1<f64>> = (0..features.nrows())
        .into_par_iter()
        .map(|i| {
            let mut stream = root.derive(i as u64);
            dip_logits_row(params, features.row(i), cfg, &mut stream)
        })
        .collect::<Result<_>>()?;
    let mut out = Array2::zeros((features.nrows(), params.n_classes()));
    for (mut dst, src) in out.outer_iter_mut().zip(rows) {
        dst.assign(&src);
    }
    Ok(out)
}

/// Class probabilities for every row.
pub fn predict_batch(
    params: &ModelParams,
    features: ArrayView2<f64>,
    cfg: &PredictorConfig,
) -> Result<Array2<f64>> {
    Ok(softmax(predict_logits(params, features, cfg)?.view()))
}

/// Class probabilities for a single input (stream 0 of the seed).
pub fn predict(
    params: &ModelParams,
    x: ArrayView1<f64>,
    cfg: &PredictorConfig,
) -> Result<Vec<f64>> {
    let probs = predict_batch(params, x.insert_axis(Axis(0)), cfg)?;
    Ok(probs.row(0).to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub misclassification_rate: f64,
    pub mean_loss: f64,
}

/// Accuracy (argmax, ties to the lowest class), its complement, and the
/// mean cross-entropy of the predicted distributions.
pub fn evaluate(
    params: &ModelParams,
    dataset: &Dataset,
    cfg: &PredictorConfig,
) -> Result<Evaluation> {
    if dataset.n_classes() != params.n_classes() {
        return Err(Error::shape(format!(
            "dataset has {} classes, network predicts {}",
            dataset.n_classes(),
            params.n_classes()
        )));
    }
    let logits = predict_logits(params, dataset.features(), cfg)?;
    let correct = logits
        .outer_iter()
        .zip(dataset.classes())
        .filter(|(z, c)| argmax(&z.to_vec()) == *c)
        .count();
    let losses = row_xent(logits.view(), dataset.labels());
    let n = dataset.len() as f64;
    let accuracy = correct as f64 / n;
    Ok(Evaluation {
        accuracy,
        misclassification_rate: 1.0 - accuracy,
        mean_loss: losses.iter().sum::<f64>() / n,
    })
}

/// Predicted class and its probability on a regular grid over a 2-D box.
///
/// Cell `r * resolution + c` sits at `(xs[c], ys[r])`; `ys` ascends.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionGrid {
    pub resolution: usize,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub classes: Vec<usize>,
    pub max_prob: Vec<f64>,
    pub n_classes: usize,
}

fn axis_points(range: (f64, f64), res: usize) -> Vec<f64> {
    if res == 1 {
        return vec![0.5 * (range.0 + range.1)];
    }
    let step = (range.1 - range.0) / (res - 1) as f64;
    (0..res).map(|i| range.0 + step * i as f64).collect()
}

pub fn decision_grid(
    params: &ModelParams,
    cfg: &PredictorConfig,
    x_range: (f64, f64),
    y_range: (f64, f64),
    resolution: usize,
) -> Result<DecisionGrid> {
    decision_grid_mapped(params, cfg, x_range, y_range, resolution, |pts| {
        Ok(pts.to_owned())
    })
}

/// Like [`decision_grid`], with `to_inputs` mapping box coordinates to
/// network inputs (e.g. standardization).
pub fn decision_grid_mapped<F>(
    params: &ModelParams,
    cfg: &PredictorConfig,
    x_range: (f64, f64),
    y_range: (f64, f64),
    resolution: usize,
    to_inputs: F,
) -> Result<DecisionGrid>
where
    F: FnOnce(ArrayView2<f64>) -> Result<Array2<f64>>,
{
    if params.input_dim() != 2 {
        return Err(Error::UnsupportedDimension(params.input_dim()));
    }
    if resolution == 0 {
        return Err(Error::config("grid resolution must be positive"));
    }
    let ok_range = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 < r.1;
    if !ok_range(x_range) || !ok_range(y_range) {
        return Err(Error::config("grid ranges need finite min < max"));
    }
    let xs = axis_points(x_range, resolution);
    let ys = axis_points(y_range, resolution);
    let pts = Array2::from_shape_fn((resolution * resolution, 2), |(i, k)| {
        if k == 0 {
            xs[i % resolution]
        } else {
            ys[i / resolution]
        }
    });
    let inputs = to_inputs(pts.view())?;
    let probs = predict_batch(params, inputs.view(), cfg)?;
    let mut classes = Vec::with_capacity(probs.nrows());
    let mut max_prob = Vec::with_capacity(probs.nrows());
    for row in probs.outer_iter() {
        let c = argmax(&row.to_vec());
        classes.push(c);
        max_prob.push(row[c]);
    }
    Ok(DecisionGrid {
        resolution,
        xs,
        ys,
        classes,
        max_prob,
        n_classes: params.n_classes(),
    })
}

impl DecisionGrid {
    pub fn class_at(&self, row: usize, col: usize) -> usize {
        self.classes[row * self.resolution + col]
    }

    /// `x,y,class,prob`, one row per cell in row-major order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,y,class,prob")?;
        for (i, (&c, &p)) in self.classes.iter().zip(&self.max_prob).enumerate() {
            let (x, y) = (self.xs[i % self.resolution], self.ys[i / self.resolution]);
            writeln!(out, "{x:.16e},{y:.16e},{c},{p:.16e}")?;
        }
        Ok(())
    }

    /// Plain (P2) PGM of class indices; the top image row is the largest `y`.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let res = self.resolution;
        let max_val = self.n_classes.saturating_sub(1).max(1);
        writeln!(out, "P2")?;
        writeln!(out, "{res} {res}")?;
        writeln!(out, "{max_val}")?;
        for r in (0..res).rev() {
            let line: Vec<String> = (0..res).map(|c| self.class_at(r, c).to_string()).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn disagreement(&self, other: &DecisionGrid) -> usize {
        self.classes
            .iter()
            .zip(&other.classes)
            .filter(|(a, b)| a != b)
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixing::{lambda_prior, MixMode};
    use crate::nn::{mlp_init, Activation};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn net() -> ModelParams {
        mlp_init(&[2, 8, 3], Activation::Tanh, 12).unwrap()
    }

    fn pool() -> Array2<f64> {
        array![[0.0, 1.0], [1.0, 0.0], [-1.0, -1.0], [0.5, 0.2]]
    }

    #[test]
    fn probabilities_are_normalized() {
        let p = net();
        let prior = lambda_prior(MixMode::LabelPreserving, 1.0).unwrap();
        for cfg in [
            PredictorConfig::raw(),
            PredictorConfig::dip(prior, pool(), 50, 3),
        ] {
            let probs = predict_batch(&p, pool().view(), &cfg).unwrap();
            for row in probs.outer_iter() {
                assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-9);
                assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn degenerate_prior_equals_raw() {
        let p = net();
        let x = array![[0.3, -0.8], [2.0, 1.0]];
        let raw = predict_batch(&p, x.view(), &PredictorConfig::raw()).unwrap();
        let cfg = PredictorConfig::dip(LambdaPrior::PointMassOne, pool(), 20, 1);
        assert_eq!(predict_batch(&p, x.view(), &cfg).unwrap(), raw);
    }

    #[test]
    fn self_pool_equals_raw() {
        let p = net();
        let x = array![0.3, -0.8];
        let raw = predict(&p, x.view(), &PredictorConfig::raw()).unwrap();
        let prior = lambda_prior(MixMode::LabelPreserving, 2.0).unwrap();
        let cfg = PredictorConfig::dip(prior, x.clone().insert_axis(Axis(0)), 64, 9);
        let dip = predict(&p, x.view(), &cfg).unwrap();
        for (a, b) in raw.iter().zip(&dip) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn dip_is_deterministic_per_seed() {
        let p = net();
        let prior = lambda_prior(MixMode::LabelMixing, 1.0).unwrap();
        let cfg = PredictorConfig::dip(prior, pool(), 30, 4);
        let a = predict_batch(&p, pool().view(), &cfg).unwrap();
        let b = predict_batch(&p, pool().view(), &cfg).unwrap();
        assert_eq!(a, b);
        let other = PredictorConfig { seed: 5, ..cfg };
        assert_ne!(a, predict_batch(&p, pool().view(), &other).unwrap());
    }

    #[test]
    fn empty_pool_is_rejected() {
        let prior = lambda_prior(MixMode::LabelPreserving, 1.0).unwrap();
        let cfg = PredictorConfig::dip(prior, Array2::zeros((0, 2)), 10, 0);
        assert!(matches!(
            predict(&net(), array![0.0, 0.0].view(), &cfg),
            Err(Error::Config(_))
        ));
    }

    fn linear(w: [[f64; 2]; 2], b: [f64; 2]) -> ModelParams {
        ModelParams::from_parts(
            vec![2, 2],
            Activation::Relu,
            vec![array![[w[0][0], w[0][1]], [w[1][0], w[1][1]]]],
            vec![array![b[0], b[1]]],
        )
        .unwrap()
    }

    #[test]
    fn evaluate_all_correct() {
        // class 1 iff x > 0
        let p = linear([[-1.0, 1.0], [0.0, 0.0]], [0.0, 0.0]);
        let ds =
            Dataset::from_class_indices(array![[-1.0, 0.0], [2.0, 0.0], [3.0, 1.0]], &[0, 1, 1], 2)
                .unwrap();
        let e = evaluate(&p, &ds, &PredictorConfig::raw()).unwrap();
        assert_eq!(e.accuracy, 1.0);
        assert_eq!(e.misclassification_rate, 0.0);
        assert!(e.mean_loss < std::f64::consts::LN_2);
    }

    #[test]
    fn uniform_logits_tie_break_to_class_zero() {
        let p = linear([[0.0, 0.0], [0.0, 0.0]], [0.0, 0.0]);
        let x = Array2::from_shape_fn((10, 2), |(i, k)| (i + k) as f64);
        let classes: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let ds = Dataset::from_class_indices(x, &classes, 2).unwrap();
        let e = evaluate(&p, &ds, &PredictorConfig::raw()).unwrap();
        assert_eq!(e.accuracy, 0.5);
        assert_abs_diff_eq!(e.mean_loss, std::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn hand_scored_run() {
        // Logits (x, -x): predicts class 0 iff x >= 0 (tie at 0 goes to 0).
        let p = linear([[1.0, -1.0], [0.0, 0.0]], [0.0, 0.0]);
        let xs = [-2.0, -1.0, 0.0, 0.5, 1.0, 3.0, -0.5, 2.0, -3.0, 0.0];
        let labels = [1, 0, 0, 0, 1, 0, 1, 1, 1, 1];
        // predicted:   1  1  0  0  0  0  1  0  1  0
        // correct:     y  n  y  y  n  y  y  n  y  n  -> 6 / 10
        let feats = Array2::from_shape_fn((10, 2), |(i, k)| if k == 0 { xs[i] } else { 7.0 });
        let ds = Dataset::from_class_indices(feats, &labels, 2).unwrap();
        let e = evaluate(&p, &ds, &PredictorConfig::raw()).unwrap();
        assert_abs_diff_eq!(e.accuracy, 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(e.misclassification_rate, 0.4, epsilon = 1e-15);
        // loss_i = ln(1 + exp(-2 x_i s_i)), s = +1 for class 0, -1 for class 1.
        let want: f64 = xs
            .iter()
            .zip(labels)
            .map(|(&x, y)| {
                let s = if y == 0 { 1.0 } else { -1.0 };
                (1.0 + (-2.0 * x * s).exp()).ln()
            })
            .sum::<f64>()
            / 10.0;
        assert_abs_diff_eq!(e.mean_loss, want, epsilon = 1e-12);
    }

    #[test]
    fn grid_cells_and_formats() {
        let p = net();
        let g = decision_grid(&p, &PredictorConfig::raw(), (-1.0, 1.0), (-1.0, 1.0), 2).unwrap();
        assert_eq!(g.classes.len(), 4);
        assert!(g.classes.iter().all(|&c| c < 3));
        let mut csv = Vec::new();
        g.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 5);
        let mut pgm = Vec::new();
        g.write_pgm(&mut pgm).unwrap();
        let text = String::from_utf8(pgm).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(&lines[..3], &["P2", "2 2", "2"]);
        assert_eq!(
            lines[3],
            format!("{} {}", g.class_at(1, 0), g.class_at(1, 1))
        );
    }

    #[test]
    fn grid_rejects_non_planar_models() {
        let p = mlp_init(&[3, 4, 2], Activation::Relu, 0).unwrap();
        assert!(matches!(
            decision_grid(&p, &PredictorConfig::raw(), (0.0, 1.0), (0.0, 1.0), 4),
            Err(Error::UnsupportedDimension(3))
        ));
    }

    #[test]
    fn odd_network_gives_antisymmetric_grid() {
        // Bias-free tanh net with output columns (w, -w): h(-x) swaps the logits.
        let w1 = array![[0.7, -1.2, 0.4], [1.5, 0.3, -0.9]];
        let v = array![[1.1], [-0.6], [0.8]];
        let w2 = ndarray::concatenate![Axis(1), v, -&v];
        let p = ModelParams::from_parts(
            vec![2, 3, 2],
            Activation::Tanh,
            vec![w1, w2],
            vec![Array1::zeros(3), Array1::zeros(2)],
        )
        .unwrap();
        let res = 16;
        let g = decision_grid(&p, &PredictorConfig::raw(), (-2.0, 2.0), (-2.0, 2.0), res).unwrap();
        for r in 0..res {
            for c in 0..res {
                assert_eq!(g.class_at(r, c), 1 - g.class_at(res - 1 - r, res - 1 - c));
            }
        }
    }
}
