//! Dense feed-forward classifier with softmax cross-entropy and manual
//! backpropagation.
//!
//! Weights are stored `fan_in x fan_out`, so a layer computes `a·W + b` on
//! row-major batches. All arithmetic is `f64`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Hidden-layer nonlinearity. The output layer is always linear (logits).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Tanh => z.mapv(f64::tanh),
        }
    }

    /// Multiplies `grad` in place by the derivative at pre-activation `z`.
    fn backprop(self, z: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Relu => Zip::from(grad).and(z).for_each(|g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }),
            Activation::Tanh => Zip::from(grad).and(z).for_each(|g, &z| {
                let t = z.tanh();
                *g *= 1.0 - t * t;
            }),
        }
    }
}

/// Parameters of the base classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelDoc", try_from = "ModelDoc")]
pub struct ModelParams {
    layer_sizes: Vec<usize>,
    activation: Activation,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// On-disk layout: weights as row-major nested arrays.
#[derive(Serialize, Deserialize)]
struct ModelDoc {
    layer_sizes: Vec<usize>,
    activation: Activation,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
}

impl From<ModelParams> for ModelDoc {
    fn from(p: ModelParams) -> Self {
        ModelDoc {
            layer_sizes: p.layer_sizes,
            activation: p.activation,
            weights: p
                .weights
                .iter()
                .map(|w| w.outer_iter().map(|row| row.to_vec()).collect())
                .collect(),
            biases: p.biases.iter().map(|b| b.to_vec()).collect(),
        }
    }
}

impl TryFrom<ModelDoc> for ModelParams {
    type Error = Error;

    fn try_from(doc: ModelDoc) -> Result<Self> {
        let mut weights = Vec::with_capacity(doc.weights.len());
        for (l, rows) in doc.weights.into_iter().enumerate() {
            let n_rows = rows.len();
            let n_cols = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != n_cols) {
                return Err(Error::shape(format!("weights[{l}] has ragged rows")));
            }
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            let w = Array2::from_shape_vec((n_rows, n_cols), flat)
                .map_err(|e| Error::shape(e.to_string()))?;
            weights.push(w);
        }
        let biases = doc.biases.into_iter().map(Array1::from).collect();
        ModelParams::from_parts(doc.layer_sizes, doc.activation, weights, biases)
    }
}

fn validate_layer_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::config(format!(
            "network needs at least an input and an output layer, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::config(format!(
            "layer sizes must be positive, got {layer_sizes:?}"
        )));
    }
    Ok(())
}

/// Random initialization: `N(0, 1/fan_in)` weights and zero biases.
pub fn mlp_init(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<ModelParams> {
    validate_layer_sizes(layer_sizes)?;
    let mut rng = RngStream::new(seed);
    let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
    let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
    for pair in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let scale = 1.0 / (fan_in as f64).sqrt();
        let w = Array2::from_shape_simple_fn((fan_in, fan_out), || {
            scale * rng.sample::<f64, _>(StandardNormal)
        });
        weights.push(w);
        biases.push(Array1::zeros(fan_out));
    }
    Ok(ModelParams {
        layer_sizes: layer_sizes.to_vec(),
        activation,
        weights,
        biases,
    })
}

/// Cached intermediate values of a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (`inputs[0]` is the batch itself).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of every hidden layer.
    pre_activations: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
}

impl ModelParams {
    pub fn from_parts(
        layer_sizes: Vec<usize>,
        activation: Activation,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
    ) -> Result<Self> {
        validate_layer_sizes(&layer_sizes)?;
        let n_layers = layer_sizes.len() - 1;
        if weights.len() != n_layers || biases.len() != n_layers {
            return Err(Error::shape(format!(
                "expected {n_layers} weight/bias pairs, got {}/{}",
                weights.len(),
                biases.len()
            )));
        }
        for l in 0..n_layers {
            let want = (layer_sizes[l], layer_sizes[l + 1]);
            if weights[l].dim() != want {
                return Err(Error::shape(format!(
                    "weights[{l}] is {:?}, expected {want:?}",
                    weights[l].dim()
                )));
            }
            if biases[l].len() != want.1 {
                return Err(Error::shape(format!(
                    "biases[{l}] has length {}, expected {}",
                    biases[l].len(),
                    want.1
                )));
            }
        }
        let finite = weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && biases.iter().all(|b| b.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(ModelParams {
            layer_sizes,
            activation,
            weights,
            biases,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(Array2::len).sum::<usize>()
            + self.biases.iter().map(Array1::len).sum::<usize>()
    }

    /// All parameters in layer order, each weight matrix row-major followed by its bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    /// Copy of `self` with parameters replaced by `flat` (layout of [`Self::to_flat`]).
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.n_params() {
            return Err(Error::shape(format!(
                "flat vector has {} entries, model has {}",
                flat.len(),
                self.n_params()
            )));
        }
        let mut out = self.clone();
        let mut it = flat.iter().copied();
        for (w, b) in out.weights.iter_mut().zip(out.biases.iter_mut()) {
            w.iter_mut().for_each(|v| *v = it.next().unwrap());
            b.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        Ok(out)
    }

    fn check_input(&self, features: &ArrayView2<f64>) -> Result<()> {
        if features.ncols() != self.input_dim() {
            return Err(Error::shape(format!(
                "feature width {} does not match network input {}",
                features.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, features: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&features)?;
        let last = self.weights.len() - 1;
        let mut a = features.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = a.dot(w) + b;
            a = if l == last {
                z
            } else {
                self.activation.apply(&z)
            };
        }
        Ok(a)
    }

    pub fn forward_cached(&self, features: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(&features)?;
        let last = self.weights.len() - 1;
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut pre_activations = Vec::with_capacity(last);
        let mut a = features.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = a.dot(w) + b;
            inputs.push(a);
            if l == last {
                return Ok(ForwardCache {
                    inputs,
                    pre_activations,
                    logits: z,
                });
            }
            a = self.activation.apply(&z);
            pre_activations.push(z);
        }
        unreachable!("network has at least one layer")
    }

    /// Gradient of a scalar objective given its gradient with respect to the logits.
    pub fn backprop(&self, cache: &ForwardCache, dlogits: &Array2<f64>) -> Result<ParamGrads> {
        if dlogits.dim() != cache.logits.dim() {
            return Err(Error::shape(format!(
                "logit gradient {:?} does not match logits {:?}",
                dlogits.dim(),
                cache.logits.dim()
            )));
        }
        let n_layers = self.weights.len();
        let mut grad_w = vec![Array2::zeros((0, 0)); n_layers];
        let mut grad_b = vec![Array1::zeros(0); n_layers];
        let mut delta = dlogits.clone();
        for l in (0..n_layers).rev() {
            grad_w[l] = cache.inputs[l].t().dot(&delta);
            grad_b[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut upstream = delta.dot(&self.weights[l].t());
                self.activation
                    .backprop(&cache.pre_activations[l - 1], &mut upstream);
                delta = upstream;
            }
        }
        Ok(ParamGrads {
            weights: grad_w,
            biases: grad_b,
        })
    }
}

/// Features with (possibly soft) label distributions.
#[derive(Debug, Clone)]
pub struct Batch {
    features: Array2<f64>,
    soft_labels: Array2<f64>,
}

impl Batch {
    pub fn new(features: Array2<f64>, soft_labels: Array2<f64>) -> Result<Self> {
        check_label_rows(&soft_labels.view())?;
        if features.nrows() != soft_labels.nrows() {
            return Err(Error::shape(format!(
                "{} feature rows but {} label rows",
                features.nrows(),
                soft_labels.nrows()
            )));
        }
        Ok(Batch {
            features,
            soft_labels,
        })
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn soft_labels(&self) -> ArrayView2<'_, f64> {
        self.soft_labels.view()
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }
}

pub(crate) fn check_label_rows(labels: &ArrayView2<f64>) -> Result<()> {
    for (i, row) in labels.outer_iter().enumerate() {
        if row.iter().any(|&v| v.is_nan() || v < 0.0) {
            return Err(Error::Domain(format!(
                "label row {i} has a negative or NaN entry"
            )));
        }
        let s = row.sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "label row {i} sums to {s}, expected 1"
            )));
        }
    }
    Ok(())
}

/// Row-wise `log softmax` with max-shift stabilization.
pub fn log_softmax(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub fn softmax(logits: ArrayView2<f64>) -> Array2<f64> {
    log_softmax(logits).mapv(f64::exp)
}

/// Mean soft-label cross-entropy and its gradient `(softmax - y) / m`.
pub fn softmax_xent(
    logits: ArrayView2<f64>,
    soft_labels: ArrayView2<f64>,
) -> Result<(f64, Array2<f64>)> {
    if logits.dim() != soft_labels.dim() {
        return Err(Error::shape(format!(
            "logits {:?} vs labels {:?}",
            logits.dim(),
            soft_labels.dim()
        )));
    }
    if logits.iter().chain(soft_labels.iter()).any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN in loss input".into()));
    }
    let m = logits.nrows();
    if m == 0 {
        return Err(Error::EmptyDataset);
    }
    let log_p = log_softmax(logits);
    // Written as sum_k y_k * (-log p_k) so the value is exactly linear in y.
    let total: f64 = Zip::from(&log_p)
        .and(&soft_labels)
        .fold(0.0, |acc, &lp, &y| acc + y * -lp);
    let inv_m = 1.0 / m as f64;
    let mut grad = log_p.mapv(f64::exp);
    Zip::from(&mut grad)
        .and(&soft_labels)
        .for_each(|g, &y| *g = (*g - y) * inv_m);
    Ok((total * inv_m, grad))
}

/// Loss and parameter gradients of `softmax_xent(forward(batch))`.
pub fn backward(params: &ModelParams, batch: &Batch) -> Result<(f64, ParamGrads)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let cache = params.forward_cached(batch.features())?;
    let (loss, dlogits) = softmax_xent(cache.logits.view(), batch.soft_labels())?;
    let grads = params.backprop(&cache, &dlogits)?;
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        ParamGrads {
            weights: params
                .weights
                .iter()
                .map(|w| Array2::zeros(w.dim()))
                .collect(),
            biases: params
                .biases
                .iter()
                .map(|b| Array1::zeros(b.len()))
                .collect(),
        }
    }

    /// Same layout as [`ModelParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.to_flat().iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// SGD with heavy-ball momentum and a piecewise-constant learning-rate schedule.
#[derive(Debug, Clone)]
pub struct OptimState {
    learning_rate: f64,
    momentum: f64,
    schedule: Vec<(usize, f64)>,
    velocity_w: Vec<Array2<f64>>,
    velocity_b: Vec<Array1<f64>>,
}

impl OptimState {
    /// `schedule` entries `(epoch, multiplier)` apply from `epoch` onward and compound.
    pub fn new(
        learning_rate: f64,
        momentum: f64,
        schedule: Vec<(usize, f64)>,
        params: &ModelParams,
    ) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        if schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::config("schedule epochs must be strictly increasing"));
        }
        if schedule.iter().any(|&(_, f)| !(f > 0.0 && f.is_finite())) {
            return Err(Error::config("schedule multipliers must be positive"));
        }
        let zeros = ParamGrads::zeros_like(params);
        Ok(OptimState {
            learning_rate,
            momentum,
            schedule,
            velocity_w: zeros.weights,
            velocity_b: zeros.biases,
        })
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.schedule
            .iter()
            .filter(|&&(e, _)| e <= epoch)
            .fold(self.learning_rate, |lr, &(_, f)| lr * f)
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }
}

/// `v <- momentum * v - lr(epoch) * g; params <- params + v`.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &ParamGrads,
    state: &mut OptimState,
    epoch: usize,
) -> Result<()> {
    let congruent = grads.weights.len() == params.weights.len()
        && grads.biases.len() == params.biases.len()
        && state.velocity_w.len() == params.weights.len()
        && grads
            .weights
            .iter()
            .zip(&params.weights)
            .all(|(g, w)| g.dim() == w.dim())
        && grads
            .biases
            .iter()
            .zip(&params.biases)
            .all(|(g, b)| g.len() == b.len());
    if !congruent {
        return Err(Error::shape("gradient shapes do not match parameters"));
    }
    let lr = state.lr_at(epoch);
    let mu = state.momentum;
    for l in 0..params.weights.len() {
        Zip::from(&mut state.velocity_w[l])
            .and(&grads.weights[l])
            .for_each(|v, &g| *v = mu * *v - lr * g);
        params.weights[l] += &state.velocity_w[l];
        Zip::from(&mut state.velocity_b[l])
            .and(&grads.biases[l])
            .for_each(|v, &g| *v = mu * *v - lr * g);
        params.biases[l] += &state.velocity_b[l];
    }
    Ok(())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn hand_net() -> ModelParams {
        // 2 -> 2 (relu) -> 2
        ModelParams::from_parts(
            vec![2, 2, 2],
            Activation::Relu,
            vec![
                array![[1.0, -1.0], [2.0, 0.5]],
                array![[1.0, 2.0], [-3.0, 1.0]],
            ],
            vec![array![0.5, 0.25], array![0.1, -0.2]],
        )
        .unwrap()
    }

    #[test]
    fn init_shapes_and_determinism() {
        let a = mlp_init(&[2, 8, 2], Activation::Relu, 42).unwrap();
        let b = mlp_init(&[2, 8, 2], Activation::Relu, 42).unwrap();
        assert_eq!(a.weights()[0].dim(), (2, 8));
        assert_eq!(a.weights()[1].dim(), (8, 2));
        assert_eq!(a.to_flat(), b.to_flat());
        assert_ne!(a, mlp_init(&[2, 8, 2], Activation::Relu, 43).unwrap());
    }

    #[test]
    fn init_rejects_degenerate_architecture() {
        assert!(matches!(
            mlp_init(&[2], Activation::Relu, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            mlp_init(&[], Activation::Relu, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            mlp_init(&[2, 0, 2], Activation::Relu, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn init_biases_are_zero() {
        let p = mlp_init(&[2, 16, 16, 3], Activation::Tanh, 7).unwrap();
        assert!(p.biases().iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let p = mlp_init(&[3, 4, 2], Activation::Relu, 1).unwrap();
        let zero = p.with_flat(&vec![0.0; p.n_params()]).unwrap();
        let x = array![[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]];
        let z = zero.forward(x.view()).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_matches_hand_computation() {
        // x=(1,0): z1 = (1+0.5, -1+0.25) = (1.5, -0.75); relu -> (1.5, 0)
        // logits = (1.5*1 + 0.1, 1.5*2 - 0.2) = (1.6, 2.8)
        let z = hand_net().forward(array![[1.0, 0.0]].view()).unwrap();
        assert_abs_diff_eq!(z[[0, 0]], 1.6, epsilon = 1e-15);
        assert_abs_diff_eq!(z[[0, 1]], 2.8, epsilon = 1e-15);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let err = hand_net().forward(array![[1.0, 0.0, 2.0]].view());
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn identical_rows_identical_logits() {
        let p = mlp_init(&[2, 5, 3], Activation::Tanh, 3).unwrap();
        let z = p.forward(array![[0.3, -0.7], [0.3, -0.7]].view()).unwrap();
        assert_eq!(z.row(0), z.row(1));
    }

    #[test]
    fn xent_uniform_logits() {
        let z = array![[0.7, 0.7]];
        let (l1, _) = softmax_xent(z.view(), array![[1.0, 0.0]].view()).unwrap();
        let (l2, _) = softmax_xent(z.view(), array![[0.5, 0.5]].view()).unwrap();
        assert_abs_diff_eq!(l1, std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(l2, std::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn xent_rejects_nan() {
        let r = softmax_xent(array![[f64::NAN, 0.0]].view(), array![[1.0, 0.0]].view());
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn xent_is_stable_for_large_logits() {
        let (l, g) =
            softmax_xent(array![[1000.0, -1000.0]].view(), array![[0.0, 1.0]].view()).unwrap();
        assert_abs_diff_eq!(l, 2000.0, epsilon = 1e-9);
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn duplicated_rows_leave_gradient_unchanged() {
        let p = mlp_init(&[2, 5, 3], Activation::Relu, 11).unwrap();
        let x = array![[0.2, -0.4], [1.0, 0.3]];
        let y = array![[1.0, 0.0, 0.0], [0.0, 0.3, 0.7]];
        let (l1, g1) = backward(&p, &Batch::new(x.clone(), y.clone()).unwrap()).unwrap();
        let x2 = ndarray::concatenate![Axis(0), x, x];
        let y2 = ndarray::concatenate![Axis(0), y, y];
        let (l2, g2) = backward(&p, &Batch::new(x2, y2).unwrap()).unwrap();
        assert_abs_diff_eq!(l1, l2, epsilon = 1e-14);
        for (a, b) in g1.to_flat().iter().zip(g2.to_flat()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn batch_rejects_bad_label_rows() {
        let x = array![[0.0, 0.0]];
        assert!(Batch::new(x.clone(), array![[0.6, 0.6]]).is_err());
        assert!(Batch::new(x.clone(), array![[1.5, -0.5]]).is_err());
        assert!(Batch::new(x, array![[0.25, 0.75]]).is_ok());
    }

    #[test]
    fn vanilla_sgd_step() {
        let mut p = hand_net();
        let before = p.to_flat();
        let mut g = ParamGrads::zeros_like(&p);
        g.weights[0][[1, 0]] = 2.0;
        g.biases[1][1] = -1.0;
        let mut st = OptimState::new(0.1, 0.0, vec![], &p).unwrap();
        sgd_step(&mut p, &g, &mut st, 1).unwrap();
        let delta: Vec<f64> = p
            .to_flat()
            .iter()
            .zip(&before)
            .map(|(a, b)| a - b)
            .collect();
        let expect: Vec<f64> = g.to_flat().iter().map(|g| -0.1 * g).collect();
        for (d, e) in delta.iter().zip(&expect) {
            assert_abs_diff_eq!(*d, *e, epsilon = 1e-15);
        }
    }

    #[test]
    fn schedule_semantics() {
        let p = hand_net();
        let st = OptimState::new(1.0, 0.9, vec![(2, 0.1)], &p).unwrap();
        assert_eq!(st.lr_at(1), 1.0);
        assert_eq!(st.lr_at(2), 0.1);
        let st = OptimState::new(0.1, 0.9, vec![(100, 0.1), (150, 0.1)], &p).unwrap();
        assert_abs_diff_eq!(st.lr_at(99), 0.1);
        assert_abs_diff_eq!(st.lr_at(100), 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(st.lr_at(200), 0.001, epsilon = 1e-15);
    }

    #[test]
    fn momentum_matches_hand_unroll() {
        let mut p = hand_net();
        let w0 = p.to_flat();
        let mut g1 = ParamGrads::zeros_like(&p);
        let mut g2 = ParamGrads::zeros_like(&p);
        g1.weights[0][[0, 1]] = 0.5;
        g1.biases[0][0] = -2.0;
        g2.weights[0][[0, 1]] = -1.5;
        g2.weights[1][[1, 1]] = 3.0;
        let (lr, mu) = (0.05, 0.9);
        let mut st = OptimState::new(lr, mu, vec![], &p).unwrap();
        sgd_step(&mut p, &g1, &mut st, 1).unwrap();
        sgd_step(&mut p, &g2, &mut st, 2).unwrap();
        let (f1, f2) = (g1.to_flat(), g2.to_flat());
        for (i, got) in p.to_flat().iter().enumerate() {
            let v1 = -lr * f1[i];
            let v2 = mu * v1 - lr * f2[i];
            assert_abs_diff_eq!(*got, w0[i] + v1 + v2, epsilon = 1e-12);
        }
    }

    #[test]
    fn optim_rejects_bad_settings() {
        let p = hand_net();
        assert!(OptimState::new(0.0, 0.9, vec![], &p).is_err());
        assert!(OptimState::new(-1.0, 0.9, vec![], &p).is_err());
        assert!(OptimState::new(0.1, 1.0, vec![], &p).is_err());
        assert!(OptimState::new(0.1, 0.9, vec![(5, 0.1), (5, 0.1)], &p).is_err());
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let p = mlp_init(&[2, 7, 3], Activation::Tanh, 99).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let q: ModelParams = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["weights"][0].as_array().unwrap().len(), 2);
        assert_eq!(v["weights"][0][0].as_array().unwrap().len(), 7);
    }

    #[test]
    fn json_rejects_inconsistent_shapes() {
        let doc = r#"{"layer_sizes":[2,2],"activation":"relu","weights":[[[1.0,2.0]]],"biases":[[0.0,0.0]]}"#;
        assert!(serde_json::from_str::<ModelParams>(doc).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }
}
