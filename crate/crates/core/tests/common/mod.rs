//! Independent reference implementations shared by the integration tests.
//!
//! Everything here is written with plain loops over slices so that it does
//! not share code paths with the library under test.
#![allow(dead_code)]

use dip_core::data::{gen_spirals, Dataset};
use dip_core::nn::{mlp_init, Activation, ModelParams};

/// Forward pass from a flat parameter vector (weights row-major
/// `fan_in x fan_out`, each followed by its bias).
pub fn naive_forward(sizes: &[usize], act: Activation, flat: &[f64], x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    let mut off = 0;
    let n_layers = sizes.len() - 1;
    for l in 0..n_layers {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let w = &flat[off..off + fan_in * fan_out];
        let b = &flat[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        off += fan_in * fan_out + fan_out;
        let mut z = vec![0.0; fan_out];
        for o in 0..fan_out {
            let mut s = b[o];
            for i in 0..fan_in {
                s += a[i] * w[i * fan_out + o];
            }
            z[o] = s;
        }
        if l + 1 < n_layers {
            for v in z.iter_mut() {
                *v = match act {
                    Activation::Relu => v.max(0.0),
                    Activation::Tanh => v.tanh(),
                };
            }
        }
        a = z;
    }
    a
}

/// `-sum_k y_k log softmax(z)_k` via log-sum-exp.
pub fn naive_xent(z: &[f64], y: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().zip(y).map(|(zk, yk)| yk * (lse - zk)).sum()
}

pub fn naive_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn lerp(a: &[f64], b: &[f64], lam: f64) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(x, y)| lam * x + (1.0 - lam) * y)
        .collect()
}

pub fn rows(m: ndarray::ArrayView2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

/// Central finite-difference gradient of `f` at `theta`.
pub fn finite_diff(theta: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = theta.to_vec();
    (0..theta.len())
        .map(|k| {
            p[k] = theta[k] + h;
            let up = f(&p);
            p[k] = theta[k] - h;
            let down = f(&p);
            p[k] = theta[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over all entries.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// `n` points per class from the default spirals, taken evenly along each arm.
pub fn spirals_subsample(n_per_class: usize, seed: u64) -> Dataset {
    let full = gen_spirals(500, 0.05, 1.75, seed).unwrap();
    let per = 500 / n_per_class;
    let idx: Vec<usize> = (0..2)
        .flat_map(|c| (0..n_per_class).map(move |i| c * 500 + i * per))
        .collect();
    full.select(&idx)
}

pub fn random_net(sizes: &[usize], act: Activation, seed: u64) -> ModelParams {
    mlp_init(sizes, act, seed).unwrap()
}

/// Biases are zero after init; give them values so bias gradients are exercised.
pub fn with_random_biases(params: &ModelParams, seed: u64) -> ModelParams {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let sizes = params.layer_sizes().to_vec();
    let mut flat = params.to_flat();
    let mut off = 0;
    for l in 0..sizes.len() - 1 {
        off += sizes[l] * sizes[l + 1];
        for b in &mut flat[off..off + sizes[l + 1]] {
            *b = rng.gen_range(-0.5..0.5);
        }
        off += sizes[l + 1];
    }
    params.with_flat(&flat).unwrap()
}
