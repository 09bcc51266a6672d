//! Data interpolating prediction.
//!
//! A classifier `f(x) = E[h(λx + (1-λ)x')]` that averages a base network
//! `h` over random interpolations with partners `x'` drawn from the training
//! inputs, trained through a Monte-Carlo upper bound of its empirical risk
//! and evaluated by Monte-Carlo marginalization at prediction time.
//!
//! Modules:
//! - [`nn`]: the base network, softmax cross-entropy, backprop, SGD.
//! - [`mixing`]: interpolation, the `λ` prior, partner selection.
//! - [`objective`]: plain, Mixup and label-preserving objectives, training,
//!   and Monte-Carlo / quadrature checks of the objectives.
//! - [`predictor`]: raw and marginalized prediction, evaluation, decision grids.
//! - [`bounds`]: the mixing constant `C_λ` and the Rademacher bound terms.
//! - [`data`]: two-spirals generation, CSV I/O, standardization, splitting.

pub mod bounds;
pub mod data;
pub mod error;
pub mod mixing;
pub mod nn;
pub mod objective;
pub mod predictor;
pub mod quadrature;
pub mod rng;

pub use error::{Error, Result};
pub use rng::RngStream;
