//! Sample mixing: the interpolation `λx + (1-λ)x'`, the prior over `λ`,
//! and partner selection.

use ndarray::{Array2, ArrayView1, ArrayView2, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixMode {
    None,
    LabelMixing,
    LabelPreserving,
}

impl std::fmt::Display for MixMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MixMode::None => "none",
            MixMode::LabelMixing => "label_mixing",
            MixMode::LabelPreserving => "label_preserving",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartnerStrategy {
    /// A random permutation of the current mini-batch.
    BatchPermutation,
    /// I.i.d. uniform draws from the whole pool (the empirical distribution).
    DatasetUniform,
}

/// Shape parameters of a Beta distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    a: f64,
    b: f64,
}

impl BetaParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::config(format!(
                "Beta shape parameters must be positive, got ({a}, {b})"
            )));
        }
        Ok(BetaParams { a, b })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    pub fn variance(&self) -> f64 {
        let s = self.a + self.b;
        self.a * self.b / (s * s * (s + 1.0))
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        (self.a - 1.0) * x.ln() + (self.b - 1.0) * (1.0 - x).ln() - ln_beta(self.a, self.b)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        self.ln_pdf(x).exp()
    }
}

pub(crate) fn ln_beta(a: f64, b: f64) -> f64 {
    libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b)
}

/// The distribution `p(λ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaPrior {
    /// Point mass at `λ = 1`: no mixing, the classifier reduces to the base network.
    PointMassOne,
    Beta(BetaParams),
}

impl std::fmt::Display for LambdaPrior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LambdaPrior::PointMassOne => f.write_str("delta(1)"),
            LambdaPrior::Beta(p) => write!(f, "Beta({}, {})", p.a, p.b),
        }
    }
}

/// Prior used by each training mode: `Beta(α+1, α)` when the label is
/// preserved, `Beta(α, α)` when labels are mixed, a point mass otherwise.
pub fn lambda_prior(mode: MixMode, alpha: f64) -> Result<LambdaPrior> {
    match mode {
        MixMode::None => Ok(LambdaPrior::PointMassOne),
        _ if alpha.is_nan() || alpha <= 0.0 => Err(Error::config(format!(
            "alpha must be positive for {mode}, got {alpha}"
        ))),
        MixMode::LabelMixing => Ok(LambdaPrior::Beta(BetaParams::new(alpha, alpha)?)),
        MixMode::LabelPreserving => Ok(LambdaPrior::Beta(BetaParams::new(alpha + 1.0, alpha)?)),
    }
}

/// Mixing configuration used during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixConfig {
    pub mode: MixMode,
    pub alpha: f64,
    /// Draws per example inside the objective.
    pub samples: usize,
    pub partner: PartnerStrategy,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig {
            mode: MixMode::None,
            alpha: 0.0,
            samples: 1,
            partner: PartnerStrategy::BatchPermutation,
        }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode == MixMode::None {
            return Ok(());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!(
                "alpha must be positive for {}, got {}",
                self.mode, self.alpha
            )));
        }
        if self.samples == 0 {
            return Err(Error::config("sample count S must be at least 1"));
        }
        if self.mode == MixMode::LabelMixing && self.samples != 1 {
            return Err(Error::config(format!(
                "label_mixing uses one draw per example, got S = {}",
                self.samples
            )));
        }
        Ok(())
    }

    pub fn prior(&self) -> Result<LambdaPrior> {
        lambda_prior(self.mode, self.alpha)
    }
}

/// `λx + (1-λ)x'`.
pub fn mix(x: ArrayView1<f64>, x_prime: ArrayView1<f64>, lambda: f64) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    if x.len() != x_prime.len() {
        return Err(Error::shape(format!(
            "cannot mix vectors of length {} and {}",
            x.len(),
            x_prime.len()
        )));
    }
    Ok(x.iter()
        .zip(x_prime.iter())
        .map(|(&a, &b)| mix_scalar(a, b, lambda))
        .collect())
}

#[inline]
pub(crate) fn mix_scalar(a: f64, b: f64, lambda: f64) -> f64 {
    lambda * a + (1.0 - lambda) * b
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!(
            "mixing ratio {lambda} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Gamma(shape, 1) variate by Marsaglia and Tsang's squeeze method.
///
/// Shapes below one are boosted to `shape + 1` and corrected by `U^(1/shape)`.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let u: f64 = rng.gen();
        return sample_gamma(shape + 1.0, rng) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let (x, v) = loop {
            let x: f64 = rng.sample(StandardNormal);
            let v = 1.0 + c * x;
            if v > 0.0 {
                break (x, v * v * v);
            }
        };
        let u: f64 = rng.gen();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// One draw of `λ`, clamped to `[0, 1]`.
pub fn sample_lambda<R: Rng + ?Sized>(prior: &LambdaPrior, rng: &mut R) -> f64 {
    match prior {
        LambdaPrior::PointMassOne => 1.0,
        LambdaPrior::Beta(p) => {
            let x = sample_gamma(p.a, rng);
            let y = sample_gamma(p.b, rng);
            let s = x + y;
            if s > 0.0 {
                (x / s).clamp(0.0, 1.0)
            } else {
                // Both gammas underflowed (tiny shapes); fall back to a fair coin.
                if rng.gen::<bool>() {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Partner indices for `m` examples drawn from a pool of `n`.
pub fn sample_partners<R: Rng + ?Sized>(
    n: usize,
    m: usize,
    strategy: PartnerStrategy,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    match strategy {
        PartnerStrategy::BatchPermutation => {
            if m != n {
                return Err(Error::config(format!(
                    "batch permutation needs m == batch size, got m = {m}, n = {n}"
                )));
            }
            let mut idx: Vec<usize> = (0..m).collect();
            idx.shuffle(rng);
            Ok(idx)
        }
        PartnerStrategy::DatasetUniform => Ok((0..m).map(|_| rng.gen_range(0..n)).collect()),
    }
}

/// Pre-drawn mixing ratios and partner indices, `m` rows by `S` columns.
///
/// Objectives and predictors consume a table rather than an RNG so that
/// results are independent of evaluation order and tests can pin draws.
#[derive(Debug, Clone, PartialEq)]
pub struct MixDraws {
    pub lambdas: Array2<f64>,
    pub partners: Array2<usize>,
}

impl MixDraws {
    pub fn new(lambdas: Array2<f64>, partners: Array2<usize>) -> Result<Self> {
        if lambdas.dim() != partners.dim() {
            return Err(Error::shape(format!(
                "lambda table {:?} vs partner table {:?}",
                lambdas.dim(),
                partners.dim()
            )));
        }
        for &l in lambdas.iter() {
            check_lambda(l)?;
        }
        Ok(MixDraws { lambdas, partners })
    }

    /// All `λ = 1` with self-partners: every mixed input is the raw input.
    pub fn identity(m: usize, samples: usize) -> Self {
        MixDraws {
            lambdas: Array2::ones((m, samples)),
            partners: Array2::from_shape_fn((m, samples), |(i, _)| i),
        }
    }

    /// Independent draws: per-example `λ`, and per column either an
    /// independent permutation of `0..m` or uniform indices into `0..pool_size`.
    pub fn draw<R: Rng + ?Sized>(
        m: usize,
        samples: usize,
        prior: &LambdaPrior,
        strategy: PartnerStrategy,
        pool_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut lambdas = Array2::zeros((m, samples));
        let mut partners = Array2::zeros((m, samples));
        for j in 0..samples {
            let idx = match strategy {
                PartnerStrategy::BatchPermutation => sample_partners(m, m, strategy, rng)?,
                PartnerStrategy::DatasetUniform => sample_partners(pool_size, m, strategy, rng)?,
            };
            for i in 0..m {
                lambdas[[i, j]] = sample_lambda(prior, rng);
                partners[[i, j]] = idx[i];
            }
        }
        Ok(MixDraws { lambdas, partners })
    }

    pub fn rows(&self) -> usize {
        self.lambdas.nrows()
    }

    pub fn samples(&self) -> usize {
        self.lambdas.ncols()
    }

    pub(crate) fn check_against(&self, m: usize, pool_size: usize) -> Result<()> {
        if self.rows() != m {
            return Err(Error::shape(format!(
                "draw table has {} rows for {m} examples",
                self.rows()
            )));
        }
        if self.samples() == 0 {
            return Err(Error::config("draw table has no samples"));
        }
        if self.partners.iter().any(|&p| p >= pool_size) {
            return Err(Error::shape(format!(
                "partner index outside pool of size {pool_size}"
            )));
        }
        Ok(())
    }
}

/// Mixed inputs: row `i * S + j` is `ψ(x_i, pool[partner_ij], λ_ij)`.
pub fn mix_rows(
    features: ArrayView2<f64>,
    pool: ArrayView2<f64>,
    draws: &MixDraws,
) -> Result<Array2<f64>> {
    draws.check_against(features.nrows(), pool.nrows())?;
    if features.ncols() != pool.ncols() {
        return Err(Error::shape(format!(
            "features have width {}, partner pool {}",
            features.ncols(),
            pool.ncols()
        )));
    }
    let s = draws.samples();
    let mut out = Array2::zeros((features.nrows() * s, features.ncols()));
    for (i, x) in features.outer_iter().enumerate() {
        for j in 0..s {
            let lam = draws.lambdas[[i, j]];
            let partner = pool.row(draws.partners[[i, j]]);
            Zip::from(out.row_mut(i * s + j))
                .and(&x)
                .and(&partner)
                .for_each(|o, &a, &b| *o = mix_scalar(a, b, lam));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn endpoints_and_midpoint() {
        let x = array![1.5, -2.0, 3.0];
        let xp = array![0.25, 4.0, -1.0];
        assert_eq!(mix(x.view(), xp.view(), 1.0).unwrap(), x.to_vec());
        assert_eq!(mix(x.view(), xp.view(), 0.0).unwrap(), xp.to_vec());
        assert_eq!(
            mix(array![2.0, 0.0].view(), array![0.0, 2.0].view(), 0.5).unwrap(),
            vec![1.0, 1.0]
        );
    }

    #[test]
    fn mix_errors() {
        let x = array![1.0, 2.0];
        assert!(matches!(
            mix(x.view(), x.view(), 1.5),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            mix(x.view(), x.view(), -0.1),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            mix(x.view(), x.view(), f64::NAN),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            mix(x.view(), array![1.0].view(), 0.5),
            Err(Error::Shape(_))
        ));
    }

    proptest! {
        #[test]
        fn mix_symmetry(
            xs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..8),
            lambda in 0.0f64..=1.0,
        ) {
            let x: ndarray::Array1<f64> = xs.iter().map(|p| p.0).collect();
            let xp: ndarray::Array1<f64> = xs.iter().map(|p| p.1).collect();
            let a = mix(x.view(), xp.view(), lambda).unwrap();
            let b = mix(xp.view(), x.view(), 1.0 - lambda).unwrap();
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u - v).abs() <= 1e-15 * (1.0 + u.abs()) * 20.0);
            }
        }

        #[test]
        fn permutation_is_bijection(m in 1usize..64, seed in any::<u64>()) {
            let mut rng = RngStream::new(seed);
            let mut p = sample_partners(m, m, PartnerStrategy::BatchPermutation, &mut rng).unwrap();
            p.sort_unstable();
            prop_assert_eq!(p, (0..m).collect::<Vec<_>>());
        }
    }

    #[test]
    fn prior_rules() {
        let p = lambda_prior(MixMode::LabelPreserving, 1.0).unwrap();
        assert_eq!(p, LambdaPrior::Beta(BetaParams::new(2.0, 1.0).unwrap()));
        let p = lambda_prior(MixMode::LabelMixing, 1.0).unwrap();
        assert_eq!(p, LambdaPrior::Beta(BetaParams::new(1.0, 1.0).unwrap()));
        assert_eq!(
            lambda_prior(MixMode::None, 0.0).unwrap(),
            LambdaPrior::PointMassOne
        );
        assert!(lambda_prior(MixMode::LabelMixing, 0.0).is_err());
        assert!(lambda_prior(MixMode::LabelPreserving, -1.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(MixConfig::default().validate().is_ok());
        let mut c = MixConfig {
            mode: MixMode::LabelPreserving,
            alpha: 2.0,
            samples: 4,
            partner: PartnerStrategy::BatchPermutation,
        };
        assert!(c.validate().is_ok());
        c.samples = 0;
        assert!(c.validate().is_err());
        c.samples = 1;
        c.alpha = 0.0;
        assert!(c.validate().is_err());
        c.alpha = 1.0;
        c.mode = MixMode::LabelMixing;
        c.samples = 2;
        assert!(c.validate().is_err());
    }

    fn moments(prior: &LambdaPrior, n: usize, seed: u64) -> (f64, f64) {
        let mut rng = RngStream::new(seed);
        let xs: Vec<f64> = (0..n).map(|_| sample_lambda(prior, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!(xs.iter().all(|x| (0.0..=1.0).contains(x)));
        (mean, var)
    }

    #[test]
    fn uniform_beta_moments() {
        let prior = LambdaPrior::Beta(BetaParams::new(1.0, 1.0).unwrap());
        let (mean, var) = moments(&prior, 1_000_000, 1);
        assert_abs_diff_eq!(mean, 0.5, epsilon = 0.002);
        assert_abs_diff_eq!(var, 1.0 / 12.0, epsilon = 0.002);
    }

    #[test]
    fn beta_moments_within_three_standard_errors() {
        let n = 1_000_000;
        for (k, (a, b)) in [(2.0, 1.0), (0.5, 0.5), (3.0, 2.0), (9.0, 8.0), (0.3, 1.7)]
            .into_iter()
            .enumerate()
        {
            let p = BetaParams::new(a, b).unwrap();
            let (mean, var) = moments(&LambdaPrior::Beta(p), n, 100 + k as u64);
            let se_mean = (p.variance() / n as f64).sqrt();
            assert!(
                (mean - p.mean()).abs() < 3.0 * se_mean,
                "Beta({a},{b}) mean {mean} vs {}",
                p.mean()
            );
            // Variance of the sample variance: (mu4 - sigma^4) / n.
            let mu4 = beta_central_moment4(a, b);
            let se_var = ((mu4 - p.variance().powi(2)) / n as f64).sqrt();
            assert!(
                (var - p.variance()).abs() < 3.0 * se_var,
                "Beta({a},{b}) var {var} vs {}",
                p.variance()
            );
        }
        let (mean, _) = moments(&LambdaPrior::Beta(BetaParams::new(2.0, 1.0).unwrap()), n, 5);
        assert_abs_diff_eq!(mean, 2.0 / 3.0, epsilon = 0.002);
    }

    fn beta_central_moment4(a: f64, b: f64) -> f64 {
        // Raw moments E[X^k] = prod_{r<k} (a+r)/(a+b+r).
        let raw = |k: i32| {
            (0..k)
                .map(|r| (a + r as f64) / (a + b + r as f64))
                .product::<f64>()
        };
        let m = raw(1);
        raw(4) - 4.0 * m * raw(3) + 6.0 * m * m * raw(2) - 3.0 * m.powi(4)
    }

    #[test]
    fn degenerate_prior_is_always_one() {
        let mut rng = RngStream::new(0);
        for _ in 0..100 {
            assert_eq!(sample_lambda(&LambdaPrior::PointMassOne, &mut rng), 1.0);
        }
    }

    #[test]
    fn partner_strategies() {
        let mut rng = RngStream::new(4);
        let p = sample_partners(4, 4, PartnerStrategy::BatchPermutation, &mut rng).unwrap();
        let mut s = p.clone();
        s.sort_unstable();
        assert_eq!(s, vec![0, 1, 2, 3]);
        let p = sample_partners(1, 50, PartnerStrategy::DatasetUniform, &mut rng).unwrap();
        assert!(p.iter().all(|&i| i == 0));
        assert!(matches!(
            sample_partners(0, 3, PartnerStrategy::DatasetUniform, &mut rng),
            Err(Error::EmptyDataset)
        ));
        assert!(sample_partners(5, 4, PartnerStrategy::BatchPermutation, &mut rng).is_err());
    }

    #[test]
    fn dataset_uniform_frequencies() {
        let mut rng = RngStream::new(77);
        let draws =
            sample_partners(10, 100_000, PartnerStrategy::DatasetUniform, &mut rng).unwrap();
        let mut counts = [0usize; 10];
        for i in draws {
            counts[i] += 1;
        }
        for c in counts {
            assert_abs_diff_eq!(c as f64 / 1e5, 0.1, epsilon = 0.005);
        }
    }

    #[test]
    fn draw_table_and_mixing_rows() {
        let prior = lambda_prior(MixMode::LabelPreserving, 1.0).unwrap();
        let mut rng = RngStream::new(8);
        let d =
            MixDraws::draw(5, 3, &prior, PartnerStrategy::BatchPermutation, 5, &mut rng).unwrap();
        for j in 0..3 {
            let mut col: Vec<usize> = d.partners.column(j).to_vec();
            col.sort_unstable();
            assert_eq!(col, (0..5).collect::<Vec<_>>());
        }
        let x = array![[1.0, 0.0], [0.0, 1.0], [2.0, 2.0], [-1.0, 3.0], [0.5, 0.5]];
        let mixed = mix_rows(x.view(), x.view(), &d).unwrap();
        assert_eq!(mixed.dim(), (15, 2));
        let (i, j) = (3, 2);
        let expect = mix(x.row(i), x.row(d.partners[[i, j]]), d.lambdas[[i, j]]).unwrap();
        assert_eq!(mixed.row(i * 3 + j).to_vec(), expect);

        let id = mix_rows(x.view(), x.view(), &MixDraws::identity(5, 2)).unwrap();
        assert_eq!(id.row(4), x.row(2));
    }
}
