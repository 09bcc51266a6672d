use dip_core::bounds::{bound_report, c_lambda_closed, c_lambda_mc, rademacher_bracket};
use dip_core::data::{gen_spirals, standardize};
use dip_core::mixing::{lambda_prior, LambdaPrior, MixMode};
use dip_core::RngStream;
use ndarray::Array2;
use proptest::prelude::*;

#[test]
fn centered_bracket_scales_with_root_c() {
    let ds = standardize(&gen_spirals(500, 0.05, 1.75, 0).unwrap()).0;
    let x = ds.features();
    let full = rademacher_bracket(x, 1.0).unwrap();
    let two_thirds = rademacher_bracket(x, 2.0 / 3.0).unwrap();
    assert!(full.sq_norm_mean < 1e-20);
    assert!((full.mean_sq_norm - 2.0).abs() < 1e-9);
    let ratio = two_thirds.bracket / full.bracket;
    assert!((ratio - (2.0f64 / 3.0).sqrt()).abs() < 1e-3, "{ratio}");
}

#[test]
fn uncentered_bracket_is_sandwiched() {
    let ds = gen_spirals(100, 0.05, 1.75, 1).unwrap();
    let x = ds.features().mapv(|v| v + 3.0);
    let b = rademacher_bracket(x.view(), 0.6).unwrap();
    let lo = b.sq_norm_mean.sqrt();
    let hi = b.mean_sq_norm.sqrt();
    assert!(lo < b.bracket && b.bracket < hi);
    let expected = (0.6 * b.mean_sq_norm + 0.4 * b.sq_norm_mean).sqrt();
    assert!((b.bracket - expected).abs() < 1e-12);
}

#[test]
fn closed_form_and_sampled_c_lambda_agree() {
    for (k, alpha) in [0.5, 1.0, 2.0, 8.0].into_iter().enumerate() {
        let prior = lambda_prior(MixMode::LabelPreserving, alpha).unwrap();
        let closed = c_lambda_closed(&prior);
        assert!((closed - (alpha + 1.0) / (2.0 * alpha + 1.0)).abs() < 1e-12);
        let mc = c_lambda_mc(&prior, 1_000_000, &mut RngStream::new(1000 + k as u64)).unwrap();
        assert!(
            (mc.value - closed).abs() < 3.0 * mc.std_error,
            "{alpha}: {mc:?} vs {closed}"
        );
    }
    assert_eq!(c_lambda_closed(&LambdaPrior::PointMassOne), 1.0);
}

#[test]
fn report_terms_shrink_with_alpha() {
    let ds = standardize(&gen_spirals(200, 0.05, 1.75, 2).unwrap()).0;
    let reports: Vec<_> = [0.5, 1.0, 2.0, 8.0]
        .iter()
        .map(|&a| {
            let p = lambda_prior(MixMode::LabelPreserving, a).unwrap();
            bound_report(ds.features(), &p, 1.0, 1.0, 10.0, 0.05).unwrap()
        })
        .collect();
    for w in reports.windows(2) {
        assert!(w[1].rad_bound < w[0].rad_bound);
        assert_eq!(w[1].confidence_term, w[0].confidence_term);
    }
    let unmixed = bound_report(
        ds.features(),
        &LambdaPrior::PointMassOne,
        1.0,
        1.0,
        10.0,
        0.05,
    )
    .unwrap();
    assert!(unmixed.rad_bound > reports[0].rad_bound);
    let json = serde_json::to_string(&reports[1]).unwrap();
    assert_eq!(
        serde_json::from_str::<dip_core::bounds::BoundReport>(&json).unwrap(),
        reports[1]
    );
}

proptest! {
    #[test]
    fn mean_square_norm_dominates_square_norm_of_mean(
        n in 1usize..40,
        d in 1usize..6,
        seed in any::<u64>(),
        shift in -50.0f64..50.0,
    ) {
        use rand::Rng;
        let mut rng = RngStream::new(seed);
        let x = Array2::from_shape_fn((n, d), |_| shift + rng.gen_range(-10.0..10.0));
        let b = rademacher_bracket(x.view(), 0.5).unwrap();
        prop_assert!(b.mean_sq_norm * (1.0 + 1e-12) >= b.sq_norm_mean);
        let c1 = rademacher_bracket(x.view(), 1.0).unwrap().bracket;
        prop_assert!(b.bracket <= c1 * (1.0 + 1e-12));
    }
}
