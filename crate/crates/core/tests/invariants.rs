use mcquad_core::bandwidth::{normal_scale, plugin_diagonal};
use mcquad_core::density::EvalPath;
use mcquad_core::integrate::{estimate_ks_pair, estimate_mc, EstimatorOptions};
use mcquad_core::{Bandwidth, DensityField, Design, KernelFamily, KernelForm, KernelSpec, LabeledSample};
use proptest::prelude::*;

fn design_strategy(d: usize) -> impl Strategy<Value = Design> {
    prop::collection::vec(0.0f64..1.0, (12 * d)..(60 * d))
        .prop_map(move |mut v| {
            v.truncate(v.len() / d * d);
            Design::new(v, d).unwrap()
        })
}

fn kernels() -> impl Strategy<Value = KernelSpec> {
    prop::sample::select(vec![
        KernelSpec::gaussian(),
        KernelSpec::epanechnikov(),
        KernelSpec::new(KernelFamily::Gaussian, KernelForm::Radial),
        KernelSpec::gaussian_order4(),
    ])
}

fn reversed(x: &Design) -> Design {
    let rows: Vec<Vec<f64>> = x.rows().rev().map(<[f64]>::to_vec).collect();
    Design::from_rows(&rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn translation_leaves_density_unchanged(
        x in design_strategy(2), kernel in kernels(), shift in prop::collection::vec(-5.0f64..5.0, 2),
        q in prop::collection::vec(0.0f64..1.0, 2), h in 0.05f64..0.5,
    ) {
        let h = Bandwidth::scalar(h, 2).unwrap();
        let a = DensityField::new(&x, kernel, h.clone()).unwrap().kde_at(&q).unwrap();
        let moved = x.map_affine(&[1.0, 1.0], &shift).unwrap();
        let q2: Vec<f64> = q.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let b = DensityField::new(&moved, kernel, h).unwrap().kde_at(&q2).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn scaling_multiplies_density_by_inverse_volume(
        x in design_strategy(2), kernel in kernels(), c in 0.2f64..5.0,
        q in prop::collection::vec(0.0f64..1.0, 2), h in 0.05f64..0.5,
    ) {
        let a = DensityField::new(&x, kernel, Bandwidth::scalar(h, 2).unwrap()).unwrap().kde_at(&q).unwrap();
        let scaled = x.map_affine(&[c, c], &[0.0, 0.0]).unwrap();
        let qs: Vec<f64> = q.iter().map(|v| v * c).collect();
        let b = DensityField::new(&scaled, kernel, Bandwidth::scalar(h * c, 2).unwrap())
            .unwrap()
            .kde_at(&qs)
            .unwrap();
        prop_assert!((a / (c * c) - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn variance_is_nonnegative(x in design_strategy(1), kernel in kernels(), h in 0.01f64..0.5) {
        let field = DensityField::new(&x, kernel, Bandwidth::scalar(h, 1).unwrap()).unwrap();
        let (_, v) = field.kde_and_variance_at_points();
        prop_assert!(v.iter().all(|&v| v >= 0.0));
        for q in [0.0, 0.33, 0.5, 1.2] {
            prop_assert!(field.variance_at(&[q]).unwrap() >= 0.0);
        }
    }

    #[test]
    fn binned_path_matches_reference(x in design_strategy(2), h in 0.02f64..0.3) {
        let h = Bandwidth::scalar(h, 2).unwrap();
        let kernel = KernelSpec::epanechnikov();
        let a = DensityField::new(&x, kernel, h.clone()).unwrap().with_path(EvalPath::Reference).kde_at_points();
        let b = DensityField::new(&x, kernel, h).unwrap().with_path(EvalPath::Binned).kde_at_points();
        for (a, b) in a.iter().zip(&b) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn selectors_ignore_sample_order(x in design_strategy(2)) {
        let r = reversed(&x);
        prop_assert_eq!(normal_scale(&x).unwrap().scales().to_vec(), normal_scale(&r).unwrap().scales().to_vec());
        let a = plugin_diagonal(&x, KernelSpec::gaussian()).unwrap();
        let b = plugin_diagonal(&r, KernelSpec::gaussian()).unwrap();
        prop_assert_eq!(a.scales(), b.scales());
        let ns = normal_scale(&x).unwrap();
        for (h, s) in a.scales().iter().zip(ns.scales()) {
            prop_assert!(*h > 0.0 && *h >= s / 10.0 && *h <= s * 10.0);
        }
    }

    #[test]
    fn corrected_never_exceeds_plain(x in design_strategy(1), h in 0.03f64..0.4) {
        let phi: Vec<f64> = x.rows().map(|r| r[0] * r[0]).collect();
        let sample = LabeledSample::new(x, phi).unwrap();
        let h = Bandwidth::scalar(h, 1).unwrap();
        let pair = estimate_ks_pair(&sample, KernelSpec::gaussian(), &h, &EstimatorOptions::default()).unwrap();
        prop_assume!(pair.plain.clamped == 0);
        prop_assert!(pair.corrected.estimate <= pair.plain.estimate);
    }

    #[test]
    fn mc_is_the_weighted_mean(x in design_strategy(1), scale in 0.5f64..2.0) {
        let phi: Vec<f64> = x.rows().map(|r| (3.0 * r[0]).sin()).collect();
        let pi: Vec<f64> = x.rows().map(|r| scale + r[0]).collect();
        let want = phi.iter().zip(&pi).map(|(f, p)| f / p).sum::<f64>() / phi.len() as f64;
        let sample = LabeledSample::new(x, phi).unwrap().with_known_density(pi).unwrap();
        let got = estimate_mc(&sample).unwrap().estimate;
        prop_assert!((got - want).abs() <= 1e-15 * want.abs().max(1.0));
    }
}
