use proptest::prelude::*;

use depthac::corruption::{apply, schedule_perturb, CorruptionKind, SchedulerConfig, Severity};
use depthac::evalsuite::{absrel, align, delta1, fit_scale_shift, ordinal_accuracy, Closer, OrdinalPair};
use depthac::losses::affine_invariant_slices;
use depthac::sdr::{patchify, sdr_loss, sdr_matrix, DistanceMetric};
use depthac::{DisparityMap, ImageBuffer, Rng};

fn values(seed: u64, n: usize) -> Vec<f64> {
    let mut r = Rng::new(seed);
    (0..n).map(|_| r.unit()).collect()
}

fn image(seed: u64, h: usize, w: usize) -> ImageBuffer {
    ImageBuffer::new(h, w, 3, values(seed, h * w * 3)).unwrap()
}

fn metric() -> impl Strategy<Value = DistanceMetric> {
    prop_oneof![Just(DistanceMetric::Euclidean), Just(DistanceMetric::Manhattan)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sdr_matrix_ignores_affine_rescaling(seed in any::<u64>(), a in 0.1f64..10.0, b in 0.0f64..5.0, m in metric()) {
        let d = DisparityMap::new(12, 12, values(seed, 144)).unwrap();
        let moved = DisparityMap::new(12, 12, d.data().iter().map(|v| a * v + b).collect()).unwrap();
        let x = sdr_matrix(&patchify(&d, 4).unwrap(), m).unwrap();
        let y = sdr_matrix(&patchify(&moved, 4).unwrap(), m).unwrap();
        for (p, q) in x.data().iter().zip(y.data()) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn sdr_loss_is_zero_on_itself_and_non_negative(s1 in any::<u64>(), s2 in any::<u64>(), m in metric()) {
        let a = patchify(&DisparityMap::new(8, 8, values(s1, 64)).unwrap(), 2).unwrap();
        let b = patchify(&DisparityMap::new(8, 8, values(s2, 64)).unwrap(), 2).unwrap();
        prop_assert_eq!(sdr_loss(&a, &a, m).unwrap().value, 0.0);
        prop_assert!(sdr_loss(&a, &b, m).unwrap().value >= 0.0);
    }

    #[test]
    fn affine_loss_gradient_is_shift_orthogonal(seed in any::<u64>()) {
        let p = values(seed, 64);
        let t = values(seed ^ 1, 64);
        let l = affine_invariant_slices(&p, &t, true).unwrap();
        // Invariance to p + c and to k·p means the gradient is orthogonal to 1 and to p.
        let sum: f64 = l.grad_pred.iter().sum();
        let dot: f64 = l.grad_pred.iter().zip(&p).map(|(g, v)| g * v).sum();
        prop_assert!(sum.abs() < 1e-12 && dot.abs() < 1e-12);
    }

    #[test]
    fn corruptions_stay_in_range(seed in any::<u64>(), h in 4usize..24, w in 4usize..24, k in 0usize..7, s in 1u8..=5) {
        let img = image(seed, h, w);
        let out = apply(CorruptionKind::ALL[k], &img, Severity::new(s).unwrap(), &mut Rng::new(seed));
        prop_assert_eq!((out.height(), out.width(), out.channels()), (h, w, 3));
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn schedule_reports_what_it_applied(seed in any::<u64>()) {
        let img = image(seed, 8, 8);
        let cfg = SchedulerConfig::default();
        let (out, applied) = schedule_perturb(&img, &cfg, &mut Rng::new(seed));
        prop_assert!(!applied.is_empty() && applied.len() <= 2);
        prop_assert_eq!(applied[0].kind, CorruptionKind::Dark);
        let (again, _) = schedule_perturb(&img, &cfg, &mut Rng::new(seed));
        prop_assert_eq!(out, again);
    }

    #[test]
    fn alignment_is_least_squares(seed in any::<u64>(), ds in -0.05f64..0.05, dt in -0.05f64..0.05) {
        let gt = values(seed, 64);
        let pred: Vec<f64> = values(seed ^ 7, 64).iter().zip(&gt).map(|(n, g)| 2.0 * g - 0.5 + 0.2 * n).collect();
        let valid = vec![true; 64];
        let (s, t) = fit_scale_shift(&pred, &gt, &valid).unwrap();
        let sse = |s: f64, t: f64| pred.iter().zip(&gt).map(|(p, g)| (s * p + t - g).powi(2)).sum::<f64>();
        prop_assert!(sse(s, t) <= sse(s + ds, t + dt) + 1e-12);
    }

    #[test]
    fn metrics_ignore_prediction_scale_and_shift(seed in any::<u64>(), a in 0.1f64..10.0, b in 0.0f64..5.0) {
        let gt = DisparityMap::new(8, 8, values(seed, 64).iter().map(|v| 0.1 + v).collect()).unwrap();
        let pred = DisparityMap::new(8, 8, values(seed ^ 3, 64)).unwrap();
        let moved = DisparityMap::new(8, 8, pred.data().iter().map(|v| a * v + b).collect()).unwrap();
        let (x, y) = (align(&pred, &gt, None).unwrap(), align(&moved, &gt, None).unwrap());
        prop_assert!((absrel(&x) - absrel(&y)).abs() < 1e-6);
        prop_assert!((delta1(&x) - delta1(&y)).abs() < 1e-9);
    }

    #[test]
    fn ordinal_accuracy_ignores_increasing_maps(seed in any::<u64>(), k in 0.1f64..5.0) {
        let pred = DisparityMap::new(6, 6, values(seed, 36)).unwrap();
        let mut r = Rng::new(seed ^ 5);
        let pairs: Vec<OrdinalPair> = (0..40)
            .map(|_| {
                let (ax, ay) = (r.below(6), r.below(3));
                let (bx, by) = (r.below(6), 3 + r.below(3));
                OrdinalPair { ax, ay, bx, by, closer: if r.unit() < 0.5 { Closer::A } else { Closer::B } }
            })
            .collect();
        let warped = DisparityMap::new(6, 6, pred.data().iter().map(|v| (k * v).exp() + v).collect()).unwrap();
        prop_assert_eq!(ordinal_accuracy(&pred, &pairs).unwrap(), ordinal_accuracy(&warped, &pairs).unwrap());
    }
}
