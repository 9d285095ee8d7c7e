use capsad::capsnet::{squash, Architecture, DigitCaps};
use capsad::data::{decode_pgm, encode_pgm, LabeledImageSet, Split};
use capsad::eval::{auroc, build_splits, roc_curve, trapezoid_area, ExperimentSpec};
use capsad::scoring::{pp_score, re_score, re_score_with, ReNormalization};
use capsad::tensor::Tensor;
use proptest::prelude::*;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn capsules() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..8, 1usize..10).prop_flat_map(|(c, d)| (Just(c), Just(d), prop::collection::vec(-2.0..2.0f64, c * d)))
}

fn labelled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..40)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(prop_oneof![(-1.0..1.0f64), (0u8..4).prop_map(f64::from)], n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
        .prop_map(|(s, mut y)| {
            y[0] = true;
            y[1] = false;
            (s, y)
        })
}

proptest! {
    #[test]
    fn pp_is_longest_capsule_and_ignores_order((c, d, raw) in capsules(), rot in 0usize..8) {
        let rows: Vec<Vec<f64>> = raw.chunks(d).map(squash).collect();
        let caps = DigitCaps::new(Tensor::new(vec![c, d], rows.concat()).unwrap()).unwrap();
        let score = pp_score(&caps).value;
        prop_assert!((0.0..1.0).contains(&score));
        prop_assert_eq!(score, rows.iter().map(|r| norm(r)).fold(0.0, f64::max));
        let mut rotated = rows.clone();
        rotated.rotate_left(rot % c);
        let caps = DigitCaps::new(Tensor::new(vec![c, d], rotated.concat()).unwrap()).unwrap();
        prop_assert_eq!(pp_score(&caps).value, score);
    }

    #[test]
    fn re_is_nonpositive_and_scales_linearly(
        x in prop::collection::vec(0.01..1.0f64, 16),
        r in prop::collection::vec(0.0..1.0f64, 16),
        k in 0.1..10.0f64,
    ) {
        let t = |v: &[f64]| Tensor::from_vec(v.to_vec());
        let base = re_score(&t(&x), &t(&r)).unwrap().value;
        prop_assert!(base <= 0.0);
        let xk: Vec<f64> = x.iter().map(|v| v * k).collect();
        let rk: Vec<f64> = r.iter().map(|v| v * k).collect();
        let scaled = re_score(&t(&xk), &t(&rk)).unwrap().value;
        prop_assert!((scaled - k * base).abs() <= 1e-9 * base.abs().max(1.0));
        // The squared-norm variant is scale-free instead.
        let sq = re_score_with(&t(&x), &t(&r), ReNormalization::L2Squared).unwrap().value;
        let sq_scaled = re_score_with(&t(&xk), &t(&rk), ReNormalization::L2Squared).unwrap().value;
        prop_assert!((sq - sq_scaled).abs() <= 1e-9 * sq.abs().max(1.0));
    }

    #[test]
    fn re_decreases_with_distance(x in prop::collection::vec(0.01..1.0f64, 9), dir in prop::collection::vec(-1.0..1.0f64, 9), a in 0.0..2.0f64, b in 0.0..2.0f64) {
        prop_assume!(norm(&dir) > 1e-3 && (a - b).abs() > 1e-6);
        let at = |s: f64| {
            let recon: Vec<f64> = x.iter().zip(&dir).map(|(v, d)| v + s * d).collect();
            re_score(&Tensor::from_vec(x.clone()), &Tensor::from_vec(recon)).unwrap().value
        };
        let (near, far) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(at(near) > at(far));
    }

    #[test]
    fn auroc_matches_curve_and_flips_with_sign((scores, labels) in labelled_scores()) {
        let a = auroc(&scores, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let curve = roc_curve(&scores, &labels).unwrap();
        prop_assert!((trapezoid_area(&curve) - a).abs() <= 1e-12);
        prop_assert!(curve.windows(2).all(|w| w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr));
        prop_assert_eq!(*curve.last().unwrap(), capsad::eval::RocPoint { fpr: 1.0, tpr: 1.0 });
        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((auroc(&negated, &labels).unwrap() - (1.0 - a)).abs() <= 1e-12);
        // Any strictly increasing transform leaves the ranking, and so the area, unchanged.
        let warped: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 - 1.0).collect();
        prop_assert!((auroc(&warped, &labels).unwrap() - a).abs() <= 1e-12);
    }

    #[test]
    fn splits_are_balanced_and_drop_anomalies_from_training(
        labels in prop::collection::vec(0usize..5, 10..80),
        anomalous in prop::collection::btree_set(0usize..5, 1..4),
        seed in any::<u64>(),
    ) {
        let set = |split| {
            let images = labels.iter().map(|&l| Tensor::new(vec![1, 1, 1], vec![l as f64]).unwrap()).collect();
            LabeledImageSet::new(images, labels.clone(), split, "p", 5).unwrap()
        };
        let spec = ExperimentSpec {
            dataset: "p".into(),
            anomalous: anomalous.clone(),
            seed,
            epochs: 1,
            batch_size: 1,
            train_cap: None,
            scorers: vec!["pp".into()],
            arch: Architecture::Tiny,
        };
        let n_anom = labels.iter().filter(|l| anomalous.contains(l)).count();
        prop_assume!(n_anom > 0 && n_anom < labels.len());
        let splits = build_splits(&set(Split::Train), &set(Split::Test), &spec).unwrap();
        let anomalies = splits.is_anomaly.iter().filter(|&&a| a).count();
        prop_assert_eq!(anomalies * 2, splits.is_anomaly.len());
        prop_assert!(splits.test_ids.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(splits.train.len(), labels.len() - n_anom);
        prop_assert_eq!(splits.train.num_classes, 5 - anomalous.len());
        prop_assert!(splits.train.labels.iter().all(|&l| l < 5 - anomalous.len()));
        prop_assert_eq!(build_splits(&set(Split::Train), &set(Split::Test), &spec).unwrap().test_ids, splits.test_ids);
    }

    #[test]
    fn pgm_round_trips_byte_images(h in 1usize..20, w in 1usize..20, seed in any::<u64>()) {
        let data: Vec<f64> = (0..h * w).map(|i| ((seed.wrapping_mul(i as u64 + 1) >> 7) % 256) as f64 / 255.0).collect();
        let image = Tensor::new(vec![1, h, w], data).unwrap();
        prop_assert_eq!(decode_pgm(&encode_pgm(&image).unwrap(), "p").unwrap(), image);
    }
}
