use mcem_anomaly::evaluation::{adjusted_f1, best_f1_sweep, f1, mae, point_adjust, PrecisionRecall};
use proptest::prelude::*;

fn labeled_scores(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (1..max).prop_flat_map(|n| {
        (
            prop::collection::vec(prop_oneof![0.0..1.0f64, Just(0.5), Just(0.0)], n),
            prop::collection::vec(0u8..=1, n),
        )
    })
}

fn labeled_flags(max: usize) -> impl Strategy<Value = (Vec<bool>, Vec<u8>)> {
    (1..max).prop_flat_map(|n| {
        (
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(0u8..=1, n),
        )
    })
}

fn check_consistent(pr: &PrecisionRecall) {
    for v in [pr.precision, pr.recall, pr.f1] {
        assert!((0.0..=1.0).contains(&v));
    }
    let expected = if pr.precision + pr.recall > 0.0 {
        2.0 * pr.precision * pr.recall / (pr.precision + pr.recall)
    } else {
        0.0
    };
    assert!((pr.f1 - expected).abs() <= 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn point_adjust_is_idempotent((flags, labels) in labeled_flags(60)) {
        let once = point_adjust(&flags, &labels).unwrap();
        let twice = point_adjust(&once, &labels).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn point_adjust_only_adds_inside_segments((flags, labels) in labeled_flags(60)) {
        let adjusted = point_adjust(&flags, &labels).unwrap();
        for t in 0..flags.len() {
            if flags[t] {
                prop_assert!(adjusted[t]);
            }
            if labels[t] == 0 {
                prop_assert_eq!(adjusted[t], flags[t]);
            }
        }
    }

    #[test]
    fn adjustment_never_lowers_recall((scores, labels) in labeled_scores(60), th in 0.0..1.0f64) {
        let plain = f1(&scores, &labels, th).unwrap();
        let adjusted = adjusted_f1(&scores, &labels, th).unwrap();
        check_consistent(&plain);
        check_consistent(&adjusted);
        prop_assert!(adjusted.recall >= plain.recall);
    }

    #[test]
    fn adjustment_never_lowers_precision_without_outside_false_positives(
        (scores, labels) in labeled_scores(60),
        th in 0.0..1.0f64,
    ) {
        // Every flagged point lies inside a labeled segment, so there are no
        // false positives outside segments.
        let scores: Vec<f64> = scores.iter().zip(&labels).map(|(&s, &l)| if l == 0 { 0.0 } else { s }).collect();
        let plain = f1(&scores, &labels, th).unwrap();
        let adjusted = adjusted_f1(&scores, &labels, th).unwrap();
        prop_assert!(adjusted.precision >= plain.precision);
    }

    #[test]
    fn sweep_dominates_every_threshold((scores, labels) in labeled_scores(40), probes in prop::collection::vec(-0.5..1.5f64, 8)) {
        let best = best_f1_sweep(&scores, &labels).unwrap();
        for th in probes {
            prop_assert!(best.best_f1 >= adjusted_f1(&scores, &labels, th).unwrap().f1);
        }
        let at_best = adjusted_f1(&scores, &labels, best.best_threshold).unwrap();
        prop_assert_eq!(at_best.f1, best.best_f1);
        prop_assert_eq!(at_best.precision, best.precision);
        prop_assert_eq!(at_best.recall, best.recall);
    }

    #[test]
    fn mae_is_a_symmetric_distance(pair in (1usize..50).prop_flat_map(|n| (
        prop::collection::vec(-1e3..1e3f64, n),
        prop::collection::vec(-1e3..1e3f64, n),
    ))) {
        let (a, b) = pair;
        prop_assert_eq!(mae(&a, &b).unwrap(), mae(&b, &a).unwrap());
        prop_assert_eq!(mae(&a, &a).unwrap(), 0.0);
        prop_assert!(mae(&a, &b).unwrap() >= 0.0);
    }
}

#[test]
fn constant_scores_pick_the_better_trivial_flagging() {
    let labels = [0u8, 1, 1, 0, 0, 1];
    let scores = [0.3; 6];
    let all_ones = PrecisionRecall::from_flags(&[true; 6], &labels).unwrap().f1;
    let best = best_f1_sweep(&scores, &labels).unwrap();
    // All-zeros flagging scores 0, so the all-ones flagging wins.
    assert!(all_ones > 0.0);
    assert_eq!(best.best_f1, all_ones);
}

#[test]
fn reversed_perfect_scorer_is_still_swept() {
    let labels = [0u8, 1, 0, 0, 1, 1, 0];
    let perfect: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    assert_eq!(best_f1_sweep(&perfect, &labels).unwrap().best_f1, 1.0);
    let reversed: Vec<f64> = perfect.iter().map(|s| 1.0 - s).collect();
    let best = best_f1_sweep(&reversed, &labels).unwrap();
    // Best is flagging everything: P = 3/7, R = 1.
    assert!((best.best_f1 - 2.0 * (3.0 / 7.0) / (3.0 / 7.0 + 1.0)).abs() < 1e-12);
}
