use mcem_anomaly::data::{
    generate_sinusoid, inject_point_outliers, injected_positions, parse_csv, robust_scale, split,
    subsample, ScaleParams, SplitSpec,
};
use mcem_anomaly::TimeSeries;
use proptest::prelude::*;

fn series_strategy(min: usize, max: usize) -> impl Strategy<Value = TimeSeries> {
    (
        prop::collection::vec(-1e3..1e3f64, min..max),
        -1000i64..1000,
        any::<bool>(),
    )
        .prop_flat_map(|(values, start, labeled)| {
            let n = values.len();
            prop::collection::vec(0u8..=1, n).prop_map(move |labels| {
                let labels = labeled.then_some(labels);
                TimeSeries::new(values.clone(), start, labels).unwrap()
            })
        })
}

proptest! {
    #[test]
    fn split_concatenates_back(series in series_strategy(3, 300), train in 0.05..0.9f64, val in 0.0..0.5f64) {
        prop_assume!(train + val < 1.0);
        let Ok(parts) = split(&series, SplitSpec::new(train, val).unwrap()) else {
            return Ok(());
        };
        let mut joined = parts.train.clone();
        if let Some(v) = &parts.val {
            joined = joined.concat(v).unwrap();
        }
        joined = joined.concat(&parts.test).unwrap();
        prop_assert_eq!(joined, series);
    }

    #[test]
    fn scaling_inverts(series in series_strategy(1, 200)) {
        let (scaled, params) = robust_scale(&series).unwrap();
        let back = params.inverse_transform(&scaled).unwrap();
        for (a, b) in back.values().iter().zip(series.values()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        prop_assert_eq!(back.labels(), series.labels());
    }

    #[test]
    fn scaled_median_is_zero(values in prop::collection::vec(-1e3..1e3f64, 1..200)) {
        let params = ScaleParams::fit(&values).unwrap();
        prop_assert!(params.iqr_scale > 0.0);
        let scaled: Vec<f64> = values.iter().map(|&x| params.scale(x)).collect();
        let refit = ScaleParams::fit(&scaled).unwrap();
        prop_assert!(refit.median.abs() < 1e-9);
    }

    #[test]
    fn injection_changes_exactly_the_drawn_points(
        series in series_strategy(10, 400),
        rate in 0.01..0.5f64,
        magnitude in 0.1..20.0f64,
        seed in any::<u64>(),
    ) {
        let expected = (rate * series.len() as f64).floor() as usize;
        prop_assume!(expected >= 1);
        let (out, positions) = injected_positions(&series, rate, magnitude, seed).unwrap();
        prop_assert_eq!(positions.len(), expected);
        let changed = out.values().iter().zip(series.values()).filter(|(a, b)| a != b).count();
        prop_assert_eq!(changed, expected);
        for &i in &positions {
            prop_assert!(((out.values()[i] - series.values()[i]).abs() - magnitude).abs() < 1e-9);
            prop_assert_eq!(out.labels().unwrap()[i], 1);
        }
        if let Some(before) = series.labels() {
            for (a, b) in out.labels().unwrap().iter().zip(before) {
                prop_assert!(a >= b);
            }
        }
        prop_assert_eq!(out, inject_point_outliers(&series, rate, magnitude, seed).unwrap());
    }

    #[test]
    fn subsample_length(series in series_strategy(1, 300), factor in 1usize..20) {
        let out = subsample(&series, factor).unwrap();
        prop_assert_eq!(out.len(), series.len().div_ceil(factor));
        prop_assert_eq!(out.values()[0], series.values()[0]);
    }

    #[test]
    fn csv_round_trip(series in series_strategy(1, 100)) {
        let text = series.to_csv_string();
        let parsed = parse_csv(text.as_bytes()).unwrap();
        prop_assert_eq!(parsed, series);
    }

    #[test]
    fn generators_are_seeded(seed in any::<u64>()) {
        let a = generate_sinusoid(64, 10.0, 1.0, 0.3, seed).unwrap();
        let b = generate_sinusoid(64, 10.0, 1.0, 0.3, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}
