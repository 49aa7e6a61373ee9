use proptest::prelude::*;
use stockcast_core::pipeline::*;
use stockcast_core::{build_feature_table, synthetic_series, FeatureTable};

fn table(n: usize, seed: u64) -> FeatureTable {
    build_feature_table(&synthetic_series("HY", n, 0.1, seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn test_rows_never_reach_training(seed in any::<u64>(), pseed in any::<u64>(), seq_len in 1usize..20) {
        let t = table(420, seed % 1000);
        let spec = WindowSpec::new(seq_len).unwrap();
        let base = prepare(&t, 0.8, spec).unwrap();

        let mut perturbed = t.clone();
        let mut r = stockcast_core::rng::stream(pseed, &[]);
        for col in &mut perturbed.columns {
            for v in &mut col.values[base.train_rows..] {
                *v = *v * 3.0 + rand::Rng::random_range(&mut r, -50.0..50.0);
            }
        }
        let other = prepare(&perturbed, 0.8, spec).unwrap();
        prop_assert_eq!(&base.scaler, &other.scaler);
        prop_assert_eq!(base.train.len(), other.train.len());
        for (a, b) in base.train.samples.iter().zip(&other.train.samples) {
            prop_assert!(a.inputs.data().iter().zip(b.inputs.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
            prop_assert_eq!(a.target.to_bits(), b.target.to_bits());
        }
    }

    #[test]
    fn windows_predate_targets(seed in any::<u64>(), seq_len in 1usize..30) {
        let t = table(360, seed % 1000);
        let ds = make_windows(&t, WindowSpec::new(seq_len).unwrap()).unwrap();
        let close = t.column("close").unwrap();
        let ci = t.column_index("close").unwrap();
        for s in &ds.samples {
            let target_row = t.dates.iter().position(|d| *d == s.target_date).unwrap();
            prop_assert!(target_row >= seq_len);
            prop_assert_eq!(s.target, close[target_row]);
            for k in 0..seq_len {
                // row k of the window is source row target_row - seq_len + k
                prop_assert_eq!(s.inputs.at2(k, ci), close[target_row - seq_len + k]);
                prop_assert!(target_row - seq_len + k < target_row);
            }
        }
    }

    #[test]
    fn prepare_and_shuffle_are_pure(seed in any::<u64>(), sseed in any::<u64>()) {
        let t = table(330, seed % 1000);
        let spec = WindowSpec::new(5).unwrap();
        let a = prepare(&t, 0.8, spec).unwrap();
        let b = prepare(&t, 0.8, spec).unwrap();
        prop_assert_eq!(&a.train, &b.train);
        prop_assert_eq!(&a.test, &b.test);
        prop_assert_eq!(shuffle_once(&a.train, sseed), shuffle_once(&b.train, sseed));
    }
}

#[test]
fn test_windows_draw_only_on_test_rows() {
    let t = table(400, 5);
    let spec = WindowSpec::new(10).unwrap();
    let p = prepare(&t, 0.8, spec).unwrap();
    let first_test_date = t.dates[p.train_rows];
    assert_eq!(p.test.len(), p.test_rows - 10);
    assert!(p.test.samples.iter().all(|s| s.target_date > first_test_date));
    assert!(p.train.samples.iter().all(|s| s.target_date < first_test_date));
}
