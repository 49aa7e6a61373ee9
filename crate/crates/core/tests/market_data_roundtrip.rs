use proptest::prelude::*;
use stockcast_core::market_data::{read_ohlcv_csv, synthetic_series, write_ohlcv_csv};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn write_read_write_is_stable(n in 1usize..80, seed in any::<u64>(), sigma in 0.0f64..0.5) {
        let s = synthetic_series("RT", n, sigma, seed);
        let mut first = Vec::new();
        write_ohlcv_csv(&s, &mut first).unwrap();
        let parsed = read_ohlcv_csv(first.as_slice(), "RT").unwrap();
        prop_assert_eq!(&parsed, &s);
        let mut second = Vec::new();
        write_ohlcv_csv(&parsed, &mut second).unwrap();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn shuffled_rows_parse_sorted(n in 2usize..60, seed in any::<u64>(), perm_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let s = synthetic_series("SH", n, 0.1, seed);
        let mut buf = Vec::new();
        write_ohlcv_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let header = lines.remove(0);
        lines.shuffle(&mut stockcast_core::rng::stream(perm_seed, &[]));
        let shuffled = format!("{header}\n{}\n", lines.join("\n"));
        let parsed = read_ohlcv_csv(shuffled.as_bytes(), "SH").unwrap();
        prop_assert!(parsed.bars.windows(2).all(|w| w[0].date < w[1].date));
        prop_assert_eq!(parsed, s);
    }

    #[test]
    fn duplicated_row_never_parses(n in 2usize..40, seed in any::<u64>(), k in 0usize..40) {
        let s = synthetic_series("DU", n, 0.1, seed);
        let mut buf = Vec::new();
        write_ohlcv_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let dup = lines[1 + k % n];
        let with_dup = format!("{text}{dup}\n");
        prop_assert!(read_ohlcv_csv(with_dup.as_bytes(), "DU").is_err());
    }
}
