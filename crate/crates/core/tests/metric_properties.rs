#[path = "common/oracles.rs"]
mod oracles;

use proptest::prelude::*;
use stockcast_core::metrics::evaluate;

fn pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(1.0f64..100.0, n),
            prop::collection::vec(1.0f64..100.0, n),
        )
    })
}

proptest! {
    #[test]
    fn rmse_squared_is_mse((y, p) in pairs()) {
        let m = evaluate(&y, &p).unwrap();
        let r2 = m.rmse * m.rmse;
        prop_assert!((r2 - m.mse).abs() <= 2.0 * f64::EPSILON * m.mse.max(f64::MIN_POSITIVE));
        prop_assert!(m.mse >= 0.0 && m.mae >= 0.0 && m.mape_percent >= 0.0 && m.r2 <= 1.0);
    }

    #[test]
    fn agrees_with_two_pass_reference((y, p) in pairs()) {
        let m = evaluate(&y, &p).unwrap();
        let (mse, mae, mape, rmse, r2) = oracles::naive_metrics(&y, &p);
        let near = |a: f64, b: f64| (a - b).abs() <= 1e-10 * b.abs().max(1.0);
        prop_assert!(near(m.mse, mse) && near(m.mae, mae) && near(m.mape_percent, mape));
        prop_assert!(near(m.rmse, rmse) && near(m.r2, r2));
    }

    #[test]
    fn scaling_and_shifting((y, p) in pairs(), k in 0.1f64..10.0, c in 1.0f64..50.0) {
        let base = evaluate(&y, &p).unwrap();
        let ys: Vec<f64> = y.iter().map(|v| v * k).collect();
        let ps: Vec<f64> = p.iter().map(|v| v * k).collect();
        let s = evaluate(&ys, &ps).unwrap();
        let near = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
        prop_assert!(near(s.r2, base.r2));
        prop_assert!(near(s.mape_percent, base.mape_percent));
        prop_assert!(near(s.mse, base.mse * k * k));
        prop_assert!(near(s.mae, base.mae * k));
        prop_assert!(near(s.rmse, base.rmse * k));

        let yc: Vec<f64> = y.iter().map(|v| v + c).collect();
        let pc: Vec<f64> = p.iter().map(|v| v + c).collect();
        let shifted = evaluate(&yc, &pc).unwrap();
        prop_assert!(near(shifted.r2, base.r2));
        prop_assert!(near(shifted.mse, base.mse));
    }
}
