//! Regression metrics on price-unit forecasts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mse: f64,
    pub mae: f64,
    pub mape_percent: f64,
    pub rmse: f64,
    pub r2: f64,
    pub n: usize,
}

pub fn evaluate(y_true: &[f64], y_pred: &[f64]) -> Result<MetricsReport> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape(format!(
            "{} targets vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let n = y_true.len();
    if n < 2 {
        return Err(Error::UndefinedMetric(format!("need at least 2 samples, got {n}")));
    }
    if y_true.iter().chain(y_pred).any(|v| !v.is_finite()) {
        return Err(Error::UndefinedMetric("non-finite value".into()));
    }
    if y_true.contains(&0.0) {
        return Err(Error::UndefinedMetric("MAPE undefined: zero in y_true".into()));
    }
    let nf = n as f64;
    let mean = y_true.iter().sum::<f64>() / nf;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric("R² undefined: constant y_true".into()));
    }
    let (mut ss_res, mut abs, mut pct) = (0.0, 0.0, 0.0);
    for (&y, &p) in y_true.iter().zip(y_pred) {
        let e = y - p;
        ss_res += e * e;
        abs += e.abs();
        pct += e.abs() / y.abs();
    }
    let mse = ss_res / nf;
    Ok(MetricsReport {
        mse,
        mae: abs / nf,
        mape_percent: 100.0 * pct / nf,
        rmse: mse.sqrt(),
        r2: 1.0 - ss_res / ss_tot,
        n,
    })
}

/// Rounds the shortest round-trip decimal form of `x` to `places`, ties away from zero.
///
/// Working on the shortest decimal keeps written ties such as `0.99325` as ties
/// even though their binary value sits just below.
pub fn format_fixed(x: f64, places: usize) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let s = format!("{}", x.abs());
    let (int_part, frac_part) = s.split_once('.').unwrap_or((&s, ""));
    let mut digits: Vec<u8> = int_part.bytes().map(|b| b - b'0').collect();
    let int_len = digits.len();
    let frac: Vec<u8> = frac_part.bytes().map(|b| b - b'0').collect();
    digits.extend(frac.iter().take(places));
    digits.resize(int_len + places, 0);
    if frac.get(places).is_some_and(|&d| d >= 5) {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - places;
    let int_str: String = digits[..split].iter().map(|d| char::from(b'0' + d)).collect();
    let frac_str: String = digits[split..].iter().map(|d| char::from(b'0' + d)).collect();
    let negative = x < 0.0 && digits.iter().any(|&d| d != 0);
    let sign = if negative { "-" } else { "" };
    if places == 0 {
        format!("{sign}{int_str}")
    } else {
        format!("{sign}{int_str}.{frac_str}")
    }
}

pub const TABLE_HEADER: [&str; 6] = ["symbol", "MSE", "MAE", "MAPE (%)", "RMSE", "R²"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableRow {
    pub symbol: String,
    pub cells: [String; 5],
}

/// One row per symbol in lexicographic order, values at 4 decimals.
pub fn metrics_table(per_symbol: &BTreeMap<String, MetricsReport>) -> Vec<TableRow> {
    per_symbol
        .iter()
        .map(|(symbol, m)| TableRow {
            symbol: symbol.clone(),
            cells: [m.mse, m.mae, m.mape_percent, m.rmse, m.r2].map(|v| format_fixed(v, 4)),
        })
        .collect()
}

pub fn write_metrics_table<W: std::io::Write>(rows: &[TableRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TABLE_HEADER)?;
    for r in rows {
        let mut rec = vec![r.symbol.as_str()];
        rec.extend(r.cells.iter().map(String::as_str));
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::io("metrics table", e))?;
    Ok(())
}

pub fn read_metrics_table<R: std::io::Read>(reader: R) -> Result<Vec<TableRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != TABLE_HEADER {
        return Err(Error::Parse {
            row: 0,
            column: "header".into(),
            message: format!("unexpected metrics header {header:?}"),
        });
    }
    r.records()
        .map(|rec| {
            let rec = rec?;
            let cell = |i: usize| rec.get(i).unwrap_or_default().to_owned();
            Ok(TableRow {
                symbol: cell(0),
                cells: [cell(1), cell(2), cell(3), cell(4), cell(5)],
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_fit() {
        let y = [3.0, 4.5, 2.0, 7.0];
        let m = evaluate(&y, &y).unwrap();
        assert_eq!((m.mse, m.mae, m.mape_percent, m.rmse, m.r2), (0.0, 0.0, 0.0, 0.0, 1.0));
        assert_eq!(m.n, 4);
    }

    #[test]
    fn hand_example() {
        let m = evaluate(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((m.mse - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.mae - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.rmse - 0.57735).abs() < 1e-5);
        assert!((m.mape_percent - 11.1111).abs() < 1e-4);
        assert!((m.r2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mean_predictor_has_zero_r2() {
        let y = [1.0, 2.0, 6.0, 3.0];
        let m = evaluate(&y, &[3.0; 4]).unwrap();
        assert!(m.r2.abs() < 1e-15);
    }

    #[test]
    fn error_cases() {
        assert!(matches!(
            evaluate(&[2.0, 2.0], &[1.0, 3.0]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(
            evaluate(&[0.0, 2.0], &[1.0, 3.0]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(evaluate(&[1.0, 2.0], &[1.0]), Err(Error::Shape(_))));
        assert!(evaluate(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn fixed_formatting() {
        assert_eq!(format_fixed(0.99325, 4), "0.9933");
        assert_eq!(format_fixed(0.5, 4), "0.5000");
        assert_eq!(format_fixed(1.0 / 3.0, 4), "0.3333");
        assert_eq!(format_fixed(2.0 / 3.0, 4), "0.6667");
        assert_eq!(format_fixed(9.99996, 4), "10.0000");
        assert_eq!(format_fixed(-1.23456, 4), "-1.2346");
        assert_eq!(format_fixed(-0.00001, 4), "0.0000");
        assert_eq!(format_fixed(1234567.0, 4), "1234567.0000");
        assert_eq!(format_fixed(1e-7, 4), "0.0000");
        assert_eq!(format_fixed(2.5, 0), "3");
    }

    #[test]
    fn table_is_sorted_and_round_trips() {
        let m = evaluate(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        let mut map = BTreeMap::new();
        map.insert("THYAO".to_string(), m);
        map.insert("AKBNK".to_string(), m);
        let rows = metrics_table(&map);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].symbol, "AKBNK");
        assert_eq!(
            rows[0].cells,
            ["0.3333", "0.3333", "11.1111", "0.5774", "0.5000"].map(String::from)
        );
        let mut buf = Vec::new();
        write_metrics_table(&rows, &mut buf).unwrap();
        assert_eq!(read_metrics_table(buf.as_slice()).unwrap(), rows);
    }
}
