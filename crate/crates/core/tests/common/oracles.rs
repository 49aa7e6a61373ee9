//! Direct windowed recomputations used as references for the incremental
//! implementations. Recursive smoothers are expanded into explicit weighted
//! sums, so no running state is carried between indices.
#![allow(dead_code)]

use chrono::NaiveDate;
use rand::Rng;
use stockcast_core::market_data::{Bar, OhlcvSeries};
use stockcast_core::rng;

/// Multiplicative random walk with consistent OHLC bars.
pub fn random_walk(n: usize, seed: u64) -> OhlcvSeries {
    let mut r = rng::stream(seed, &[7]);
    let mut close = 50.0 + 50.0 * r.random::<f64>();
    let mut date = NaiveDate::from_ymd_opt(2010, 1, 4).unwrap();
    let mut bars = Vec::with_capacity(n);
    for _ in 0..n {
        let open = close * (1.0 + 0.004 * r.random_range(-1.0..1.0));
        close *= 1.0 + 0.02 * r.random_range(-1.0..1.0);
        let high = open.max(close) * (1.0 + 0.01 * r.random::<f64>());
        let low = open.min(close) * (1.0 - 0.01 * r.random::<f64>());
        bars.push(Bar {
            date,
            open,
            high,
            low,
            close,
            volume: (1e5 + 1e6 * r.random::<f64>()).round(),
        });
        date = date.succ_opt().unwrap();
    }
    OhlcvSeries::new("WALK", bars).unwrap()
}

pub fn sma_at(x: &[f64], w: usize, t: usize) -> Option<f64> {
    (t + 1 >= w).then(|| x[t + 1 - w..=t].iter().sum::<f64>() / w as f64)
}

/// `(1-a)^(t-w+1) * seed + sum_{j=w..t} a (1-a)^(t-j) x_j` with the SMA seed.
pub fn ema_at(x: &[f64], w: usize, t: usize) -> Option<f64> {
    if t + 1 < w {
        return None;
    }
    let a = 2.0 / (w as f64 + 1.0);
    let seed = x[..w].iter().sum::<f64>() / w as f64;
    let mut acc = (1.0 - a).powi((t + 1 - w) as i32) * seed;
    for j in w..=t {
        acc += a * (1.0 - a).powi((t - j) as i32) * x[j];
    }
    Some(acc)
}

/// Wilder average of per-index terms (term for index `j` is `term(j)`, `j >= 1`),
/// first defined at index `n`.
fn wilder_at(term: &dyn Fn(usize) -> f64, n: usize, t: usize) -> Option<f64> {
    if t < n {
        return None;
    }
    let b = (n as f64 - 1.0) / n as f64;
    let seed = (1..=n).map(term).sum::<f64>() / n as f64;
    let mut acc = b.powi((t - n) as i32) * seed;
    for j in n + 1..=t {
        acc += b.powi((t - j) as i32) * term(j) / n as f64;
    }
    Some(acc)
}

pub fn rsi_at(close: &[f64], n: usize, t: usize) -> Option<f64> {
    let gain = |j: usize| (close[j] - close[j - 1]).max(0.0);
    let loss = |j: usize| (close[j - 1] - close[j]).max(0.0);
    let g = wilder_at(&gain, n, t)?;
    let l = wilder_at(&loss, n, t)?;
    Some(if l == 0.0 { 100.0 } else { 100.0 - 100.0 / (1.0 + g / l) })
}

pub fn atr_at(high: &[f64], low: &[f64], close: &[f64], n: usize, t: usize) -> Option<f64> {
    let tr = |j: usize| {
        let a = high[j] - low[j];
        let b = (high[j] - close[j - 1]).abs();
        let c = (low[j] - close[j - 1]).abs();
        a.max(b).max(c)
    };
    wilder_at(&tr, n, t)
}

/// (middle, upper, lower) with population standard deviation.
pub fn bollinger_at(close: &[f64], w: usize, k: f64, t: usize) -> Option<(f64, f64, f64)> {
    let m = sma_at(close, w, t)?;
    let s = &close[t + 1 - w..=t];
    let sd = (s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / w as f64).sqrt();
    Some((m, m + k * sd, m - k * sd))
}

pub fn donchian_at(high: &[f64], low: &[f64], w: usize, t: usize) -> Option<f64> {
    if t + 1 < w {
        return None;
    }
    let hi = high[t + 1 - w..=t].iter().cloned().fold(f64::MIN, f64::max);
    let lo = low[t + 1 - w..=t].iter().cloned().fold(f64::MAX, f64::min);
    Some((hi + lo) / 2.0)
}

pub fn senkou_a_at(high: &[f64], low: &[f64], t: usize) -> Option<f64> {
    let s = t.checked_sub(26)?;
    Some((donchian_at(high, low, 9, s)? + donchian_at(high, low, 26, s)?) / 2.0)
}

pub fn senkou_b_at(high: &[f64], low: &[f64], t: usize) -> Option<f64> {
    donchian_at(high, low, 52, t.checked_sub(26)?)
}

pub fn macd_line_at(close: &[f64], t: usize) -> Option<f64> {
    Some(ema_at(close, 12, t)? - ema_at(close, 26, t)?)
}

/// Full reference column for a canonical feature name.
pub fn reference_column(series: &OhlcvSeries, column: &str) -> Vec<Option<f64>> {
    let f = |g: fn(&Bar) -> f64| series.bars.iter().map(g).collect::<Vec<f64>>();
    let (o, h, l, c, v) = (
        f(|b| b.open),
        f(|b| b.high),
        f(|b| b.low),
        f(|b| b.close),
        f(|b| b.volume),
    );
    let n = c.len();
    let each = |g: &dyn Fn(usize) -> Option<f64>| (0..n).map(g).collect::<Vec<_>>();
    let signal = || {
        let line: Vec<f64> = (25..n).map(|j| macd_line_at(&c, j).unwrap()).collect();
        each(&|t| if t < 33 { None } else { ema_at(&line, 9, t - 25) })
    };
    match column {
        "open" => each(&|t| Some(o[t])),
        "high" => each(&|t| Some(h[t])),
        "low" => each(&|t| Some(l[t])),
        "close" | "Chikou_Span" => each(&|t| Some(c[t])),
        "volume" => each(&|t| Some(v[t])),
        "EMA_25" => each(&|t| ema_at(&c, 25, t)),
        "EMA_50" => each(&|t| ema_at(&c, 50, t)),
        "EMA_100" => each(&|t| ema_at(&c, 100, t)),
        "EMA_200" => each(&|t| ema_at(&c, 200, t)),
        "EMA_300" => each(&|t| ema_at(&c, 300, t)),
        "RSI_14" => each(&|t| rsi_at(&c, 14, t)),
        "ATR_14" => each(&|t| atr_at(&h, &l, &c, 14, t)),
        "BB_Middle" => each(&|t| bollinger_at(&c, 20, 2.0, t).map(|b| b.0)),
        "BB_Upper" => each(&|t| bollinger_at(&c, 20, 2.0, t).map(|b| b.1)),
        "BB_Lower" => each(&|t| bollinger_at(&c, 20, 2.0, t).map(|b| b.2)),
        "Tenkan_Sen" => each(&|t| donchian_at(&h, &l, 9, t)),
        "Kijun_Sen" => each(&|t| donchian_at(&h, &l, 26, t)),
        "Senkou_Span_A" => each(&|t| senkou_a_at(&h, &l, t)),
        "Senkou_Span_B" => each(&|t| senkou_b_at(&h, &l, t)),
        "MACD" => each(&|t| macd_line_at(&c, t)),
        "MACD_Signal" => signal(),
        "MACD_Histogram" => {
            let s = signal();
            each(&|t| Some(macd_line_at(&c, t)? - s[t]?))
        }
        "MA_200" => each(&|t| sma_at(&c, 200, t)),
        "MA_300" => each(&|t| sma_at(&c, 300, t)),
        _ => panic!("no reference for {column}"),
    }
}

/// Largest `|got - want| / max(1, |want|)` over every column of the feature
/// table built from `series`, with the column where it occurs.
pub fn feature_table_deviation(series: &OhlcvSeries) -> (f64, String) {
    let table = stockcast_core::build_feature_table(series).unwrap();
    let offset = series.len() - table.len();
    let mut worst = (0.0, String::new());
    for col in &table.columns {
        let want = reference_column(series, &col.name);
        for (r, g) in col.values.iter().enumerate() {
            let w = want[r + offset].expect("defined after warm-up");
            let d = (g - w).abs() / w.abs().max(1.0);
            if d > worst.0 || d.is_nan() {
                worst = (d, col.name.clone());
            }
        }
    }
    worst
}

/// Two-pass textbook metrics `(mse, mae, mape_percent, rmse, r2)`.
pub fn naive_metrics(y: &[f64], p: &[f64]) -> (f64, f64, f64, f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let mut sq = Vec::new();
    let mut ab = Vec::new();
    let mut pc = Vec::new();
    let mut tot = Vec::new();
    for i in 0..y.len() {
        sq.push((y[i] - p[i]).powi(2));
        ab.push((y[i] - p[i]).abs());
        pc.push(((y[i] - p[i]) / y[i]).abs());
        tot.push((y[i] - mean).powi(2));
    }
    let mse = sq.iter().sum::<f64>() / n;
    (
        mse,
        ab.iter().sum::<f64>() / n,
        100.0 * pc.iter().sum::<f64>() / n,
        mse.sqrt(),
        1.0 - sq.iter().sum::<f64>() / tot.iter().sum::<f64>(),
    )
}

/// Full-length library outputs for every canonical column, keyed by name.
pub fn library_columns(series: &OhlcvSeries) -> Vec<(String, Vec<Option<f64>>)> {
    use stockcast_core::indicators::*;
    let f = |g: fn(&Bar) -> f64| series.bars.iter().map(g).collect::<Vec<f64>>();
    let (o, h, l, c, v) = (
        f(|b| b.open),
        f(|b| b.high),
        f(|b| b.low),
        f(|b| b.close),
        f(|b| b.volume),
    );
    let raw = |name: &str, x: &[f64]| (name.to_string(), x.iter().map(|&y| Some(y)).collect());
    let mut out: Vec<(String, Vec<Option<f64>>)> = vec![
        raw("open", &o),
        raw("high", &h),
        raw("low", &l),
        raw("close", &c),
        raw("volume", &v),
    ];
    let mut push = |s: IndicatorSeries| out.push((s.name.clone(), s.values));
    for w in [25, 50, 100, 200, 300] {
        push(ema(&c, w).unwrap());
    }
    push(rsi(&c, 14).unwrap());
    push(atr(&h, &l, &c, 14).unwrap());
    let bb = bollinger(&c, 20, 2.0).unwrap();
    push(bb.middle);
    push(bb.upper);
    push(bb.lower);
    let ich = ichimoku(&h, &l, &c).unwrap();
    push(ich.tenkan);
    push(ich.kijun);
    push(ich.senkou_a);
    push(ich.senkou_b);
    push(ich.chikou);
    let m = macd(&c, 12, 26, 9).unwrap();
    push(m.macd);
    push(m.signal);
    push(m.histogram);
    push(sma(&c, 200).unwrap().renamed("MA_200"));
    push(sma(&c, 300).unwrap().renamed("MA_300"));
    out
}

/// Worst relative deviation between library and reference columns; `Err`
/// names a column whose defined-ness pattern differs.
pub fn indicator_deviation(series: &OhlcvSeries) -> Result<(f64, String), String> {
    let mut worst = (0.0, String::new());
    for (name, got) in library_columns(series) {
        let want = reference_column(series, &name);
        for (t, (g, w)) in got.iter().zip(&want).enumerate() {
            match (g, w) {
                (Some(g), Some(w)) => {
                    let d = (g - w).abs() / w.abs().max(1.0);
                    if d > worst.0 || d.is_nan() {
                        worst = (d, name.clone());
                    }
                }
                (None, None) => {}
                _ => return Err(format!("{name} defined-ness differs at index {t}")),
            }
        }
    }
    Ok(worst)
}
