//! Building blocks shared by the architectures.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Largest odd kernel not exceeding `min(requested, 2 * seq_len - 1)`.
pub fn clamp_kernel(requested: usize, seq_len: usize) -> usize {
    let cap = (2 * seq_len).saturating_sub(1).max(1);
    let k = requested.min(cap).max(1);
    if k.is_multiple_of(2) {
        k - 1
    } else {
        k
    }
}

/// `L x L` matrix whose product with a window gives the centered moving
/// average with edge-replication padding.
pub fn moving_average_matrix(seq_len: usize, kernel: usize) -> Result<Tensor> {
    if kernel.is_multiple_of(2) || kernel == 0 {
        return Err(Error::InvalidArgument(format!("kernel {kernel} must be odd")));
    }
    if kernel > 2 * seq_len - 1 {
        return Err(Error::InvalidArgument(format!(
            "kernel {kernel} exceeds 2 * {seq_len} - 1"
        )));
    }
    let half = (kernel / 2) as isize;
    let last = seq_len as isize - 1;
    let w = 1.0 / kernel as f64;
    let mut m = Tensor::zeros(&[seq_len, seq_len]);
    for t in 0..seq_len {
        for j in -half..=half {
            let src = (t as isize + j).clamp(0, last) as usize;
            m.data_mut()[t * seq_len + src] += w;
        }
    }
    Ok(m)
}

/// Splits an `L x C` window into a moving-average trend and the remainder.
pub fn series_decompose(window: &Tensor, kernel: usize) -> Result<(Tensor, Tensor)> {
    if window.shape().len() != 2 {
        return Err(Error::Shape(format!("window of shape {:?}", window.shape())));
    }
    let (l, c) = (window.rows(), window.cols());
    if kernel.is_multiple_of(2) || kernel == 0 {
        return Err(Error::InvalidArgument(format!("kernel {kernel} must be odd")));
    }
    if kernel > 2 * l - 1 {
        return Err(Error::InvalidArgument(format!("kernel {kernel} exceeds 2 * {l} - 1")));
    }
    let half = (kernel / 2) as isize;
    let last = l as isize - 1;
    let mut trend = Tensor::zeros(&[l, c]);
    for t in 0..l {
        for ch in 0..c {
            let sum: f64 = (-half..=half)
                .map(|j| window.at2((t as isize + j).clamp(0, last) as usize, ch))
                .sum();
            trend.data_mut()[t * c + ch] = sum / kernel as f64;
        }
    }
    let remainder = Tensor::new(
        vec![l, c],
        window.data().iter().zip(trend.data()).map(|(x, t)| x - t).collect(),
    )?;
    Ok((trend, remainder))
}

/// `PE(pos, 2i) = sin(pos / 10000^(2i/d))`, `PE(pos, 2i+1) = cos(...)`.
pub fn sinusoidal_encoding(seq_len: usize, d_model: usize) -> Result<Tensor> {
    if !d_model.is_multiple_of(2) || d_model == 0 {
        return Err(Error::InvalidArgument(format!("d_model {d_model} must be even")));
    }
    let mut pe = Tensor::zeros(&[seq_len, d_model]);
    for pos in 0..seq_len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf((2 * i) as f64 / d_model as f64);
            pe.data_mut()[pos * d_model + 2 * i] = angle.sin();
            pe.data_mut()[pos * d_model + 2 * i + 1] = angle.cos();
        }
    }
    Ok(pe)
}

/// `mask[i * L + j]` is true when position `i` may not attend to `j > i`.
pub fn causal_mask(seq_len: usize) -> Vec<bool> {
    (0..seq_len * seq_len).map(|k| k % seq_len > k / seq_len).collect()
}

/// Row-stochastic attention weights `softmax(q kᵀ / sqrt(d_k))` with masked
/// entries forced to zero weight.
pub fn attention_weights(g: &mut Graph, q: Var, k: Var, mask: Option<&[bool]>) -> Result<Var> {
    let d_k = g.shape(q)[1] as f64;
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / d_k.sqrt());
    let scores = match mask {
        Some(m) => g.masked_fill(scores, m, f64::NEG_INFINITY)?,
        None => scores,
    };
    g.softmax(scores, 1)
}

/// Scaled dot-product attention per head on column blocks of `q`, `k`, `v`,
/// with head outputs concatenated. No projections are applied here.
pub fn multi_head_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&[bool]>,
    n_heads: usize,
) -> Result<Var> {
    let d_model = g.shape(q)[1];
    if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
        return Err(Error::InvalidArgument(format!(
            "d_model {d_model} not divisible by {n_heads} heads"
        )));
    }
    if g.shape(k) != g.shape(v) || g.shape(k)[1] != d_model {
        return Err(Error::Shape(format!(
            "attention q {:?}, k {:?}, v {:?}",
            g.shape(q),
            g.shape(k),
            g.shape(v)
        )));
    }
    let d_head = d_model / n_heads;
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (qh, kh, vh) = if n_heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice(q, 1, h * d_head, d_head)?,
                g.slice(k, 1, h * d_head, d_head)?,
                g.slice(v, 1, h * d_head, d_head)?,
            )
        };
        let w = attention_weights(g, qh, kh, mask)?;
        heads.push(g.matmul(w, vh)?);
    }
    if heads.len() == 1 {
        Ok(heads[0])
    } else {
        g.concat(&heads, 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_clamping() {
        assert_eq!(clamp_kernel(25, 10), 19);
        assert_eq!(clamp_kernel(25, 5), 9);
        assert_eq!(clamp_kernel(25, 60), 25);
        assert_eq!(clamp_kernel(24, 60), 23);
        assert_eq!(clamp_kernel(25, 1), 1);
    }

    #[test]
    fn decompose_examples() {
        let c = Tensor::full(&[6, 2], 4.25);
        let (t, r) = series_decompose(&c, 5).unwrap();
        assert_eq!(t, c);
        assert!(r.data().iter().all(|v| *v == 0.0));

        let w = Tensor::new(vec![4, 1], vec![1.0, 3.0, -2.0, 7.0]).unwrap();
        let (t, r) = series_decompose(&w, 1).unwrap();
        assert_eq!(t, w);
        assert!(r.data().iter().all(|v| *v == 0.0));

        let ramp = Tensor::new(vec![10, 1], (1..=10).map(f64::from).collect()).unwrap();
        let (t, _) = series_decompose(&ramp, 5).unwrap();
        for row in 2..8 {
            assert!((t.at2(row, 0) - ramp.at2(row, 0)).abs() < 1e-12);
        }
        // row 0 averages [1, 1, 1, 2, 3]
        assert!((t.at2(0, 0) - 1.6).abs() < 1e-12);
        // row 9 averages [8, 9, 10, 10, 10]
        assert!((t.at2(9, 0) - 9.4).abs() < 1e-12);

        assert!(series_decompose(&ramp, 4).is_err());
        assert!(series_decompose(&ramp, 21).is_err());
    }

    fn window_strategy(lo: f64, hi: f64) -> impl proptest::strategy::Strategy<Value = (Tensor, usize)> {
        use proptest::prelude::*;
        (1usize..12, 1usize..4).prop_flat_map(move |(l, c)| {
            let kernels: Vec<usize> = (1..2 * l).step_by(2).collect();
            (
                prop::collection::vec(lo..hi, l * c).prop_map(move |d| Tensor::new(vec![l, c], d).unwrap()),
                prop::sample::select(kernels),
            )
        })
    }

    proptest::proptest! {
        // within a factor of two the subtraction is exact, so reconstruction is bitwise
        #[test]
        fn reconstruction_is_exact_for_price_like_windows((w, k) in window_strategy(1.0, 2.0)) {
            let (t, r) = series_decompose(&w, k).unwrap();
            for ((x, a), b) in w.data().iter().zip(t.data()).zip(r.data()) {
                proptest::prop_assert_eq!((a + b).to_bits(), x.to_bits());
            }
        }

        #[test]
        fn reconstruction_is_within_rounding((w, k) in window_strategy(-1e3, 1e3)) {
            let (t, r) = series_decompose(&w, k).unwrap();
            for ((x, a), b) in w.data().iter().zip(t.data()).zip(r.data()) {
                proptest::prop_assert!((a + b - x).abs() <= f64::EPSILON * (x.abs() + a.abs()));
            }
        }
    }

    #[test]
    fn matrix_form_matches_direct_decomposition() {
        let w = Tensor::new(vec![7, 2], (0..14).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        let (t, _) = series_decompose(&w, 5).unwrap();
        let mut g = Graph::new();
        let a = g.constant(moving_average_matrix(7, 5).unwrap());
        let x = g.constant(w);
        let y = g.matmul(a, x).unwrap();
        for (p, q) in g.value(y).data().iter().zip(t.data()) {
            assert!((p - q).abs() < 1e-14);
        }
    }

    #[test]
    fn sinusoidal_examples() {
        let pe = sinusoidal_encoding(6, 4).unwrap();
        assert_eq!(pe.at2(0, 0), 0.0);
        assert_eq!(pe.at2(0, 1), 1.0);
        assert_eq!(pe.at2(0, 2), 0.0);
        assert_eq!(pe.at2(0, 3), 1.0);
        assert!((pe.at2(1, 0) - 0.841471).abs() < 1e-6);
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(sinusoidal_encoding(4, 3).is_err());
    }

    #[test]
    fn equal_keys_give_uniform_weights() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::new(vec![3, 2], vec![0.1, 0.4, -1.0, 2.0, 0.3, 0.3]).unwrap());
        let k = g.constant(Tensor::full(&[3, 2], 0.5));
        let v = g.constant(Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 9.0]).unwrap());
        let w = attention_weights(&mut g, q, k, None).unwrap();
        for x in g.value(w).data() {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
        let out = multi_head_attention(&mut g, q, k, v, None, 1).unwrap();
        for row in 0..3 {
            assert!((g.value(out).at2(row, 0) - 3.0).abs() < 1e-12);
            assert!((g.value(out).at2(row, 1) - 5.0).abs() < 1e-12);
        }
        // masked: row 0 sees only position 0
        let mask = causal_mask(3);
        let out = multi_head_attention(&mut g, q, k, v, Some(&mask), 1).unwrap();
        assert!((g.value(out).at2(0, 1) - 2.0).abs() < 1e-12);
        assert!((g.value(out).at2(1, 1) - 3.0).abs() < 1e-12);
        assert!(multi_head_attention(&mut g, q, k, v, None, 3).is_err());
    }

    #[test]
    fn single_head_unmasked_is_plain_formula() {
        let qd = vec![0.2, -0.5, 1.1, 0.3, 0.0, 0.9, -0.4, 0.8];
        let kd = vec![1.0, 0.1, -0.3, 0.6, 0.5, -0.2, 0.7, 0.4];
        let vd = vec![0.5, 1.5, -1.0, 2.0, 0.25, 0.75, 3.0, -2.0];
        let mut g = Graph::new();
        let q = g.constant(Tensor::new(vec![4, 2], qd.clone()).unwrap());
        let k = g.constant(Tensor::new(vec![4, 2], kd.clone()).unwrap());
        let v = g.constant(Tensor::new(vec![4, 2], vd.clone()).unwrap());
        let out = multi_head_attention(&mut g, q, k, v, None, 1).unwrap();
        let got = g.value(out).clone();

        let mut g2 = Graph::new();
        let q = g2.constant(Tensor::new(vec![4, 2], qd).unwrap());
        let k = g2.constant(Tensor::new(vec![4, 2], kd).unwrap());
        let v = g2.constant(Tensor::new(vec![4, 2], vd).unwrap());
        let kt = g2.transpose(k).unwrap();
        let s = g2.matmul(q, kt).unwrap();
        let s = g2.scale(s, 1.0 / 2f64.sqrt());
        let w = g2.softmax(s, 1).unwrap();
        let want = g2.matmul(w, v).unwrap();
        assert_eq!(&got, g2.value(want));
        let rows = g2.sum_axis(w, 1).unwrap();
        assert!(g2.value(rows).data().iter().all(|x| (x - 1.0).abs() < 1e-9));
    }
}
