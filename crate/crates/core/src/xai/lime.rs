use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Attribution, Diagnostics, FeatureScore, Method};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimeConfig {
    pub n_perturb: usize,
    /// Defaults to `0.75 * sqrt(M)` over the perturbed features.
    pub kernel_width: Option<f64>,
    pub top_k: usize,
    pub ridge: f64,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig {
            n_perturb: 5000,
            kernel_width: None,
            top_k: 10,
            ridge: 1e-3,
            seed: 42,
        }
    }
}

pub const MIN_TOTAL_WEIGHT: f64 = 1e-12;

/// Weighted ridge fit with an unpenalized intercept. Returns (coefficients, intercept).
fn weighted_ridge(a: &DMatrix<f64>, y: &DVector<f64>, w: &[f64], lambda: f64) -> Result<(DVector<f64>, f64)> {
    let (n, k) = a.shape();
    let sw: f64 = w.iter().sum();
    let x_mean = DVector::from_iterator(k, (0..k).map(|j| (0..n).map(|i| w[i] * a[(i, j)]).sum::<f64>() / sw));
    let y_mean = (0..n).map(|i| w[i] * y[i]).sum::<f64>() / sw;
    let mut xtwx = DMatrix::<f64>::zeros(k, k);
    let mut xtwy = DVector::<f64>::zeros(k);
    let mut row = vec![0.0; k];
    for i in 0..n {
        for j in 0..k {
            row[j] = a[(i, j)] - x_mean[j];
        }
        let yi = y[i] - y_mean;
        for p in 0..k {
            let wp = w[i] * row[p];
            xtwy[p] += wp * yi;
            for q in 0..=p {
                xtwx[(p, q)] += wp * row[q];
            }
        }
    }
    for p in 0..k {
        for q in 0..p {
            xtwx[(q, p)] = xtwx[(p, q)];
        }
        xtwx[(p, p)] += lambda;
    }
    let chol = xtwx.cholesky().ok_or(Error::Singular { rank: 0, dim: k })?;
    let beta = chol.solve(&xtwy);
    let intercept = y_mean - beta.dot(&x_mean);
    Ok((beta, intercept))
}

/// Local weighted ridge surrogate around `x`. Features with zero std are held
/// fixed and never reported.
pub fn lime_explain<F>(model_fn: F, x: &[f64], stats: &[FeatureStats], config: &LimeConfig) -> Result<Attribution>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if x.len() != stats.len() || x.is_empty() {
        return Err(Error::Shape(format!("{} features with {} stats", x.len(), stats.len())));
    }
    if config.n_perturb < 2 || config.top_k == 0 || config.ridge < 0.0 {
        return Err(Error::InvalidArgument(format!("invalid LIME config {config:?}")));
    }
    let active: Vec<usize> = (0..x.len())
        .filter(|&j| stats[j].std > 0.0 && stats[j].std.is_finite())
        .collect();
    let prediction = model_fn(x)?;
    if !prediction.is_finite() {
        return Err(Error::NonFiniteOutput(prediction));
    }
    if active.is_empty() {
        return Err(Error::InvalidArgument("no feature has positive spread".into()));
    }
    let m = active.len();
    let width = config.kernel_width.unwrap_or(0.75 * (m as f64).sqrt());
    if !(width > 0.0) {
        return Err(Error::InvalidArgument(format!("kernel width {width}")));
    }

    let mut rng = rng::stream(config.seed, &[0x4C49_4D45]);
    let mut eps = DMatrix::<f64>::zeros(config.n_perturb, m);
    let mut inputs = Vec::with_capacity(config.n_perturb);
    let mut weights = Vec::with_capacity(config.n_perturb);
    for i in 0..config.n_perturb {
        let mut z = x.to_vec();
        let mut d2 = 0.0;
        for (c, &j) in active.iter().enumerate() {
            let e: f64 = StandardNormal.sample(&mut rng);
            eps[(i, c)] = e;
            d2 += e * e;
            z[j] = x[j] + stats[j].std * e;
        }
        weights.push((-d2 / (width * width)).exp());
        inputs.push(z);
    }
    if weights.iter().all(|w| *w < MIN_TOTAL_WEIGHT) {
        return Err(Error::InvalidArgument(format!(
            "all proximity weights below {MIN_TOTAL_WEIGHT}; kernel width {width} too small"
        )));
    }
    let outputs: Vec<f64> = inputs
        .par_iter()
        .map(|z| {
            let v = model_fn(z)?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFiniteOutput(v))
            }
        })
        .collect::<Result<_>>()?;
    let y = DVector::from_vec(outputs);

    // design column c holds z_j - x_j for feature active[c]
    let design = |cols: &[usize]| {
        DMatrix::from_fn(config.n_perturb, cols.len(), |i, c| {
            stats[active[cols[c]]].std * eps[(i, cols[c])]
        })
    };
    let all: Vec<usize> = (0..m).collect();
    let (beta, _) = weighted_ridge(&design(&all), &y, &weights, config.ridge)?;
    let mut order = all.clone();
    order.sort_by(|&a, &b| beta[b].abs().total_cmp(&beta[a].abs()).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = order.into_iter().take(config.top_k.min(m)).collect();
    chosen.sort_unstable();

    let a = design(&chosen);
    let (beta, intercept) = weighted_ridge(&a, &y, &weights, config.ridge)?;
    let fitted = &a * &beta;
    let sw: f64 = weights.iter().sum();
    let residual = ((0..config.n_perturb)
        .map(|i| weights[i] * (y[i] - intercept - fitted[i]).powi(2))
        .sum::<f64>()
        / sw)
        .sqrt();
    let features = chosen
        .iter()
        .zip(beta.iter())
        .map(|(&c, &score)| FeatureScore {
            index: active[c],
            name: format!("x{}", active[c]),
            score,
        })
        .collect();
    Ok(Attribution {
        method: Method::Lime,
        features,
        base_value: intercept,
        prediction,
        target_date: None,
        diagnostics: Diagnostics {
            n_samples: config.n_perturb,
            residual,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_stats(m: usize) -> Vec<FeatureStats> {
        vec![FeatureStats { mean: 0.0, std: 1.0 }; m]
    }

    #[test]
    fn constant_model_has_no_signal() {
        let cfg = LimeConfig::default();
        let a = lime_explain(|_| Ok(5.0), &[0.1, 0.2, 0.3], &unit_stats(3), &cfg).unwrap();
        assert!(a.features.iter().all(|f| f.score.abs() < 1e-6));
        assert!((a.base_value - 5.0).abs() < 1e-6);
    }

    #[test]
    fn top_k_contract_and_zero_std_exclusion() {
        let w = [1.0, -2.0, 0.5, 3.0, 0.1, 4.0];
        let f = |z: &[f64]| Ok(z.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>());
        let mut stats = unit_stats(6);
        stats[5].std = 0.0;
        let cfg = LimeConfig {
            top_k: 3,
            ..LimeConfig::default()
        };
        let a = lime_explain(f, &[0.0; 6], &stats, &cfg).unwrap();
        let idx: Vec<usize> = a.features.iter().map(|f| f.index).collect();
        assert_eq!(idx, vec![0, 1, 3]);
    }

    #[test]
    fn seeded() {
        let f = |z: &[f64]| Ok(z[0].sin() + z[1] * z[2]);
        let cfg = LimeConfig::default();
        let a = lime_explain(f, &[0.2, 0.4, 1.0], &unit_stats(3), &cfg).unwrap();
        let b = lime_explain(f, &[0.2, 0.4, 1.0], &unit_stats(3), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_kernel_width_rejected() {
        let cfg = LimeConfig {
            kernel_width: Some(1e-4),
            n_perturb: 200,
            ..LimeConfig::default()
        };
        assert!(lime_explain(|z| Ok(z[0]), &[0.0; 4], &unit_stats(4), &cfg).is_err());
    }
}
