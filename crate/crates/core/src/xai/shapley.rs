use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use super::{Attribution, Diagnostics, Method};
use crate::error::{Error, Result};
use crate::rng;

pub const MAX_EXACT_FEATURES: usize = 20;

fn coalition_input(x: &[f64], background: &[f64], on: &[bool]) -> Vec<f64> {
    x.iter()
        .zip(background)
        .zip(on)
        .map(|((&xi, &bi), &o)| if o { xi } else { bi })
        .collect()
}

fn mask_bits(mask: u64, m: usize) -> Vec<bool> {
    (0..m).map(|i| mask >> i & 1 == 1).collect()
}

/// Evaluates `f` on every coalition in order; evaluation may run in parallel.
fn evaluate_all<F>(f: &F, x: &[f64], background: &[f64], coalitions: &[Vec<bool>]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    coalitions
        .par_iter()
        .map(|on| {
            let v = f(&coalition_input(x, background, on))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFiniteOutput(v))
            }
        })
        .collect()
}

fn check_inputs(x: &[f64], background: &[f64]) -> Result<()> {
    if x.is_empty() || x.len() != background.len() {
        return Err(Error::Shape(format!(
            "instance of length {} with background of length {}",
            x.len(),
            background.len()
        )));
    }
    Ok(())
}

/// Shapley values by enumeration of all `2^M` coalitions.
pub fn exact_shapley<F>(model_fn: F, x: &[f64], background: &[f64]) -> Result<Attribution>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    check_inputs(x, background)?;
    let m = x.len();
    if m > MAX_EXACT_FEATURES {
        return Err(Error::InvalidArgument(format!(
            "exact Shapley enumeration limited to {MAX_EXACT_FEATURES} features, got {m}"
        )));
    }
    let masks: Vec<Vec<bool>> = (0..1u64 << m).map(|s| mask_bits(s, m)).collect();
    let v = evaluate_all(&model_fn, x, background, &masks)?;
    // marginal weight |S|! (M - |S| - 1)! / M! = 1 / (M * C(M-1, |S|))
    let weights: Vec<f64> = (0..m).map(|s| 1.0 / (m as f64 * binomial(m - 1, s))).collect();
    let mut phi = vec![0.0; m];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1u64 << i;
        for s in 0..1u64 << m {
            if s & bit == 0 {
                *p += weights[s.count_ones() as usize] * (v[(s | bit) as usize] - v[s as usize]);
            }
        }
    }
    let base = v[0];
    let prediction = v[(1usize << m) - 1];
    Ok(Attribution::indexed(
        Method::ExactShapley,
        phi,
        base,
        prediction,
        Diagnostics {
            n_samples: 1 << m,
            residual: 0.0,
        },
    ))
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley kernel weight of a coalition with `s` of `m` features present.
pub fn shapley_kernel(m: usize, s: usize) -> f64 {
    if s == 0 || s == m {
        return f64::INFINITY;
    }
    (m - 1) as f64 / (binomial(m, s) * s as f64 * (m - s) as f64)
}

/// Coalitions and regression weights for KernelSHAP, excluding the empty and
/// full coalitions (those enter as constraints).
fn kernel_coalitions(m: usize, n_samples: usize, seed: u64) -> (Vec<Vec<bool>>, Vec<f64>, bool) {
    let interior = if m < 63 { (1u64 << m) - 2 } else { u64::MAX };
    if (n_samples as u64) >= interior.saturating_add(2) {
        let mut zs = Vec::new();
        let mut ws = Vec::new();
        for s in 1..(1u64 << m) - 1 {
            let z = mask_bits(s, m);
            ws.push(shapley_kernel(m, s.count_ones() as usize));
            zs.push(z);
        }
        return (zs, ws, true);
    }
    // Size drawn with probability proportional to its total kernel mass
    // (M - 1) / (s (M - s)), then a uniform subset of that size. Each draw
    // carries unit weight; repeats add to the weight of the first occurrence
    // so the budget buys distinct rows. Complement pairing is not used: after
    // eliminating the constraint a complement's row is the negated original.
    let size_mass: Vec<f64> = (1..m).map(|s| (m - 1) as f64 / (s * (m - s)) as f64).collect();
    let total: f64 = size_mass.iter().sum();
    let mut rng = rng::stream(seed, &[0x4B53_4850]);
    let budget = n_samples.saturating_sub(2).max(1);
    let max_draws = budget.saturating_mul(64);
    let mut zs: Vec<Vec<bool>> = Vec::with_capacity(budget);
    let mut ws: Vec<f64> = Vec::with_capacity(budget);
    let mut seen: HashMap<Vec<bool>, usize> = HashMap::new();
    let mut idx: Vec<usize> = (0..m).collect();
    let mut draws = 0;
    while zs.len() < budget && draws < max_draws {
        draws += 1;
        let mut u = rng.random::<f64>() * total;
        let mut s = m - 1;
        for (k, mass) in size_mass.iter().enumerate() {
            if u < *mass {
                s = k + 1;
                break;
            }
            u -= mass;
        }
        // partial Fisher-Yates for the first s positions
        for j in 0..s {
            let r = rng.random_range(j..m);
            idx.swap(j, r);
        }
        let mut z = vec![false; m];
        for &j in &idx[..s] {
            z[j] = true;
        }
        match seen.get(&z) {
            Some(&i) => ws[i] += 1.0,
            None => {
                seen.insert(z.clone(), zs.len());
                zs.push(z);
                ws.push(1.0);
            }
        }
    }
    (zs, ws, false)
}

/// KernelSHAP with the efficiency constraint eliminated from the weighted
/// least-squares system.
pub fn kernel_shap<F>(model_fn: F, x: &[f64], background: &[f64], n_samples: usize, seed: u64) -> Result<Attribution>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    check_inputs(x, background)?;
    let m = x.len();
    if n_samples < m + 2 {
        return Err(Error::InvalidArgument(format!(
            "kernel SHAP needs at least M + 2 = {} samples, got {n_samples}",
            m + 2
        )));
    }
    let ends = [vec![false; m], vec![true; m]];
    let end_values = evaluate_all(&model_fn, x, background, &ends)?;
    let (base, prediction) = (end_values[0], end_values[1]);
    let delta = prediction - base;
    if m == 1 {
        return Ok(Attribution::indexed(
            Method::KernelShap,
            vec![delta],
            base,
            prediction,
            Diagnostics {
                n_samples: 2,
                residual: 0.0,
            },
        ));
    }

    let (zs, ws, _) = kernel_coalitions(m, n_samples, seed);
    let v = evaluate_all(&model_fn, x, background, &zs)?;

    // phi_last = delta - sum(phi_other); columns are z_i - z_last.
    let rows = zs.len();
    let k = m - 1;
    let mut a = DMatrix::<f64>::zeros(rows, k);
    let mut y = DVector::<f64>::zeros(rows);
    for (r, (z, &w)) in zs.iter().zip(&ws).enumerate() {
        let sw = w.sqrt();
        let last = f64::from(u8::from(z[k]));
        for i in 0..k {
            a[(r, i)] = sw * (f64::from(u8::from(z[i])) - last);
        }
        y[r] = sw * (v[r] - base - last * delta);
    }
    // Normal equations through a symmetric eigendecomposition, which also
    // yields the numerical rank.
    let eig = (a.transpose() * &a).symmetric_eigen();
    let emax = eig.eigenvalues.max().max(0.0);
    let tol = emax * (rows.max(k) as f64) * f64::EPSILON;
    let rank = eig.eigenvalues.iter().filter(|&&e| e > tol).count();
    if rank < k || emax == 0.0 {
        return Err(Error::Singular { rank, dim: k });
    }
    let aty = a.transpose() * &y;
    let coef = eig.eigenvectors.transpose() * aty;
    let scaled = DVector::from_iterator(k, coef.iter().zip(eig.eigenvalues.iter()).map(|(c, e)| c / e));
    let sol = &eig.eigenvectors * scaled;
    let residual = (&a * &sol - &y).norm();
    let mut phi: Vec<f64> = sol.iter().copied().collect();
    let rest: f64 = phi.iter().sum();
    phi.push(delta - rest);
    Ok(Attribution::indexed(
        Method::KernelShap,
        phi,
        base,
        prediction,
        Diagnostics {
            n_samples: zs.len() + 2,
            residual,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_and_product_examples() {
        let a = exact_shapley(|z| Ok(2.0 * z[0] + 3.0 * z[1]), &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(a.scores(), vec![2.0, 3.0]);
        assert_eq!(a.base_value, 0.0);
        let a = exact_shapley(|z| Ok(z[0] * z[1]), &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(a.scores(), vec![0.5, 0.5]);
    }

    #[test]
    fn dummy_feature_is_exactly_zero() {
        let f = |z: &[f64]| Ok((z[0] * 1.7).sin() + z[2] * z[0]);
        let a = exact_shapley(f, &[0.3, 9.0, -1.2], &[0.1, -4.0, 0.5]).unwrap();
        assert_eq!(a.scores()[1], 0.0);
    }

    #[test]
    fn too_many_features_for_enumeration() {
        let x = vec![0.0; 21];
        assert!(exact_shapley(|_| Ok(0.0), &x, &x).is_err());
    }

    #[test]
    fn kernel_weights() {
        assert!((shapley_kernel(4, 1) - 3.0 / (4.0 * 3.0)).abs() < 1e-15);
        assert!((shapley_kernel(4, 2) - 3.0 / (6.0 * 4.0)).abs() < 1e-15);
        assert_eq!(shapley_kernel(4, 0), f64::INFINITY);
        assert_eq!(binomial(12, 6), 924.0);
    }

    #[test]
    fn kernel_full_enumeration_matches_exact_small() {
        let f = |z: &[f64]| Ok(z[0] * z[1] + (z[2] - z[3]).tanh() + z[0].powi(2));
        let x = [0.4, -1.0, 2.0, 0.7];
        let b = [0.0, 0.5, -0.3, 0.1];
        let e = exact_shapley(f, &x, &b).unwrap();
        let k = kernel_shap(f, &x, &b, 16, 0).unwrap();
        for (p, q) in e.scores().iter().zip(k.scores()) {
            assert!((p - q).abs() < 1e-9, "{p} vs {q}");
        }
        assert!((k.base_value + k.scores().iter().sum::<f64>() - k.prediction).abs() < 1e-12);
    }

    #[test]
    fn sampled_kernel_is_seeded_and_additive() {
        let w: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).cos()).collect();
        let f = |z: &[f64]| Ok(z.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>());
        let x: Vec<f64> = (0..30).map(|i| i as f64 / 10.0).collect();
        let b = vec![0.5; 30];
        let a1 = kernel_shap(f, &x, &b, 400, 7).unwrap();
        let a2 = kernel_shap(f, &x, &b, 400, 7).unwrap();
        assert_eq!(a1, a2);
        assert!((a1.base_value + a1.scores().iter().sum::<f64>() - a1.prediction).abs() < 1e-9);
        // linear model: every sampled system is solved exactly
        for (i, s) in a1.scores().iter().enumerate() {
            assert!((s - w[i] * (x[i] - b[i])).abs() < 1e-8);
        }
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(kernel_shap(|_| Ok(0.0), &[1.0; 5], &[0.0; 5], 6, 0).is_err());
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let r = kernel_shap(|z| Ok(1.0 / z[0]), &[1.0, 1.0], &[0.0, 0.0], 4, 0);
        assert!(matches!(r, Err(Error::NonFiniteOutput(_))));
    }
}
