//! Small seeded models and inputs shared by the integration suites.
#![allow(dead_code)]

use stockcast_core::models::{DLinearHyper, Hyper, LstNetHyper, ModelKind, TransformerHyper};
use stockcast_core::tensor::Tensor;
use stockcast_core::Result;

/// Toy geometry per architecture, small enough for finite differences.
pub fn toy_hyper(kind: ModelKind) -> Hyper {
    let t = TransformerHyper {
        d_model: 8,
        n_heads: 2,
        n_layers: 2,
        ff_width: 16,
    };
    match kind {
        ModelKind::DLinear => Hyper::DLinear(DLinearHyper { kernel: 25 }),
        ModelKind::LstNet => Hyper::LstNet(LstNetHyper {
            filters: 4,
            width: 3,
            hidden: 5,
            skip: 2,
            skip_hidden: 3,
            ar_window: 4,
        }),
        ModelKind::Vanilla => Hyper::Vanilla(t),
        ModelKind::Tst => Hyper::Tst(t),
    }
}

pub fn toy_window(l: usize, c: usize, seed: u64) -> Tensor {
    let mut r = stockcast_core::rng::stream(seed, &[3]);
    Tensor::new(
        vec![l, c],
        (0..l * c).map(|_| rand::Rng::random_range(&mut r, 0.0..1.0)).collect(),
    )
    .unwrap()
}

/// Seeded smooth nonlinear model of `m` inputs with pairwise interactions.
pub fn nonlinear_model(m: usize, seed: u64) -> impl Fn(&[f64]) -> Result<f64> + Sync {
    let mut r = stockcast_core::rng::stream(seed, &[1]);
    let mut u = move || rand::Rng::random_range(&mut r, -1.0..1.0);
    let w: Vec<f64> = (0..m).map(|_| u()).collect();
    let pairs: Vec<(usize, usize, f64)> = (0..m).map(|i| (i, (i * 7 + 3) % m, u())).collect();
    move |z: &[f64]| {
        let lin: f64 = z.iter().zip(&w).map(|(a, b)| a * b).sum();
        let inter: f64 = pairs.iter().map(|&(i, j, c)| c * z[i] * z[j]).sum();
        Ok(lin.tanh() + inter + (z[0] * 0.5).sin())
    }
}

/// (instance, background) pair.
pub fn point(m: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut r = stockcast_core::rng::stream(seed, &[2]);
    let mut u = move || rand::Rng::random_range(&mut r, -2.0..2.0);
    ((0..m).map(|_| u()).collect(), (0..m).map(|_| u()).collect())
}
