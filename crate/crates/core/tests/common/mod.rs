#![allow(dead_code)]

use cssl_core::rng::{stream, Rng, Stream};
use cssl_core::ProbDist;
use proptest::prelude::*;
use rand::Rng as _;

pub fn rng(seed: u64) -> Rng {
    stream(seed, Stream::Data)
}

/// Random point of the simplex; `peak` sharpens it towards one vertex so
/// both members and non-members of typical credal sets show up.
pub fn random_simplex(rng: &mut Rng, k: usize) -> Vec<f64> {
    let peak: f64 = rng.random_range(0.2..6.0);
    let w: Vec<f64> = (0..k).map(|_| (-rng.random::<f64>().max(1e-300).ln()).powf(peak)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

pub fn pd(v: &[f64]) -> ProbDist {
    ProbDist::new(v.to_vec()).unwrap()
}

/// Strictly positive simplex points of dimension 2..=10.
pub fn simplex() -> impl Strategy<Value = Vec<f64>> {
    (2usize..=10).prop_flat_map(|k| prop::collection::vec(1e-3f64..1.0, k)).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.iter().map(|v| v / s).collect()
    })
}

/// `(p, reference class)` pairs of matching dimension.
pub fn simplex_with_class() -> impl Strategy<Value = (Vec<f64>, usize)> {
    simplex().prop_flat_map(|p| {
        let k = p.len();
        (Just(p), 0..k)
    })
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}
