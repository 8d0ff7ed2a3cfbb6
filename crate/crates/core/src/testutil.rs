//! Shared fixtures for unit tests.

use crate::dictionary::{Dictionary, Observable};
use crate::koopman::{DictionaryData, LiftedData};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::sync::Arc;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut *rng))
}

/// `b = a·M + noise·G` with random `a`, `M` near the identity and Gaussian `G`.
pub fn random_lifted(seed: u64, n: usize, s: usize, noise: f64) -> LiftedData {
    let mut r = rng(seed);
    let a = gaussian(&mut r, n, s);
    let m = DMatrix::identity(s, s) + gaussian(&mut r, s, s) * 0.3;
    let b = &a * m + gaussian(&mut r, n, s) * noise;
    LiftedData { a, b, basis_coeff: DMatrix::identity(s, s) }
}

/// Data source whose raw dictionary evaluations are exactly `a` and `b`.
pub fn synthetic_source(a: DMatrix<f64>, b: DMatrix<f64>) -> Arc<DictionaryData> {
    let dict = Dictionary::new(1, vec![Observable::Constant; a.ncols()]).unwrap();
    Arc::new(DictionaryData { dict, psi_x: a, psi_xp: b })
}

/// Coefficients of the four planted eigenfunctions `1, x₁, x₁², 1 − 10x₁ − x₂²`
/// over `dict` (which must contain the needed monomials).
pub fn planted_coeffs(dict: &Dictionary) -> DMatrix<f64> {
    let idx = |e: [u32; 2]| {
        dict.observables()
            .iter()
            .position(|o| *o == Observable::Monomial { exponents: e.to_vec() })
            .expect("monomial present")
    };
    let mut c = DMatrix::zeros(dict.len(), 4);
    c[(idx([0, 0]), 0)] = 1.0;
    c[(idx([1, 0]), 1)] = 1.0;
    c[(idx([2, 0]), 2)] = 1.0;
    c[(idx([0, 0]), 3)] = 1.0;
    c[(idx([1, 0]), 3)] = -10.0;
    c[(idx([0, 2]), 3)] = -1.0;
    c
}
