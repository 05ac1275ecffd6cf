//! Seeded randomness shared by the verification suites and tests. Each case
//! draws from a counter-based ChaCha stream so suites are reproducible and
//! order-independent.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::space::C64;

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for case `index` under the suite `seed`.
pub fn case_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn random_vector(rng: &mut impl Rng, n: usize) -> DVector<C64> {
    DVector::from_fn(n, |_, _| {
        C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    })
}

pub fn random_real_vector(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<C64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    })
}

/// Random Hermitian matrix.
pub fn random_hermitian(rng: &mut impl Rng, n: usize) -> DMatrix<C64> {
    let a = random_matrix(rng, n, n);
    (a.adjoint() + &a).map(|x| x * 0.5)
}

/// Random Hermitian positive semi-definite matrix.
pub fn random_psd(rng: &mut impl Rng, n: usize) -> DMatrix<C64> {
    let a = random_matrix(rng, n, n);
    a.adjoint() * &a
}
