//! Random operators for tests, verification and randomized model draws.

use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{exp_minus_i_hermitian, CMatrix};
use crate::scalar::{Real, C};

fn gaussian<T: Real, R: Rng + ?Sized>(rng: &mut R) -> C<T> {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex::new(T::lit(re), T::lit(im))
}

/// Ginibre matrix with standard complex normal entries.
pub fn matrix<T: Real, R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMatrix<T> {
    CMatrix::from_fn(n, n, |_, _| gaussian(rng))
}

pub fn hermitian<T: Real, R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMatrix<T> {
    matrix(n, rng).hermitian_part()
}

/// Unitary `exp(-i H)` for a random Hermitian `H`.
pub fn unitary<T: Real, R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMatrix<T> {
    let h = hermitian::<T, R>(n, rng);
    exp_minus_i_hermitian(&h, T::lit(2.0)).expect("square by construction")
}

/// Full-rank density matrix `G G† / tr(G G†)`.
pub fn density<T: Real, R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMatrix<T> {
    let g = matrix::<T, R>(n, rng);
    let rho = g.matmul_adjoint(&g);
    let tr = rho.trace().re;
    rho.scale_real(T::one() / tr)
}

/// Normalized random state vector.
pub fn pure_state<T: Real, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<C<T>> {
    let v: Vec<C<T>> = (0..n).map(|_| gaussian(rng)).collect();
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt();
    v.into_iter().map(|z| z / norm).collect()
}
