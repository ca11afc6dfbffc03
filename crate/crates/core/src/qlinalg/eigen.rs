use num_complex::Complex;
use num_traits::Zero;

use super::CMatrix;
use crate::error::{Error, Result};
use crate::scalar::{Real, C};

const MAX_SWEEPS: usize = 64;

/// Eigen-decomposition of the Hermitian part of `a` by cyclic complex Jacobi
/// rotations.
///
/// Returns eigenvalues in ascending order and the unitary whose columns are
/// the matching eigenvectors.
pub fn eigh<T: Real>(a: &CMatrix<T>) -> Result<(Vec<T>, CMatrix<T>)> {
    let n = a.require_square("eigh")?;
    let mut m = a.hermitian_part();
    let mut v = CMatrix::<T>::identity(n);
    jacobi(&mut m, Some(&mut v));

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].re.partial_cmp(&m[(j, j)].re).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| m[(i, i)].re).collect();
    let vectors = CMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok((values, vectors))
}

/// Ascending eigenvalues of the Hermitian part of `a`.
pub fn eigvalsh<T: Real>(a: &CMatrix<T>) -> Result<Vec<T>> {
    let n = a.require_square("eigvalsh")?;
    if n == 1 {
        return Ok(vec![a[(0, 0)].re]);
    }
    if n == 2 {
        return Ok(eigvals_2x2(a));
    }
    let mut m = a.hermitian_part();
    jacobi(&mut m, None);
    let mut values: Vec<T> = (0..n).map(|i| m[(i, i)].re).collect();
    values.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    Ok(values)
}

fn eigvals_2x2<T: Real>(a: &CMatrix<T>) -> Vec<T> {
    let half = T::lit(0.5);
    let p = a[(0, 0)].re;
    let q = a[(1, 1)].re;
    let off = (a[(0, 1)] + a[(1, 0)].conj()) * half;
    let mean = (p + q) * half;
    let r = ((p - q) * half).hypot(off.norm());
    // the eigenvalue of smaller magnitude is recovered from the determinant
    // to avoid cancellation
    let det = p * q - off.norm_sqr();
    if mean >= T::zero() {
        let hi = mean + r;
        let lo = if hi > T::zero() { det / hi } else { mean - r };
        vec![lo, hi]
    } else {
        let lo = mean - r;
        let hi = if lo < T::zero() { det / lo } else { mean + r };
        vec![lo, hi]
    }
}

fn jacobi<T: Real>(m: &mut CMatrix<T>, mut vecs: Option<&mut CMatrix<T>>) {
    let n = m.rows();
    let scale = m.frobenius_norm();
    if scale.is_zero() || !scale.is_finite() {
        return;
    }
    let eps = T::epsilon();
    for _ in 0..MAX_SWEEPS {
        let mut off = T::zero();
        for p in 0..n {
            for q in p + 1..n {
                off = off + m[(p, q)].norm_sqr();
            }
        }
        if off.sqrt() <= eps * eps * scale || off.is_zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                let abs = apq.norm();
                if abs <= eps * eps * scale {
                    continue;
                }
                let app = m[(p, p)].re;
                let aqq = m[(q, q)].re;
                let theta = (aqq - app) / (T::lit(2.0) * abs);
                let sign = if theta < T::zero() { -T::one() } else { T::one() };
                let t = sign / (theta.abs() + (theta * theta + T::one()).sqrt());
                let cs = T::one() / (t * t + T::one()).sqrt();
                let sn = t * cs;
                let phase_conj = (apq / abs).conj();
                let wpp = Complex::new(cs, T::zero());
                let wpq = Complex::new(sn, T::zero());
                let wqp = phase_conj * (-sn);
                let wqq = phase_conj * cs;
                rotate_cols(m, p, q, wpp, wpq, wqp, wqq);
                rotate_rows(m, p, q, wpp, wpq, wqp, wqq);
                m[(p, q)] = C::zero();
                m[(q, p)] = C::zero();
                m[(p, p)].im = T::zero();
                m[(q, q)].im = T::zero();
                if let Some(v) = vecs.as_deref_mut() {
                    rotate_cols(v, p, q, wpp, wpq, wqp, wqq);
                }
            }
        }
    }
}

// A <- A W for W equal to the identity outside the (p, q) block.
#[inline]
fn rotate_cols<T: Real>(a: &mut CMatrix<T>, p: usize, q: usize, wpp: C<T>, wpq: C<T>, wqp: C<T>, wqq: C<T>) {
    for k in 0..a.rows() {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = akp * wpp + akq * wqp;
        a[(k, q)] = akp * wpq + akq * wqq;
    }
}

// A <- W† A
#[inline]
fn rotate_rows<T: Real>(a: &mut CMatrix<T>, p: usize, q: usize, wpp: C<T>, wpq: C<T>, wqp: C<T>, wqq: C<T>) {
    for k in 0..a.cols() {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = wpp.conj() * apk + wqp.conj() * aqk;
        a[(q, k)] = wpq.conj() * apk + wqq.conj() * aqk;
    }
}

/// Outcome of a positivity check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdReport<T> {
    pub ok: bool,
    pub min_eigenvalue: T,
}

/// Checks positive semi-definiteness: `ok` iff the smallest eigenvalue is at
/// least `-tol`. Inputs further than `tol` from Hermitian are rejected.
pub fn check_psd<T: Real>(a: &CMatrix<T>, tol: T) -> Result<PsdReport<T>> {
    a.require_square("check_psd")?;
    let defect = a.hermitian_defect();
    if defect > tol {
        return Err(Error::NotHermitian {
            defect: defect.as_f64(),
            tol: tol.as_f64(),
        });
    }
    let min_eigenvalue = eigvalsh(a)?[0];
    Ok(PsdReport {
        ok: min_eigenvalue >= -tol,
        min_eigenvalue,
    })
}

/// Trace distance `½ Σ |λ_i(a - b)|` of two Hermitian matrices.
pub fn trace_distance<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> Result<T> {
    let n = a.require_square("trace_distance")?;
    b.require_dim(n, "trace_distance")?;
    let d = a - b;
    Ok(eigvalsh(&d)?.into_iter().map(T::abs).sum::<T>() * T::lit(0.5))
}

/// Spectral norm of (the Hermitian part of) `a`: `max |λ_i|`.
pub fn hermitian_norm<T: Real>(a: &CMatrix<T>) -> Result<T> {
    Ok(eigvalsh(a)?.into_iter().map(T::abs).fold(T::zero(), T::max))
}

/// `exp(-i t h)` for Hermitian `h`, exact up to the eigensolver's round-off.
pub fn exp_minus_i_hermitian<T: Real>(h: &CMatrix<T>, t: T) -> Result<CMatrix<T>> {
    let n = h.require_square("exp_minus_i_hermitian")?;
    let (values, vectors) = eigh(h)?;
    let phases: Vec<C<T>> = values
        .iter()
        .map(|&l| {
            let a = -l * t;
            Complex::new(a.cos(), a.sin())
        })
        .collect();
    let scaled = CMatrix::from_fn(n, n, |i, j| vectors[(i, j)] * phases[j]);
    Ok(scaled.matmul_adjoint(&vectors))
}
