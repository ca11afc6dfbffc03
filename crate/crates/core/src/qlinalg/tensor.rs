use num_traits::Zero;
use serde::{Deserialize, Serialize};

use super::CMatrix;
use crate::error::{Error, Result};
use crate::scalar::{Real, C};

/// Ordered subsystem dimensions of a composite Hilbert space. The first
/// factor is the most significant digit of a flattened index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HilbertFactorization {
    dims: Vec<usize>,
}

impl HilbertFactorization {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::DimensionMismatch {
                context: "HilbertFactorization::new",
                expected: 1,
                found: 0,
            });
        }
        Ok(Self { dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn total(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dims.len()];
        for f in (0..self.dims.len().saturating_sub(1)).rev() {
            s[f] = s[f + 1] * self.dims[f + 1];
        }
        s
    }

    /// Flattened offsets of every multi-index over `factors`, enumerated with
    /// `factors[0]` most significant.
    fn offsets(&self, factors: &[usize]) -> Vec<usize> {
        let strides = self.strides();
        let mut out = vec![0usize];
        for &f in factors {
            let mut next = Vec::with_capacity(out.len() * self.dims[f]);
            for &base in &out {
                for d in 0..self.dims[f] {
                    next.push(base + d * strides[f]);
                }
            }
            out = next;
        }
        out
    }

    fn check_targets(&self, targets: &[usize]) -> Result<()> {
        let mut seen = vec![false; self.dims.len()];
        for &t in targets {
            if t >= self.dims.len() || seen[t] {
                return Err(Error::DimensionMismatch {
                    context: "factor index",
                    expected: self.dims.len(),
                    found: t,
                });
            }
            seen[t] = true;
        }
        Ok(())
    }

    fn complement(&self, targets: &[usize]) -> Vec<usize> {
        (0..self.dims.len()).filter(|f| !targets.contains(f)).collect()
    }
}

/// Kronecker product `a ⊗ b`.
pub fn tensor_product<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> CMatrix<T> {
    let (ar, ac, br, bc) = (a.rows(), a.cols(), b.rows(), b.cols());
    CMatrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

/// Left-to-right Kronecker product of a list of matrices.
pub fn kron_all<T: Real>(factors: &[&CMatrix<T>]) -> CMatrix<T> {
    let mut it = factors.iter();
    let first = (*it.next().expect("kron_all needs at least one factor")).clone();
    it.fold(first, |acc, m| tensor_product(&acc, m))
}

/// Traces out every factor not listed in `keep`. Kept factors appear in
/// ascending order in the result.
pub fn partial_trace<T: Real>(a: &CMatrix<T>, f: &HilbertFactorization, keep: &[usize]) -> Result<CMatrix<T>> {
    let n = a.require_square("partial_trace")?;
    if n != f.total() {
        return Err(Error::DimensionMismatch {
            context: "partial_trace",
            expected: f.total(),
            found: n,
        });
    }
    let mut keep = keep.to_vec();
    keep.sort_unstable();
    keep.dedup();
    f.check_targets(&keep)?;
    let traced = f.complement(&keep);
    let ko = f.offsets(&keep);
    let ro = f.offsets(&traced);
    let m = ko.len();
    let mut out = CMatrix::zeros(m, m);
    for (i, &oi) in ko.iter().enumerate() {
        for (j, &oj) in ko.iter().enumerate() {
            let mut acc = C::zero();
            for &r in &ro {
                acc = acc + a[(oi + r, oj + r)];
            }
            out[(i, j)] = acc;
        }
    }
    Ok(out)
}

/// Reduced density matrix `tr_rest |psi><psi|` on the factors in `keep`.
pub fn partial_trace_vector<T: Real>(psi: &[C<T>], f: &HilbertFactorization, keep: &[usize]) -> Result<CMatrix<T>> {
    if psi.len() != f.total() {
        return Err(Error::DimensionMismatch {
            context: "partial_trace_vector",
            expected: f.total(),
            found: psi.len(),
        });
    }
    let mut keep = keep.to_vec();
    keep.sort_unstable();
    keep.dedup();
    f.check_targets(&keep)?;
    let traced = f.complement(&keep);
    let ko = f.offsets(&keep);
    let ro = f.offsets(&traced);
    let m = ko.len();
    let mut out = CMatrix::zeros(m, m);
    for &r in &ro {
        for (i, &oi) in ko.iter().enumerate() {
            let a = psi[oi + r];
            if a.is_zero() {
                continue;
            }
            for (j, &oj) in ko.iter().enumerate() {
                out[(i, j)] = out[(i, j)] + a * psi[oj + r].conj();
            }
        }
    }
    Ok(out)
}

/// Full-space matrix of `op` acting on the factors `targets` (in the given
/// order) and as the identity elsewhere.
pub fn embed<T: Real>(op: &CMatrix<T>, f: &HilbertFactorization, targets: &[usize]) -> Result<CMatrix<T>> {
    f.check_targets(targets)?;
    let to = f.offsets(targets);
    op.require_dim(to.len(), "embed")?;
    let ro = f.offsets(&f.complement(targets));
    let n = f.total();
    let mut out = CMatrix::zeros(n, n);
    for &r in &ro {
        for (a, &oa) in to.iter().enumerate() {
            for (b, &ob) in to.iter().enumerate() {
                out[(oa + r, ob + r)] = op[(a, b)];
            }
        }
    }
    Ok(out)
}

/// Applies `op` on the factors `targets` of the state vector `psi`.
pub fn apply_local<T: Real>(
    psi: &[C<T>],
    f: &HilbertFactorization,
    targets: &[usize],
    op: &CMatrix<T>,
) -> Result<Vec<C<T>>> {
    if psi.len() != f.total() {
        return Err(Error::DimensionMismatch {
            context: "apply_local",
            expected: f.total(),
            found: psi.len(),
        });
    }
    f.check_targets(targets)?;
    let to = f.offsets(targets);
    op.require_dim(to.len(), "apply_local")?;
    let ro = f.offsets(&f.complement(targets));
    let mut out = vec![C::zero(); psi.len()];
    let mut local = vec![C::zero(); to.len()];
    for &r in &ro {
        for (b, &ob) in to.iter().enumerate() {
            local[b] = psi[ob + r];
        }
        for (a, &oa) in to.iter().enumerate() {
            let row = op.row(a);
            out[oa + r] = row.iter().zip(&local).fold(C::zero(), |acc, (&x, &y)| acc + x * y);
        }
    }
    Ok(out)
}

/// `(op ⊗ I_aux) · a` where `a` lives on `sys ⊗ aux`.
pub fn lmul_first<T: Real>(op: &CMatrix<T>, a: &CMatrix<T>, aux: usize) -> CMatrix<T> {
    let d = op.rows();
    let n = a.rows();
    assert_eq!(d * aux, n, "lmul_first dimension mismatch");
    let m = a.cols();
    let mut out = CMatrix::zeros(n, m);
    for s in 0..d {
        for t in 0..d {
            let l = op[(s, t)];
            if l.is_zero() {
                continue;
            }
            for x in 0..aux {
                let dst = s * aux + x;
                let src = t * aux + x;
                for j in 0..m {
                    out[(dst, j)] = out[(dst, j)] + l * a[(src, j)];
                }
            }
        }
    }
    out
}

/// `a · (op ⊗ I_aux)` where `a` lives on `sys ⊗ aux`.
pub fn rmul_first<T: Real>(a: &CMatrix<T>, op: &CMatrix<T>, aux: usize) -> CMatrix<T> {
    let d = op.rows();
    let n = a.cols();
    assert_eq!(d * aux, n, "rmul_first dimension mismatch");
    let m = a.rows();
    let mut out = CMatrix::zeros(m, n);
    for t in 0..d {
        for s in 0..d {
            let l = op[(t, s)];
            if l.is_zero() {
                continue;
            }
            for x in 0..aux {
                let dst = s * aux + x;
                let src = t * aux + x;
                for i in 0..m {
                    out[(i, dst)] = out[(i, dst)] + a[(i, src)] * l;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qlinalg::{pauli, random};
    use crate::scalar::cr;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_tensor_identity() {
        let i2 = CMatrix::<f64>::identity(2);
        assert_eq!(tensor_product(&i2, &i2), CMatrix::identity(4));
    }

    #[test]
    fn projector_product() {
        let p0 = CMatrix::<f64>::basis_projector(2, 0);
        let p1 = CMatrix::<f64>::basis_projector(2, 1);
        let m = tensor_product(&p0, &p1);
        for i in 0..4 {
            for j in 0..4 {
                let expected = if (i, j) == (1, 1) { 1.0 } else { 0.0 };
                assert_eq!(m[(i, j)], cr(expected));
            }
        }
    }

    #[test]
    fn xx_is_an_involution() {
        let xx = tensor_product(&pauli::x::<f64>(), &pauli::x());
        assert_eq!(xx.matmul(&xx), CMatrix::identity(4));
    }

    #[test]
    fn partial_trace_examples() {
        let f = HilbertFactorization::new(vec![2, 2]).unwrap();
        let pt = partial_trace(&CMatrix::<f64>::identity(4), &f, &[0]).unwrap();
        assert_eq!(pt, CMatrix::identity(2).scale_real(2.0));

        // Bell state (|00> + |11>)/sqrt 2
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let psi = [cr(s), cr(0.0), cr(0.0), cr(s)];
        let bell = CMatrix::ket_bra(&psi);
        let red = partial_trace(&bell, &f, &[0]).unwrap();
        assert!(red.max_abs_diff(&CMatrix::identity(2).scale_real(0.5)) < 1e-15);
        let red_v = partial_trace_vector(&psi, &f, &[0]).unwrap();
        assert!(red_v.max_abs_diff(&red) < 1e-15);
    }

    #[test]
    fn partial_trace_dimension_mismatch() {
        let f = HilbertFactorization::new(vec![2, 3]).unwrap();
        assert!(partial_trace(&CMatrix::<f64>::identity(4), &f, &[0]).is_err());
        let f = HilbertFactorization::new(vec![2, 2]).unwrap();
        assert!(partial_trace(&CMatrix::<f64>::identity(4), &f, &[2]).is_err());
    }

    #[test]
    fn partial_trace_keeps_middle_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random::density::<f64, _>(2, &mut rng);
        let b = random::density::<f64, _>(3, &mut rng);
        let c = random::density::<f64, _>(2, &mut rng);
        let abc = kron_all(&[&a, &b, &c]);
        let f = HilbertFactorization::new(vec![2, 3, 2]).unwrap();
        assert!(partial_trace(&abc, &f, &[1]).unwrap().max_abs_diff(&b) < 1e-13);
        let ac = partial_trace(&abc, &f, &[2, 0]).unwrap();
        assert!(ac.max_abs_diff(&tensor_product(&a, &c)) < 1e-13);
    }

    #[test]
    fn embed_and_apply_local_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = HilbertFactorization::new(vec![2, 3, 2]).unwrap();
        let op = random::unitary::<f64, _>(4, &mut rng);
        let psi = random::pure_state::<f64, _>(12, &mut rng);
        // op acts on (factor 2, factor 0) in that order
        let full = embed(&op, &f, &[2, 0]).unwrap();
        let a = full.mul_vec(&psi);
        let b = apply_local(&psi, &f, &[2, 0], &op).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() < 1e-14);
        }
        // natural order reduces to a Kronecker product
        let g = HilbertFactorization::new(vec![2, 3]).unwrap();
        let x = pauli::x::<f64>();
        assert_eq!(embed(&x, &g, &[0]).unwrap(), tensor_product(&x, &CMatrix::identity(3)));
    }

    #[test]
    fn first_factor_multiplication_matches_kron() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let op = random::matrix::<f64, _>(2, &mut rng);
        let a = random::matrix::<f64, _>(6, &mut rng);
        let big = tensor_product(&op, &CMatrix::identity(3));
        assert!(lmul_first(&op, &a, 3).max_abs_diff(&big.matmul(&a)) < 1e-14);
        assert!(rmul_first(&a, &op, 3).max_abs_diff(&a.matmul(&big)) < 1e-14);
    }

    fn mat_strategy(n: usize) -> impl Strategy<Value = CMatrix<f64>> {
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n * n)
            .prop_map(move |v| CMatrix::new(n, n, v.into_iter().map(|(a, b)| num_complex::Complex::new(a, b)).collect()).unwrap())
    }

    proptest! {
        #[test]
        fn tensor_product_is_associative(a in mat_strategy(2), b in mat_strategy(3), c in mat_strategy(2)) {
            let left = tensor_product(&tensor_product(&a, &b), &c);
            let right = tensor_product(&a, &tensor_product(&b, &c));
            prop_assert!(left.max_abs_diff(&right) < 1e-12);
        }

        #[test]
        fn mixed_product_property(a in mat_strategy(2), b in mat_strategy(3), c in mat_strategy(2), d in mat_strategy(3)) {
            let lhs = tensor_product(&a, &b).matmul(&tensor_product(&c, &d));
            let rhs = tensor_product(&a.matmul(&c), &b.matmul(&d));
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }

        #[test]
        fn partial_trace_of_product(a in mat_strategy(2), b in mat_strategy(3), n in 2usize..4) {
            let b = if n == 3 { b } else { CMatrix::from_fn(2, 2, |i, j| b[(i, j)]) };
            let f = HilbertFactorization::new(vec![2, b.rows()]).unwrap();
            let pt = partial_trace(&tensor_product(&a, &b), &f, &[0]).unwrap();
            prop_assert!(pt.max_abs_diff(&a.scale(b.trace())) < 1e-12);
        }

        #[test]
        fn partial_trace_preserves_trace(x in mat_strategy(6)) {
            let h = x.hermitian_part();
            let f = HilbertFactorization::new(vec![2, 3]).unwrap();
            for keep in [&[0usize][..], &[1], &[0, 1]] {
                let pt = partial_trace(&h, &f, keep).unwrap();
                prop_assert!((pt.trace() - h.trace()).norm() < 1e-12);
            }
        }
    }
}
