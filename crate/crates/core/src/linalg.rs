//! Dense linear algebra helpers: column-major vectorization, Kronecker
//! products and factorizations of symmetric positive-definite matrices.
//!
//! All `vec` operations stack columns, so `vec(M)[j * rows + i] == M[(i, j)]`.
//! The same convention is used by the permutation operators in
//! [`crate::operator`] and by the dataset file format.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative tolerance for the symmetry check.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Eigenvalue floor (relative to the largest eigenvalue) below which a
/// matrix is treated as numerically singular.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// A symmetric positive-definite matrix.
///
/// Construction checks symmetry and runs a Cholesky factorization; the
/// stored entries are exactly symmetric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DMatrix<f64>", into = "DMatrix<f64>")]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        Self::with_tolerance(m, SYMMETRY_TOL)
    }

    /// Validates `m` with a custom relative symmetry tolerance.
    pub fn with_tolerance(m: DMatrix<f64>, tol: f64) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::Empty("matrix has dimension 0"));
        }
        let p = m.nrows();
        for i in 0..p {
            for j in (i + 1)..p {
                let (a, b) = (m[(i, j)], m[(j, i)]);
                if !a.is_finite() || !b.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "non-finite entry at ({i}, {j})"
                    )));
                }
                let gap = (a - b).abs();
                if gap > tol * a.abs().max(1.0) {
                    return Err(Error::NotSymmetric { row: i, col: j, gap });
                }
            }
        }
        let sym = symmetrize(&m);
        if sym.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(SpdMatrix(sym))
    }

    pub fn identity(p: usize) -> Self {
        SpdMatrix(DMatrix::identity(p, p))
    }

    /// Builds an SPD matrix without checks. Callers guarantee the invariant.
    pub(crate) fn from_trusted(m: DMatrix<f64>) -> Self {
        SpdMatrix(symmetrize(&m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "scale factor must be positive, got {c}"
            )));
        }
        Ok(SpdMatrix(&self.0 * c))
    }

    /// Lower Cholesky factor.
    pub fn cholesky_lower(&self) -> DMatrix<f64> {
        // validated at construction
        self.0
            .clone()
            .cholesky()
            .expect("SpdMatrix invariant: Cholesky succeeds")
            .l()
    }

    /// Natural log of the determinant, from the Cholesky diagonal.
    pub fn log_det(&self) -> f64 {
        let l = self.cholesky_lower();
        2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> SpdMatrix {
        let inv = self
            .0
            .clone()
            .cholesky()
            .expect("SpdMatrix invariant: Cholesky succeeds")
            .inverse();
        SpdMatrix(symmetrize(&inv))
    }

    /// Solves `self * X = rhs`.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.0
            .clone()
            .cholesky()
            .expect("SpdMatrix invariant: Cholesky succeeds")
            .solve(rhs)
    }

    /// `tr(self⁻¹ · s)`.
    pub fn trace_inv_mul(&self, s: &DMatrix<f64>) -> f64 {
        self.solve(s).trace()
    }

    /// Ratio of largest to smallest eigenvalue.
    pub fn condition_number(&self) -> f64 {
        let eig = SymmetricEigen::new(self.0.clone());
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }
}

impl TryFrom<DMatrix<f64>> for SpdMatrix {
    type Error = Error;

    fn try_from(m: DMatrix<f64>) -> Result<Self> {
        SpdMatrix::new(m)
    }
}

impl From<SpdMatrix> for DMatrix<f64> {
    fn from(s: SpdMatrix) -> Self {
        s.0
    }
}

impl AsRef<DMatrix<f64>> for SpdMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Column-major vectorization.
pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    // nalgebra storage is already column-major
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if v.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "cannot reshape length {} into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(DMatrix::from_column_slice(rows, cols, v))
}

/// Kronecker product with block layout `(A⊗B)[i*rB + k, j*cB + l] = A[i,j] B[k,l]`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = DMatrix::zeros(ra * rb, ca * cb);
    for j in 0..ca {
        for i in 0..ra {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            for l in 0..cb {
                for k in 0..rb {
                    out[(i * rb + k, j * cb + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Kronecker product of two vectors, `(a⊗b)[i*len(b) + j] = a[i] b[j]`.
pub fn kron_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &x in a {
        out.extend(b.iter().map(|&y| x * y));
    }
    out
}

/// k-fold Kronecker power of a vector; the 0-th power is `[1.0]`.
pub fn kron_vec_power(a: &[f64], k: usize) -> Vec<f64> {
    (0..k).fold(vec![1.0], |acc, _| kron_vec(&acc, a))
}

/// k-fold Kronecker power of a matrix.
pub fn kron_power(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    (0..k).fold(DMatrix::identity(1, 1), |acc, _| kron(&acc, a))
}

/// Lower Cholesky factor `L` with `L Lᵀ = Σ` and positive diagonal.
pub fn cholesky_lower(sigma: &SpdMatrix) -> DMatrix<f64> {
    sigma.cholesky_lower()
}

/// Cholesky of an unchecked square matrix; fails on a non-positive pivot.
pub fn try_cholesky_lower(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Dimension("Cholesky needs a square matrix".into()));
    }
    m.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or(Error::NotPositiveDefinite)
}

/// Symmetric square root via eigendecomposition.
pub fn symmetric_sqrt(sigma: &SpdMatrix) -> Result<SpdMatrix> {
    let eig = SymmetricEigen::new(sigma.as_matrix().clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min <= EIGEN_FLOOR * max {
        return Err(Error::NotPositiveDefinite);
    }
    let roots = eig.eigenvalues.map(f64::sqrt);
    let q = &eig.eigenvectors;
    let root = q * DMatrix::from_diagonal(&roots) * q.transpose();
    Ok(SpdMatrix::from_trusted(root))
}

/// Applies the same `p×p` matrix along every axis of a tensor with `axes`
/// axes of size `p` stored in `data` (most significant axis first). This is
/// `(⊗^axes B) · data` without forming the Kronecker power.
pub fn apply_along_all_axes(b: &DMatrix<f64>, data: &[f64], axes: usize) -> Vec<f64> {
    let p = b.nrows();
    debug_assert_eq!(data.len(), p.pow(axes as u32));
    let mut cur = data.to_vec();
    let mut next = vec![0.0; cur.len()];
    for axis in 0..axes {
        // stride of this axis (axis 0 is the most significant digit)
        let stride = p.pow((axes - 1 - axis) as u32);
        let block = stride * p;
        next.iter_mut().for_each(|x| *x = 0.0);
        for base in (0..cur.len()).step_by(block) {
            for inner in 0..stride {
                for i in 0..p {
                    let mut acc = 0.0;
                    for j in 0..p {
                        acc += b[(i, j)] * cur[base + j * stride + inner];
                    }
                    next[base + i * stride + inner] = acc;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// Frobenius relative error `‖a - b‖ / ‖b‖`, absolute when `b` is zero.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).norm();
    let nb = b.norm();
    if nb == 0.0 {
        diff
    } else {
        diff / nb
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_spd(p: usize, seed: u64) -> SpdMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        SpdMatrix::new(&a * a.transpose() + DMatrix::identity(p, p) * p as f64).unwrap()
    }

    #[test]
    fn vec_stacks_columns() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vec(&m).as_slice(), &[1.0, 3.0, 2.0, 4.0]);
        let id = DMatrix::<f64>::identity(2, 2);
        assert_eq!(vec(&id).as_slice(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn unvec_inverts_vec() {
        let m = unvec(&[1.0, 3.0, 2.0, 4.0], 2, 2).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(unvec(&[0.0; 6], 2, 3).unwrap(), DMatrix::zeros(2, 3));
        assert!(matches!(unvec(&[0.0; 5], 2, 3), Err(Error::Dimension(_))));
    }

    #[test]
    fn kron_identities() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert_eq!(kron(&i2, &i2), DMatrix::identity(4, 4));
        let b = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 4.0, 7.0]);
        let two = DMatrix::from_element(1, 1, 2.0);
        assert_eq!(kron(&two, &b), &b * 2.0);
    }

    #[test]
    fn kron_block_layout() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 5.0, 6.0, 7.0]);
        let k = kron(&a, &b);
        for i in 0..2 {
            for j in 0..2 {
                for r in 0..2 {
                    for c in 0..2 {
                        assert_eq!(k[(i * 2 + r, j * 2 + c)], a[(i, j)] * b[(r, c)]);
                    }
                }
            }
        }
    }

    #[test]
    fn cholesky_hand_example() {
        let s = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 5.0])).unwrap();
        let l = cholesky_lower(&s);
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 2.0]);
        assert!((l - expected).norm() < 1e-14);
        assert_eq!(cholesky_lower(&SpdMatrix::identity(3)), DMatrix::identity(3, 3));
    }

    #[test]
    fn non_spd_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(SpdMatrix::new(m.clone()), Err(Error::NotPositiveDefinite)));
        assert!(matches!(try_cholesky_lower(&m), Err(Error::NotPositiveDefinite)));
        let asym = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        assert!(matches!(SpdMatrix::new(asym), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn sqrt_of_diagonal() {
        let s = SpdMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]))).unwrap();
        let r = symmetric_sqrt(&s).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
        assert!((r.as_matrix() - expected).norm() < 1e-14);
        let id = symmetric_sqrt(&SpdMatrix::identity(4)).unwrap();
        assert!((id.as_matrix() - DMatrix::<f64>::identity(4, 4)).norm() < 1e-14);
    }

    #[test]
    fn sqrt_rejects_near_singular() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-14]));
        // passes Cholesky but is below the eigenvalue floor
        let s = SpdMatrix::from_trusted(m);
        assert!(symmetric_sqrt(&s).is_err());
    }

    #[test]
    fn axis_application_matches_kron_power() {
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]);
        let data: Vec<f64> = (0..8).map(|i| i as f64 * 0.3 - 1.0).collect();
        let dense = kron_power(&b, 3) * DVector::from_vec(data.clone());
        let lazy = apply_along_all_axes(&b, &data, 3);
        for (x, y) in dense.iter().zip(&lazy) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn log_det_and_inverse() {
        let s = random_spd(4, 11);
        let det = s.as_matrix().determinant();
        assert!((s.log_det() - det.ln()).abs() < 1e-10);
        let prod = s.as_matrix() * s.inverse().as_matrix();
        assert!((prod - DMatrix::<f64>::identity(4, 4)).norm() < 1e-10);
    }

    proptest! {
        #[test]
        fn factors_reconstruct(p in 1usize..6, seed in any::<u64>()) {
            let s = random_spd(p, seed);
            let l = cholesky_lower(&s);
            prop_assert!(rel_frobenius(&(&l * l.transpose()), s.as_matrix()) < 1e-10);
            prop_assert!(l.diagonal().iter().all(|&d| d > 0.0));
            let r = symmetric_sqrt(&s).unwrap();
            prop_assert!(rel_frobenius(&(r.as_matrix() * r.as_matrix()), s.as_matrix()) < 1e-9);
        }

        #[test]
        fn vec_round_trip(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>());
            let v = vec(&m);
            prop_assert_eq!(unvec(v.as_slice(), rows, cols).unwrap(), m.clone());
            for j in 0..cols {
                for i in 0..rows {
                    prop_assert_eq!(v[j * rows + i], m[(i, j)]);
                }
            }
        }
    }
}
