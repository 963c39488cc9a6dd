//! Weighted sums of index permutations.
//!
//! Commutation matrices and everything composed from them are permutation
//! matrices or short sums of them. Storing each term as an index map keeps
//! application at `O(dim · terms)` without ever forming the dense matrix.

use std::collections::HashMap;
use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Largest dimension [`PermSumOperator::to_dense`] will materialize.
pub const MAX_DENSE_DIM: usize = 10_000;

/// Fault injection for the self-check suite: corrupts the commutation
/// index map on the current thread while a closure runs.
#[doc(hidden)]
pub mod fault {
    use std::cell::Cell;

    thread_local! {
        static CORRUPT: Cell<bool> = const { Cell::new(false) };
    }

    pub(crate) fn active() -> bool {
        CORRUPT.with(Cell::get)
    }

    pub fn with_corrupted_commutation<T>(f: impl FnOnce() -> T) -> T {
        let prev = CORRUPT.with(|c| c.replace(true));
        let out = f();
        CORRUPT.with(|c| c.set(prev));
        out
    }
}

/// A permutation stored in gather form: `(P v)[i] = v[src[i]]`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Permutation {
    src: Vec<usize>,
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.src.len() <= 16 {
            write!(f, "Permutation({:?})", self.src)
        } else {
            write!(f, "Permutation(dim = {})", self.src.len())
        }
    }
}

impl Permutation {
    /// Validates that `src` is a bijection on `0..src.len()`.
    pub fn new(src: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; src.len()];
        for &s in &src {
            if s >= src.len() || seen[s] {
                return Err(Error::InvalidParameter(format!(
                    "index map is not a bijection (index {s})"
                )));
            }
            seen[s] = true;
        }
        Ok(Permutation { src })
    }

    pub fn identity(dim: usize) -> Self {
        Permutation {
            src: (0..dim).collect(),
        }
    }

    /// Commutation permutation `K_{p,q}`: maps `vec(A)` to `vec(Aᵀ)` for a
    /// `p×q` matrix `A`. Entry `i + j·p` moves to position `j + i·q`.
    pub fn commutation(p: usize, q: usize) -> Self {
        let mut src = vec![0; p * q];
        for i in 0..p {
            for j in 0..q {
                src[j + i * q] = i + j * p;
            }
        }
        if fault::active() && src.len() > 1 {
            src.swap(0, 1);
        }
        Permutation { src }
    }

    /// Exchanges digits `a` and `b` of a base-`radix` index with `digits`
    /// digits, digit 0 being the most significant.
    pub fn swap_digits(radix: usize, digits: usize, a: usize, b: usize) -> Self {
        assert!(a < digits && b < digits, "digit position out of range");
        let dim = radix.pow(digits as u32);
        if a == b {
            return Self::identity(dim);
        }
        let wa = radix.pow((digits - 1 - a) as u32);
        let wb = radix.pow((digits - 1 - b) as u32);
        let src = (0..dim)
            .map(|i| {
                let da = (i / wa) % radix;
                let db = (i / wb) % radix;
                i - da * wa - db * wb + db * wa + da * wb
            })
            .collect();
        Permutation { src }
    }

    pub fn dim(&self) -> usize {
        self.src.len()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.src
    }

    pub fn is_identity(&self) -> bool {
        self.src.iter().enumerate().all(|(i, &s)| i == s)
    }

    pub fn inverse(&self) -> Self {
        let mut src = vec![0; self.src.len()];
        for (i, &s) in self.src.iter().enumerate() {
            src[s] = i;
        }
        Permutation { src }
    }

    /// The permutation applying `other` first, then `self`.
    pub fn compose(&self, other: &Permutation) -> Self {
        assert_eq!(self.dim(), other.dim(), "permutation dimension mismatch");
        Permutation {
            src: self.src.iter().map(|&s| other.src[s]).collect(),
        }
    }

    /// `self ⊗ other` in the block convention of [`crate::linalg::kron`].
    pub fn kron(&self, other: &Permutation) -> Self {
        let db = other.dim();
        let mut src = Vec::with_capacity(self.dim() * db);
        for &sa in &self.src {
            src.extend(other.src.iter().map(|&sb| sa * db + sb));
        }
        Permutation { src }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.src.iter().map(|&s| v[s]).collect()
    }

    /// Accumulates `w · (P v)` into `out`.
    fn apply_add(&self, w: f64, v: &[f64], out: &mut [f64]) {
        for (o, &s) in out.iter_mut().zip(&self.src) {
            *o += w * v[s];
        }
    }
}

/// `Σ_t w_t P_t`, a weighted sum of permutations of a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PermSumOperator {
    dim: usize,
    terms: Vec<(f64, Permutation)>,
}

impl PermSumOperator {
    pub fn identity(dim: usize) -> Self {
        Self::from_permutation(1.0, Permutation::identity(dim))
    }

    pub fn zero(dim: usize) -> Self {
        PermSumOperator { dim, terms: Vec::new() }
    }

    pub fn from_permutation(weight: f64, perm: Permutation) -> Self {
        PermSumOperator {
            dim: perm.dim(),
            terms: vec![(weight, perm)],
        }
    }

    /// Builds an operator from explicit terms, merging repeated permutations.
    pub fn from_terms(dim: usize, terms: Vec<(f64, Permutation)>) -> Result<Self> {
        if let Some((_, bad)) = terms.iter().find(|(_, p)| p.dim() != dim) {
            return Err(Error::Dimension(format!(
                "term of dimension {} in operator of dimension {dim}",
                bad.dim()
            )));
        }
        Ok(PermSumOperator { dim, terms }.simplified())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[(f64, Permutation)] {
        &self.terms
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Merges terms sharing a permutation and drops zero weights.
    fn simplified(self) -> Self {
        let mut index: HashMap<Permutation, usize> = HashMap::new();
        let mut merged: Vec<(f64, Permutation)> = Vec::new();
        for (w, p) in self.terms {
            match index.get(&p) {
                Some(&at) => merged[at].0 += w,
                None => {
                    index.insert(p.clone(), merged.len());
                    merged.push((w, p));
                }
            }
        }
        merged.retain(|(w, _)| *w != 0.0);
        PermSumOperator {
            dim: self.dim,
            terms: merged,
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        PermSumOperator {
            dim: self.dim,
            terms: self.terms.iter().map(|(w, p)| (w * c, p.clone())).collect(),
        }
        .simplified()
    }

    pub fn add(&self, other: &PermSumOperator) -> Result<Self> {
        self.check_same_dim(other)?;
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Ok(PermSumOperator { dim: self.dim, terms }.simplified())
    }

    /// Operator product `self · other` (apply `other` first).
    pub fn compose(&self, other: &PermSumOperator) -> Result<Self> {
        self.check_same_dim(other)?;
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for (wa, pa) in &self.terms {
            for (wb, pb) in &other.terms {
                terms.push((wa * wb, pa.compose(pb)));
            }
        }
        Ok(PermSumOperator { dim: self.dim, terms }.simplified())
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &PermSumOperator) -> Self {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for (wa, pa) in &self.terms {
            for (wb, pb) in &other.terms {
                terms.push((wa * wb, pa.kron(pb)));
            }
        }
        PermSumOperator {
            dim: self.dim * other.dim,
            terms,
        }
        .simplified()
    }

    /// Transpose; each permutation matrix transposes to its inverse.
    pub fn transpose(&self) -> Self {
        PermSumOperator {
            dim: self.dim,
            terms: self.terms.iter().map(|(w, p)| (*w, p.inverse())).collect(),
        }
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim {
            return Err(Error::Dimension(format!(
                "operator of dimension {} applied to vector of length {}",
                self.dim,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.dim];
        for (w, p) in &self.terms {
            p.apply_add(*w, v, &mut out);
        }
        Ok(out)
    }

    /// Applies `I_m ⊗ self` to `v`, where `m = len(v) / dim`.
    pub fn apply_block_diagonal(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.dim == 0 || v.len() % self.dim != 0 {
            return Err(Error::Dimension(format!(
                "vector of length {} is not a whole number of blocks of {}",
                v.len(),
                self.dim
            )));
        }
        let mut out = vec![0.0; v.len()];
        for (vin, vout) in v.chunks(self.dim).zip(out.chunks_mut(self.dim)) {
            for (w, p) in &self.terms {
                p.apply_add(*w, vin, vout);
            }
        }
        Ok(out)
    }

    /// Dense materialization, only for `dim ≤ MAX_DENSE_DIM`.
    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        if self.dim > MAX_DENSE_DIM {
            return Err(Error::InvalidParameter(format!(
                "refusing to materialize a {0}x{0} operator densely",
                self.dim
            )));
        }
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (w, p) in &self.terms {
            for (i, &s) in p.as_slice().iter().enumerate() {
                m[(i, s)] += w;
            }
        }
        Ok(m)
    }

    fn check_same_dim(&self, other: &PermSumOperator) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::Dimension(format!(
                "operator dimensions differ: {} vs {}",
                self.dim, other.dim
            )));
        }
        Ok(())
    }
}

/// `K_{p,q}` as a single-term operator.
pub fn commutation_matrix(p: usize, q: usize) -> PermSumOperator {
    PermSumOperator::from_permutation(1.0, Permutation::commutation(p, q))
}

/// `I_a ⊗ K_{p,q} ⊗ I_b` as a single permutation.
pub fn sandwiched_commutation(a: usize, p: usize, q: usize, b: usize) -> Permutation {
    Permutation::identity(a)
        .kron(&Permutation::commutation(p, q))
        .kron(&Permutation::identity(b))
}

/// Applies an operator given as an ordered product, rightmost factor first.
pub fn apply_product(factors: &[PermSumOperator], v: &[f64]) -> Result<Vec<f64>> {
    factors
        .iter()
        .rev()
        .try_fold(v.to_vec(), |acc, op| op.apply(&acc))
}
