//! Kronecker moments `vec E[⊗^k S]` of arbitrary order.
//!
//! Wishart moments come from a product of permutation-sum operators applied
//! to `⊗^k vec(I_p)`, followed by `⊗^{2k} Σ^{1/2}` as mode products.
//! Inverse Wishart moments come from the Stokes-type recursion
//! `A(k) vec E[⊗^{k+1} S] = vec(E[⊗^k S] ⊗ Σ)`, solved matrix-free with
//! conjugate gradients. Elliptical laws rescale these by ratios of modular
//! moments.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::distributions::EwParams;
use crate::error::{Error, Result};
use crate::generators::DensityGenerator;
use crate::linalg::{apply_along_all_axes, kron_power, kron_vec, kron_vec_power, symmetric_sqrt, vec, SpdMatrix};
use crate::operator::{sandwiched_commutation, PermSumOperator, Permutation};
use crate::sampling::{stream_rng, EwSampler, SamplerMethod};

/// Default budget: one result vector of length `3^8`.
pub const DEFAULT_BUDGET_BYTES: u64 = 6561 * 8;

/// Byte budget for a result vector of `p^{2k}` doubles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryBudget(pub u64);

impl Default for MemoryBudget {
    fn default() -> Self {
        MemoryBudget(DEFAULT_BUDGET_BYTES)
    }
}

impl MemoryBudget {
    pub fn unlimited() -> Self {
        MemoryBudget(u64::MAX)
    }

    /// Rejects a vector of `p^exponent` doubles that does not fit.
    pub fn check(&self, p: usize, exponent: usize) -> Result<usize> {
        let required = (p as u128)
            .checked_pow(exponent as u32)
            .and_then(|len| len.checked_mul(8))
            .unwrap_or(u128::MAX);
        if required > u128::from(self.0) || required / 8 > usize::MAX as u128 {
            return Err(Error::BudgetExceeded {
                required,
                budget: self.0,
            });
        }
        Ok((required / 8) as usize)
    }
}

fn pow(p: usize, e: usize) -> usize {
    p.pow(e as u32)
}

fn single(perm: Permutation) -> PermSumOperator {
    PermSumOperator::from_permutation(1.0, perm)
}

/// `H_(k,l) = I_{p^l} ⊗ K_{p,p^{k-1-l}} ⊗ I_p`, for `l < k`.
pub fn build_h(p: usize, k: usize, l: usize) -> PermSumOperator {
    assert!(l < k, "H_(k,l) needs l < k");
    single(sandwiched_commutation(pow(p, l), p, pow(p, k - 1 - l), p))
}

/// `G = ½ (I_p⊗K_pp⊗I_p) [(K_pp⊗K_pp) + I] [K_pp ⊗ (I + K_pp)]` on `p^4`.
pub fn build_g(p: usize) -> PermSumOperator {
    let kpp = Permutation::commutation(p, p);
    let p2 = pow(p, 2);
    let mid = single(sandwiched_commutation(p, p, p, p));
    let swap = single(kpp.kron(&kpp)).add(&PermSumOperator::identity(pow(p, 4))).unwrap();
    let right = single(kpp.kron(&Permutation::identity(p2)))
        .add(&single(kpp.kron(&kpp)))
        .unwrap();
    mid.compose(&swap).unwrap().compose(&right).unwrap().scale(0.5)
}

/// `J_(k)` on `p^{2k+2}`; zero for `k = 0`.
pub fn build_j(p: usize, k: usize) -> PermSumOperator {
    let dim = pow(p, 2 * k + 2);
    if k == 0 {
        return PermSumOperator::zero(dim);
    }
    let p2 = pow(p, 2);
    let hsum = (0..k).fold(PermSumOperator::zero(dim), |acc, l| {
        let h = build_h(p, k, l);
        acc.add(&h.kron(&h)).unwrap()
    });
    let outer = single(sandwiched_commutation(pow(p, k - 1), p2, pow(p, k - 1), p2));
    let g = PermSumOperator::identity(pow(p, 2 * k - 2)).kron(&build_g(p));
    let inner = single(sandwiched_commutation(pow(p, k - 1), pow(p, k - 1), p2, p2));
    let shuffle = single(sandwiched_commutation(pow(p, k), p, pow(p, k), p));
    [outer, g, inner, shuffle]
        .iter()
        .try_fold(hsum, |acc, f| acc.compose(f))
        .unwrap()
}

/// `M_(k) = [n (I_{p^k}⊗K_{p,p^k}⊗I_p) + J_(k)] K_{p^{2k},p²}` on `p^{2k+2}`.
pub fn build_m(p: usize, k: usize, n: usize, budget: &MemoryBudget) -> Result<PermSumOperator> {
    budget.check(p, 2 * k + 2)?;
    let shuffle = PermSumOperator::from_permutation(
        n as f64,
        sandwiched_commutation(pow(p, k), p, pow(p, k), p),
    );
    let k_last = single(Permutation::commutation(pow(p, 2 * k), pow(p, 2)));
    shuffle.add(&build_j(p, k))?.compose(&k_last)
}

/// `A(k) = (n-p-1) I - Σ_{t<k} (P₁(t) + P₂(t))` on `p^{2k+2}`, where `P₁(t)`
/// exchanges column slot `t` with the last row slot and `P₂(t)` exchanges it
/// with the last column slot of the `p^{k+1} × p^{k+1}` moment matrix.
pub fn build_a(p: usize, k: usize, n: usize, budget: &MemoryBudget) -> Result<PermSumOperator> {
    if n <= p + 2 * k + 1 {
        return Err(Error::moment(
            format!("inverse Wishart Kronecker moment of order {}", k + 1),
            format!("n>p+2k+1 (n = {n}, p = {p}, k = {k})"),
        ));
    }
    budget.check(p, 2 * k + 2)?;
    let m = k + 1;
    let digits = 2 * m;
    let dim = pow(p, digits);
    let mut terms = vec![((n - p - 1) as f64, Permutation::identity(dim))];
    for t in 0..k {
        terms.push((-1.0, Permutation::swap_digits(p, digits, t, digits - 1)));
        terms.push((-1.0, Permutation::swap_digits(p, digits, t, m - 1)));
    }
    PermSumOperator::from_terms(dim, terms)
}

/// Operators for Wishart moments up to a fixed order, built once.
#[derive(Debug, Clone)]
pub struct OperatorFamily {
    p: usize,
    n: usize,
    /// `M_(j)` for `j < order`.
    m: Vec<PermSumOperator>,
}

impl OperatorFamily {
    pub fn new(p: usize, n: usize, order: usize, budget: &MemoryBudget) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidParameter("moment order must be at least 1".into()));
        }
        budget.check(p, 2 * order)?;
        let m = (0..order).map(|j| build_m(p, j, n, budget)).collect::<Result<_>>()?;
        Ok(OperatorFamily { p, n, m })
    }

    pub fn order(&self) -> usize {
        self.m.len()
    }

    pub fn m(&self, j: usize) -> &PermSumOperator {
        &self.m[j]
    }

    /// `vec E[⊗^k R]` for `R ~ W(n, I_p)`.
    pub fn identity_moment(&self, k: usize) -> Result<Vec<f64>> {
        if k == 0 || k > self.order() {
            return Err(Error::InvalidParameter(format!(
                "order {k} outside 1..={}",
                self.order()
            )));
        }
        let id = vec(&DMatrix::identity(self.p, self.p));
        let mut x = kron_vec_power(id.as_slice(), k);
        for l in (0..k).rev() {
            x = self.m[k - 1 - l].apply_block_diagonal(&x)?;
        }
        Ok(x)
    }

    /// `vec E[⊗^k S]` for `S ~ W(n, Σ)`.
    pub fn wishart_moment(&self, sigma: &SpdMatrix, k: usize) -> Result<Vec<f64>> {
        if sigma.dim() != self.p {
            return Err(Error::Dimension(format!(
                "operators built for p = {}, center is {}x{}",
                self.p,
                sigma.dim(),
                sigma.dim()
            )));
        }
        let x = self.identity_moment(k)?;
        let root = symmetric_sqrt(sigma)?;
        Ok(apply_along_all_axes(root.as_matrix(), &x, 2 * k))
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// `vec E[⊗^k S]` for `S ~ W(n, Σ)`.
pub fn wishart_kron_moment(n: usize, sigma: &SpdMatrix, k: usize, budget: &MemoryBudget) -> Result<Vec<f64>> {
    let p = sigma.dim();
    if n < p {
        return Err(Error::Degenerate { n, p });
    }
    OperatorFamily::new(p, n, k, budget)?.wishart_moment(sigma, k)
}

/// `log[Γ(np/2) m_k / (2^k Γ(np/2 + k))]`, the elliptical rescaling.
fn log_ew_factor(gen: DensityGenerator, np: usize, k: usize) -> Result<f64> {
    let log_m = gen.log_modular_moment(np, k as i32)?;
    let h = np as f64 / 2.0;
    Ok(ln_gamma(h) + log_m - k as f64 * 2f64.ln() - ln_gamma(h + k as f64))
}

/// `vec E[⊗^k S]` for `S ~ EW(n, Σ, h)`.
pub fn ew_kron_moment(params: &EwParams, k: usize, budget: &MemoryBudget) -> Result<Vec<f64>> {
    if params.is_inverse() {
        return Err(Error::InvalidParameter("ew_kron_moment expects EW parameters".into()));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("moment order must be at least 1".into()));
    }
    budget.check(params.p(), 2 * k)?;
    let gen = params.generator();
    let factor = match gen {
        DensityGenerator::Gaussian => 1.0,
        _ => log_ew_factor(gen, params.np(), k)?.exp(),
    };
    let w = wishart_kron_moment(params.n(), params.sigma(), k, budget)?;
    Ok(w.into_iter().map(|x| x * factor).collect())
}

/// `vec E[⊗^order S]` for `S ~ W⁻¹(n, Σ)`.
pub fn inverse_wishart_kron_moment(n: usize, sigma: &SpdMatrix, order: usize, budget: &MemoryBudget) -> Result<Vec<f64>> {
    let p = sigma.dim();
    if order == 0 {
        return Err(Error::InvalidParameter("moment order must be at least 1".into()));
    }
    let k = order - 1;
    if n <= p + 2 * k + 1 {
        return Err(Error::moment(
            format!("inverse Wishart Kronecker moment of order {order}"),
            format!("n>p+2k+1 with k = {k} (n = {n}, p = {p})"),
        ));
    }
    budget.check(p, 2 * order)?;
    let vs = vec(sigma.as_matrix());
    let mut x: Vec<f64> = vs.iter().map(|v| v / (n - p - 1) as f64).collect();
    for j in 1..order {
        let shuffle = sandwiched_commutation(pow(p, j), p, pow(p, j), p);
        let rhs = shuffle.apply(&kron_vec(&x, vs.as_slice()));
        let a = build_a(p, j, n, budget)?;
        x = conjugate_gradient(&a, &rhs)?;
    }
    Ok(x)
}

/// Solves `A x = b` for symmetric positive-definite `A`.
fn conjugate_gradient(a: &PermSumOperator, b: &[f64]) -> Result<Vec<f64>> {
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
    let b_norm = dot(b, b).sqrt();
    let mut x = vec![0.0; b.len()];
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut d = r.clone();
    let mut rr = dot(&r, &r);
    let max_iter = 10 * b.len() + 100;
    for _ in 0..max_iter {
        if rr.sqrt() <= 1e-15 * b_norm {
            return Ok(x);
        }
        let ad = a.apply(&d)?;
        let alpha = rr / dot(&d, &ad);
        for i in 0..x.len() {
            x[i] += alpha * d[i];
            r[i] -= alpha * ad[i];
        }
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        rr = rr_next;
        for i in 0..d.len() {
            d[i] = r[i] + beta * d[i];
        }
    }
    if rr.sqrt() <= 1e-12 * b_norm {
        return Ok(x);
    }
    Err(Error::Convergence {
        iterations: max_iter,
        residual: rr.sqrt() / b_norm,
        last: Box::new(DMatrix::from_column_slice(x.len(), 1, &x)),
    })
}

/// `vec E[⊗^order S]` for `S ~ EW⁻¹(n, Σ, h)`.
pub fn iew_kron_moment(params: &EwParams, order: usize, budget: &MemoryBudget) -> Result<Vec<f64>> {
    if !params.is_inverse() {
        return Err(Error::InvalidParameter("iew_kron_moment expects IEW parameters".into()));
    }
    if order == 0 {
        return Err(Error::InvalidParameter("moment order must be at least 1".into()));
    }
    let np = params.np();
    let what = || format!("inverse elliptical Kronecker moment of order {order}");
    if 2 * order >= np {
        return Err(Error::moment(what(), format!("order < np/2 = {}", np as f64 / 2.0)));
    }
    let gen = params.generator();
    let log_m = gen.log_modular_moment(np, -(order as i32)).map_err(|e| match e {
        Error::MomentDoesNotExist { condition, .. } => Error::moment(what(), condition),
        other => other,
    })?;
    let iw = inverse_wishart_kron_moment(params.n(), params.sigma(), order, budget)?;
    let factor = match gen {
        DensityGenerator::Gaussian => 1.0,
        _ => {
            let h = np as f64 / 2.0;
            (order as f64 * 2f64.ln() + ln_gamma(h) + log_m - ln_gamma(h - order as f64)).exp()
        }
    };
    Ok(iw.into_iter().map(|x| x * factor).collect())
}

/// Dispatches to [`ew_kron_moment`] or [`iew_kron_moment`].
pub fn kron_moment(params: &EwParams, order: usize, budget: &MemoryBudget) -> Result<Vec<f64>> {
    if params.is_inverse() {
        iew_kron_moment(params, order, budget)
    } else {
        ew_kron_moment(params, order, budget)
    }
}

/// Rearranges between `E[vec S vec Sᵀ]` and `E[S ⊗ S]` (both `p²×p²`).
/// The map is its own inverse.
pub fn rearrange_second_moment(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (rows, cols) = m.shape();
    let p = (rows as f64).sqrt().round() as usize;
    if rows != cols || p * p != rows {
        return Err(Error::Dimension(format!(
            "expected a p²×p² matrix, got {rows}x{cols}"
        )));
    }
    let perm = sandwiched_commutation(p, p, p, p);
    let out = perm.apply(m.as_slice());
    Ok(DMatrix::from_column_slice(rows, cols, &out))
}

/// Sample mean and per-entry standard error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub samples: usize,
}

impl McEstimate {
    /// Largest `|mean - reference| / se` over entries with positive `se`.
    pub fn max_abs_z(&self, reference: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.standard_errors)
            .zip(reference)
            .filter(|((_, se), _)| **se > 0.0)
            .map(|((m, se), r)| ((m - r) / se).abs())
            .fold(0.0, f64::max)
    }
}

/// Mergeable running mean and sum of squared deviations (Chan et al.).
#[derive(Debug, Clone)]
pub struct MeanAccumulator {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl MeanAccumulator {
    pub fn new(len: usize) -> Self {
        MeanAccumulator {
            count: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let c = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *m;
            *m += delta / c;
            *s += delta * (v - *m);
        }
    }

    pub fn merge(&mut self, other: &MeanAccumulator) {
        if other.count == 0 {
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let total = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / total;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / total;
        }
        self.count += other.count;
    }

    pub fn finish(self) -> McEstimate {
        let n = self.count as f64;
        let standard_errors = self
            .m2
            .iter()
            .map(|s| if self.count > 1 { (s / (n - 1.0) / n).sqrt() } else { f64::NAN })
            .collect();
        McEstimate {
            mean: self.mean,
            standard_errors,
            samples: self.count,
        }
    }
}

const MC_CHUNK: usize = 1024;

/// Monte Carlo mean of `feature(S)` over `samples` draws from `params`.
/// Chunk `c` uses stream `c` of `seed` and chunks are merged in order, so
/// the estimate does not depend on the thread count.
pub fn mc_expectation<F>(params: &EwParams, samples: usize, seed: u64, method: SamplerMethod, len: usize, feature: F) -> Result<McEstimate>
where
    F: Fn(&SpdMatrix) -> Vec<f64> + Sync,
{
    let sampler = EwSampler::new(params, method)?;
    let parts: Vec<Result<MeanAccumulator>> = (0..samples.div_ceil(MC_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let mut acc = MeanAccumulator::new(len);
            for _ in 0..MC_CHUNK.min(samples - c * MC_CHUNK) {
                acc.push(&feature(&sampler.sample(&mut rng)?));
            }
            Ok(acc)
        })
        .collect();
    let mut total = MeanAccumulator::new(len);
    for part in parts {
        total.merge(&part?);
    }
    Ok(total.finish())
}

/// Monte Carlo estimate of `vec E[⊗^k S]` with per-entry standard errors.
pub fn mc_kron_moment(params: &EwParams, k: usize, samples: usize, seed: u64, budget: &MemoryBudget) -> Result<McEstimate> {
    if samples < 1000 {
        return Err(Error::InvalidParameter(format!(
            "Monte Carlo estimates need at least 1000 samples, got {samples}"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("moment order must be at least 1".into()));
    }
    let len = budget.check(params.p(), 2 * k)?;
    mc_expectation(params, samples, seed, SamplerMethod::Bartlett, len, |s| {
        kron_power(s.as_matrix(), k).as_slice().to_vec()
    })
}

/// Dense assemblies of the same operators and closed forms, straight from
/// their definitions. Only for small dimensions; used as test oracles.
pub mod reference {
    use nalgebra::{DMatrix, DVector};

    use crate::linalg::{kron, vec, SpdMatrix};

    pub fn identity(d: usize) -> DMatrix<f64> {
        DMatrix::identity(d, d)
    }

    /// Dense `K_{p,q}` built column by column from `K vec(E_ij) = vec(E_ijᵀ)`.
    pub fn commutation(p: usize, q: usize) -> DMatrix<f64> {
        let mut k = DMatrix::zeros(p * q, p * q);
        for i in 0..p {
            for j in 0..q {
                let mut e = DMatrix::zeros(p, q);
                e[(i, j)] = 1.0;
                let col = vec(&e).iter().position(|&x| x == 1.0).unwrap();
                let row = vec(&e.transpose()).iter().position(|&x| x == 1.0).unwrap();
                k[(row, col)] = 1.0;
            }
        }
        k
    }

    pub fn kron_all(ms: &[DMatrix<f64>]) -> DMatrix<f64> {
        ms.iter().fold(identity(1), |acc, m| kron(&acc, m))
    }

    fn pw(p: usize, e: usize) -> usize {
        p.pow(e as u32)
    }

    pub fn h(p: usize, k: usize, l: usize) -> DMatrix<f64> {
        kron_all(&[identity(pw(p, l)), commutation(p, pw(p, k - 1 - l)), identity(p)])
    }

    pub fn g(p: usize) -> DMatrix<f64> {
        let kp = commutation(p, p);
        let mid = kron_all(&[identity(p), kp.clone(), identity(p)]);
        let swap = kron(&kp, &kp) + identity(pw(p, 4));
        let right = kron(&kp, &(identity(p * p) + &kp));
        mid * swap * right * 0.5
    }

    pub fn j(p: usize, k: usize) -> DMatrix<f64> {
        let dim = pw(p, 2 * k + 2);
        if k == 0 {
            return DMatrix::zeros(dim, dim);
        }
        let mut hs = DMatrix::zeros(dim, dim);
        for l in 0..k {
            let hl = h(p, k, l);
            hs += kron(&hl, &hl);
        }
        let p2 = p * p;
        hs * kron_all(&[identity(pw(p, k - 1)), commutation(p2, pw(p, k - 1)), identity(p2)])
            * kron(&identity(pw(p, 2 * k - 2)), &g(p))
            * kron_all(&[identity(pw(p, k - 1)), commutation(pw(p, k - 1), p2), identity(p2)])
            * kron_all(&[identity(pw(p, k)), commutation(p, pw(p, k)), identity(p)])
    }

    pub fn m(p: usize, k: usize, n: usize) -> DMatrix<f64> {
        let shuffle = kron_all(&[identity(pw(p, k)), commutation(p, pw(p, k)), identity(p)]);
        (shuffle * n as f64 + j(p, k)) * commutation(pw(p, 2 * k), p * p)
    }

    /// Dense digit exchange on a base-`p` index with `digits` digits.
    pub fn digit_swap(p: usize, digits: usize, a: usize, b: usize) -> DMatrix<f64> {
        let dim = pw(p, digits);
        let mut out = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            let mut d: Vec<usize> = (0..digits).map(|t| (i / pw(p, digits - 1 - t)) % p).collect();
            d.swap(a, b);
            let src = d.iter().fold(0, |acc, &x| acc * p + x);
            out[(i, src)] = 1.0;
        }
        out
    }

    pub fn a(p: usize, k: usize, n: usize) -> DMatrix<f64> {
        let m = k + 1;
        let mut out = identity(pw(p, 2 * m)) * (n - p - 1) as f64;
        for t in 0..k {
            out -= digit_swap(p, 2 * m, t, 2 * m - 1) + digit_swap(p, 2 * m, t, m - 1);
        }
        out
    }

    /// `E[S ⊗ S] = n²(Σ⊗Σ) + n(K(Σ⊗Σ) + vec Σ vec Σᵀ)` for `S ~ W(n, Σ)`.
    pub fn wishart_order2(n: usize, sigma: &SpdMatrix) -> DMatrix<f64> {
        let s = sigma.as_matrix();
        let p = s.nrows();
        let nf = n as f64;
        let ss = kron(s, s);
        let v = vec(s);
        &ss * (nf * nf) + (commutation(p, p) * &ss + &v * v.transpose()) * nf
    }

    /// Closed-form `E[⊗³ S]` with `P = (vec Σ vec Σᵀ) ⊗ Σ`, `A = I_p⊗K_pp`,
    /// `B = K_pp⊗I_p`, `C = I + B`; the term printed with an undefined `V`
    /// uses `V = P`.
    pub fn wishart_order3(n: usize, sigma: &SpdMatrix) -> DMatrix<f64> {
        let s = sigma.as_matrix();
        let p = s.nrows();
        let nf = n as f64;
        let v: DVector<f64> = vec(s);
        let pm = kron(&(&v * v.transpose()), s);
        let kp = commutation(p, p);
        let a = kron(&identity(p), &kp);
        let b = kron(&kp, &identity(p));
        let c = identity(pw(p, 3)) + &b;
        let s3 = kron_all(&[s.clone(), s.clone(), s.clone()]);
        let vv = &pm;
        let second = &pm + &a * &pm * &a + &b * &a * &pm * &a * &b + (&a + &b + &b * &a * &b) * &s3;
        let first = &c * &a * &pm + &pm * &a * &c + &b * &a * &pm * &a + &a * vv * &a * &b
            + (&a * &b + &b * &a) * &s3;
        &s3 * nf.powi(3) + second * (nf * nf) + first * nf
    }

    /// Inverse Wishart `var(vec S)`.
    pub fn inverse_wishart_variance(n: usize, sigma: &SpdMatrix) -> DMatrix<f64> {
        let s = sigma.as_matrix();
        let p = s.nrows();
        let q = (n - p) as f64;
        let v = vec(s);
        ((identity(p * p) + commutation(p, p)) * kron(s, s) + &v * v.transpose() * (2.0 / (q - 1.0)))
            / (q * (q - 1.0) * (q - 3.0))
    }
}
