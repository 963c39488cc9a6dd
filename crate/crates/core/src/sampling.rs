//! Random matrix generation.
//!
//! The main path draws `S = Q · L V Lᵀ` with `Q` the modular variable,
//! `V = R / tr(R)` for a Bartlett-factored `R ~ W(n, I)` and `L` the Cholesky
//! factor of the center. The naive path builds `X` from a uniform point on
//! the `n·p` sphere and is kept as a distributional oracle.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::EwParams;
use crate::error::{Error, Result};
use crate::generators::QSampler;
use crate::linalg::SpdMatrix;

/// Condition number above which an inverse draw counts as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Draws per parallel chunk in [`sample_many`]; fixed so that output does
/// not depend on the number of worker threads.
const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMethod {
    #[default]
    Bartlett,
    Naive,
}

/// Seeded generator for one independent stream of a master seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed from a master seed and an index (SplitMix64 mix).
pub fn child_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Bartlett factor `T` of `W(n, I_p)`: lower triangular with
/// `T_kk ~ χ_{n-k+1}` and standard normal entries below the diagonal.
#[derive(Debug, Clone)]
struct Bartlett {
    p: usize,
    chi2: Vec<Gamma<f64>>,
}

impl Bartlett {
    fn new(n: usize, p: usize) -> Result<Self> {
        if n < p || p == 0 {
            return Err(Error::Degenerate { n, p });
        }
        let chi2 = (0..p)
            .map(|k| {
                Gamma::new((n - k) as f64 / 2.0, 2.0)
                    .map_err(|e| Error::InvalidParameter(e.to_string()))
            })
            .collect::<Result<_>>()?;
        Ok(Bartlett { p, chi2 })
    }

    fn factor<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let p = self.p;
        let mut t = DMatrix::zeros(p, p);
        for i in 0..p {
            t[(i, i)] = self.chi2[i].sample(rng).sqrt();
            for j in 0..i {
                t[(i, j)] = rng.sample(StandardNormal);
            }
        }
        t
    }
}

/// Draws `S ~ W(n, I_p)` through the Bartlett decomposition.
pub fn sample_wishart_identity<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> Result<SpdMatrix> {
    let t = Bartlett::new(n, p)?.factor(rng);
    Ok(SpdMatrix::from_trusted(&t * t.transpose()))
}

/// Draws `V ~ NW(n, p)`; `tr(V) == 1` in floating point.
pub fn sample_nw<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> Result<SpdMatrix> {
    let t = Bartlett::new(n, p)?.factor(rng);
    Ok(unit_trace(&t))
}

/// `T Tᵀ / tr(T Tᵀ)` with the last diagonal entry nudged so that the
/// computed trace is exactly one.
fn unit_trace(t: &DMatrix<f64>) -> SpdMatrix {
    let r = t * t.transpose();
    let mut v = crate::linalg::symmetrize(&(&r / r.trace()));
    let last = v.nrows() - 1;
    for _ in 0..4 {
        let gap = 1.0 - v.trace();
        if gap == 0.0 {
            break;
        }
        v[(last, last)] += gap;
    }
    SpdMatrix::from_trusted(v)
}

/// Reusable sampler for one EW or IEW law.
#[derive(Debug, Clone)]
pub struct EwSampler {
    n: usize,
    p: usize,
    inverse: bool,
    method: SamplerMethod,
    q: QSampler,
    bartlett: Bartlett,
    /// Cholesky factor of the center actually sampled (`Σ⁻¹` for IEW).
    l: DMatrix<f64>,
}

impl EwSampler {
    pub fn new(params: &EwParams, method: SamplerMethod) -> Result<Self> {
        let (n, p) = (params.n(), params.p());
        let center = if params.is_inverse() {
            params.sigma().inverse()
        } else {
            params.sigma().clone()
        };
        Ok(EwSampler {
            n,
            p,
            inverse: params.is_inverse(),
            method,
            q: params.generator().q_sampler(n * p)?,
            bartlett: Bartlett::new(n, p)?,
            l: center.cholesky_lower(),
        })
    }

    /// One draw of the modular variable `Q` and the normalized part `V`
    /// of the forward (non-inverted) law with identity center.
    pub fn sample_components<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, SpdMatrix) {
        let q = self.q.sample(rng);
        let t = self.bartlett.factor(rng);
        (q, unit_trace(&t))
    }

    fn forward<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        match self.method {
            SamplerMethod::Bartlett => {
                let q = self.q.sample(rng);
                let t = self.bartlett.factor(rng);
                // tr(T Tᵀ) is the squared Frobenius norm of T
                let scale = q / t.norm_squared();
                let b = &self.l * t;
                &b * b.transpose() * scale
            }
            SamplerMethod::Naive => {
                let q = self.q.sample(rng);
                let mut x = DMatrix::<f64>::from_fn(self.p, self.n, |_, _| rng.sample(StandardNormal));
                let norm = x.norm();
                x *= q.sqrt() / norm;
                let lx = &self.l * x;
                &lx * lx.transpose()
            }
        }
    }

    /// One draw from the law.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SpdMatrix> {
        if !self.inverse {
            return Ok(SpdMatrix::from_trusted(self.forward(rng)));
        }
        let mut last = 0.0;
        for _ in 0..2 {
            let w = SpdMatrix::from_trusted(self.forward(rng));
            let eig = SymmetricEigen::new(w.as_matrix().clone());
            let (max, min) = (eig.eigenvalues.max(), eig.eigenvalues.min());
            last = if min > 0.0 { max / min } else { f64::INFINITY };
            if last <= MAX_CONDITION && w.as_matrix().clone().cholesky().is_some() {
                return Ok(w.inverse());
            }
        }
        Err(Error::SingularDraw { condition: last })
    }
}

/// Draws `S ~ EW(n, Σ, h)`.
pub fn sample_ew<R: Rng + ?Sized>(params: &EwParams, rng: &mut R, method: SamplerMethod) -> Result<SpdMatrix> {
    if params.is_inverse() {
        return Err(Error::InvalidParameter("sample_ew expects EW parameters".into()));
    }
    EwSampler::new(params, method)?.sample(rng)
}

/// Draws `S ~ EW⁻¹(n, Σ, h)` as the inverse of an EW draw with center `Σ⁻¹`.
pub fn sample_iew<R: Rng + ?Sized>(params: &EwParams, rng: &mut R) -> Result<SpdMatrix> {
    if !params.is_inverse() {
        return Err(Error::InvalidParameter("sample_iew expects IEW parameters".into()));
    }
    EwSampler::new(params, SamplerMethod::Bartlett)?.sample(rng)
}

/// Draws `count` matrices in parallel. Chunk `c` uses stream `c` of `seed`,
/// so the result depends only on `(params, count, seed, method)`.
pub fn sample_many(params: &EwParams, count: usize, seed: u64, method: SamplerMethod) -> Result<Vec<SpdMatrix>> {
    let sampler = EwSampler::new(params, method)?;
    let chunks: Vec<Result<Vec<SpdMatrix>>> = (0..count.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let len = CHUNK.min(count - c * CHUNK);
            (0..len).map(|_| sampler.sample(&mut rng)).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(count);
    for chunk in chunks {
        out.extend(chunk?);
    }
    Ok(out)
}
