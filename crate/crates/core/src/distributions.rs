//! Elliptical Wishart (EW), Inverse Elliptical Wishart (IEW) and Normalized
//! Wishart (NW) laws: densities and closed-form first and second moments.
//!
//! Variances use the `E[vec S vec Sᵀ]` convention. The Kronecker-moment
//! convention `E[S ⊗ S]` lives in [`crate::kronecker`].

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::generators::DensityGenerator;
use crate::linalg::{kron, vec, SpdMatrix};
use crate::operator::Permutation;

/// Full parameterization of an EW or IEW law.
#[derive(Debug, Clone, PartialEq)]
pub struct EwParams {
    n: usize,
    sigma: SpdMatrix,
    gen: DensityGenerator,
    inverse: bool,
}

impl EwParams {
    /// Checks `n ≥ p` and the generator constraints at `d = n·p`.
    pub fn new(n: usize, sigma: SpdMatrix, gen: DensityGenerator, inverse: bool) -> Result<Self> {
        let p = sigma.dim();
        if n < p {
            return Err(Error::Degenerate { n, p });
        }
        gen.validate_for(n * p)?;
        Ok(EwParams { n, sigma, gen, inverse })
    }

    pub fn ew(n: usize, sigma: SpdMatrix, gen: DensityGenerator) -> Result<Self> {
        Self::new(n, sigma, gen, false)
    }

    pub fn iew(n: usize, sigma: SpdMatrix, gen: DensityGenerator) -> Result<Self> {
        Self::new(n, sigma, gen, true)
    }

    /// Plain Wishart `W(n, Σ)`.
    pub fn wishart(n: usize, sigma: SpdMatrix) -> Result<Self> {
        Self::new(n, sigma, DensityGenerator::Gaussian, false)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.sigma.dim()
    }

    /// `n·p`, the dimension of the underlying elliptical vector.
    pub fn np(&self) -> usize {
        self.n * self.p()
    }

    pub fn sigma(&self) -> &SpdMatrix {
        &self.sigma
    }

    pub fn generator(&self) -> DensityGenerator {
        self.gen
    }

    pub fn is_inverse(&self) -> bool {
        self.inverse
    }

    /// Same law with another center.
    pub fn with_sigma(&self, sigma: SpdMatrix) -> Result<Self> {
        Self::new(self.n, sigma, self.gen, self.inverse)
    }

    pub fn coefficients(&self) -> MomentCoefficients {
        coefficients(self.gen, self.n, self.p())
    }

    pub fn log_pdf(&self, s: &SpdMatrix) -> Result<f64> {
        if self.inverse {
            iew_log_pdf(self, s)
        } else {
            ew_log_pdf(self, s)
        }
    }

    pub fn mean(&self) -> Result<DMatrix<f64>> {
        if self.inverse {
            iew_mean(self)
        } else {
            ew_mean(self)
        }
    }

    pub fn variance(&self) -> Result<DMatrix<f64>> {
        if self.inverse {
            iew_variance(self)
        } else {
            ew_variance(self)
        }
    }

    /// `E[vec S vec Sᵀ] = var + vec(E S) vec(E S)ᵀ`.
    pub fn second_moment(&self) -> Result<DMatrix<f64>> {
        let var = self.variance()?;
        let m = vec(&self.mean()?);
        Ok(var + &m * m.transpose())
    }
}

/// Scalar coefficients of the first two moments; `None` where the
/// defining expectation does not exist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentCoefficients {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub c: Option<f64>,
    pub d: Option<f64>,
    pub e: Option<f64>,
    pub f: Option<f64>,
}

/// Coefficients `(a, b, c, d, e, f)` for generator `gen` at `(n, p)`.
pub fn coefficients(gen: DensityGenerator, n: usize, p: usize) -> MomentCoefficients {
    let (nf, pf) = (n as f64, p as f64);
    let np = nf * pf;
    let q = n as i64 - p as i64;
    if let DensityGenerator::Gaussian = gen {
        let qf = q as f64;
        let d = (q > 1).then(|| 1.0 / (qf - 1.0));
        let e = (q > 3).then(|| 1.0 / (qf * (qf - 1.0) * (qf - 3.0)));
        let f = (q > 3)
            .then(|| 2.0 / (qf * (qf - 1.0) * (qf - 1.0) * (qf - 2.0) * (qf - 3.0)));
        return MomentCoefficients {
            a: Some(nf),
            b: Some(1.0),
            c: Some(0.0),
            d,
            e,
            f,
        };
    }
    let m = |k: i32| gen.modular_moment(n * p, k).ok();
    let m1 = m(1);
    let m2 = m(2);
    let a = m1.map(|m1| m1 / pf);
    let b = m2.map(|m2| m2 / (np * (np + 2.0)));
    let c = match (b, m1) {
        (Some(b), Some(m1)) => Some(b - (m1 / np).powi(2)),
        _ => None,
    };
    let d = if q > 1 {
        m(-1).map(|mm| (np - 2.0) / (q as f64 - 1.0) * mm)
    } else {
        None
    };
    let e = if q > 3 {
        let qf = q as f64;
        m(-2).map(|mm| (np - 2.0) * (np - 4.0) / (qf * (qf - 1.0) * (qf - 3.0)) * mm)
    } else {
        None
    };
    let f = match (d, e) {
        (Some(d), Some(e)) => Some(e - d * d / (q as f64 - 2.0)),
        _ => None,
    };
    MomentCoefficients { a, b, c, d, e, f }
}

/// Log multivariate Gamma `ln Γ_p(a)`.
pub fn ln_multivariate_gamma(p: usize, a: f64) -> f64 {
    let pf = p as f64;
    pf * (pf - 1.0) / 4.0 * PI.ln()
        + (1..=p).map(|j| ln_gamma(a + (1.0 - j as f64) / 2.0)).sum::<f64>()
}

fn check_sample(params: &EwParams, s: &SpdMatrix) -> Result<()> {
    if s.dim() != params.p() {
        return Err(Error::Dimension(format!(
            "sample is {0}x{0} but the center is {1}x{1}",
            s.dim(),
            params.p()
        )));
    }
    Ok(())
}

fn require_flag(params: &EwParams, inverse: bool) -> Result<()> {
    if params.inverse != inverse {
        let (want, got) = if inverse { ("IEW", "EW") } else { ("EW", "IEW") };
        return Err(Error::InvalidParameter(format!(
            "expected {want} parameters, got {got}"
        )));
    }
    Ok(())
}

/// Log density of `EW(n, Σ, h)` at `S`.
pub fn ew_log_pdf(params: &EwParams, s: &SpdMatrix) -> Result<f64> {
    require_flag(params, false)?;
    check_sample(params, s)?;
    let (n, p) = (params.n as f64, params.p() as f64);
    let t = params.sigma.trace_inv_mul(s.as_matrix());
    Ok(n * p / 2.0 * PI.ln() - ln_multivariate_gamma(params.p(), n / 2.0)
        - n / 2.0 * params.sigma.log_det()
        + (n - p - 1.0) / 2.0 * s.log_det()
        + params.gen.log_h(params.np(), t)?)
}

/// Log density of `EW⁻¹(n, Σ, h)` at `S`.
pub fn iew_log_pdf(params: &EwParams, s: &SpdMatrix) -> Result<f64> {
    require_flag(params, true)?;
    check_sample(params, s)?;
    let (n, p) = (params.n as f64, params.p() as f64);
    let t = s.trace_inv_mul(params.sigma.as_matrix());
    Ok(n * p / 2.0 * PI.ln() - ln_multivariate_gamma(params.p(), n / 2.0)
        + n / 2.0 * params.sigma.log_det()
        - (n + p + 1.0) / 2.0 * s.log_det()
        + params.gen.log_h(params.np(), t)?)
}

/// Rewraps a missing modular moment as a missing matrix moment.
fn moment_for(what: &str, gen: DensityGenerator, d: usize, k: i32) -> Result<f64> {
    gen.modular_moment(d, k).map_err(|e| match e {
        Error::MomentDoesNotExist { condition, .. } => Error::moment(what, condition),
        other => other,
    })
}

fn require_dof(what: &str, n: usize, p: usize, extra: usize) -> Result<()> {
    if n > p + extra {
        Ok(())
    } else {
        Err(Error::moment(what, format!("n>p+{extra} (n = {n}, p = {p})")))
    }
}

/// `(I + K_{p,p})(Σ ⊗ Σ)`.
fn sym_kron(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let p = sigma.nrows();
    let ss = kron(sigma, sigma);
    let k = Permutation::commutation(p, p);
    // K·M permutes the rows of M
    let mut out = ss.clone();
    for (i, &src) in k.as_slice().iter().enumerate() {
        for j in 0..p * p {
            out[(i, j)] += ss[(src, j)];
        }
    }
    out
}

fn vec_outer(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let v = vec(sigma);
    &v * v.transpose()
}

/// `E[S] = a·Σ`.
pub fn ew_mean(params: &EwParams) -> Result<DMatrix<f64>> {
    let m1 = moment_for("mean", params.gen, params.np(), 1)?;
    let a = match params.gen {
        DensityGenerator::Gaussian => params.n as f64,
        _ => m1 / params.p() as f64,
    };
    Ok(params.sigma.as_matrix() * a)
}

/// `var(vec S) = n b (I+K)(Σ⊗Σ) + n² c vec Σ vec Σᵀ`.
pub fn ew_variance(params: &EwParams) -> Result<DMatrix<f64>> {
    moment_for("variance", params.gen, params.np(), 2)?;
    let coef = params.coefficients();
    let (b, c) = (coef.b.expect("m_2 exists"), coef.c.expect("m_2 exists"));
    let n = params.n as f64;
    let s = params.sigma.as_matrix();
    Ok(sym_kron(s) * (n * b) + vec_outer(s) * (n * n * c))
}

/// `E[S] = d·Σ` for the inverse law.
pub fn iew_mean(params: &EwParams) -> Result<DMatrix<f64>> {
    require_dof("mean", params.n, params.p(), 1)?;
    moment_for("mean", params.gen, params.np(), -1)?;
    let d = params.coefficients().d.expect("existence checked");
    Ok(params.sigma.as_matrix() * d)
}

/// `var(vec S) = e (I+K)(Σ⊗Σ) + (n-p-2) f vec Σ vec Σᵀ` for the inverse law.
pub fn iew_variance(params: &EwParams) -> Result<DMatrix<f64>> {
    require_dof("variance", params.n, params.p(), 3)?;
    moment_for("variance", params.gen, params.np(), -2)?;
    let coef = params.coefficients();
    let (e, f) = (coef.e.expect("existence checked"), coef.f.expect("existence checked"));
    let q = (params.n - params.p()) as f64;
    let s = params.sigma.as_matrix();
    Ok(sym_kron(s) * e + vec_outer(s) * ((q - 2.0) * f))
}

/// `(E[V], E[vec V vec Vᵀ])` for `V ~ NW(n, p)`.
pub fn nw_moments(n: usize, p: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if n < p || p == 0 {
        return Err(Error::Degenerate { n, p });
    }
    let (nf, pf) = (n as f64, p as f64);
    let id = DMatrix::<f64>::identity(p, p);
    let mean = &id / pf;
    let np = nf * pf;
    let second = (sym_kron(&id) * nf + vec_outer(&id) * (nf * nf)) / (np * (np + 2.0));
    Ok((mean, second))
}

/// `(E[V⁻¹], E[vec V⁻¹ vec V⁻ᵀ])` for `V ~ NW(n, p)`; requires `n > p + 3`.
pub fn nw_inverse_moments(n: usize, p: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if n < p || p == 0 {
        return Err(Error::Degenerate { n, p });
    }
    require_dof("normalized Wishart inverse moments", n, p, 3)?;
    let (nf, pf) = (n as f64, p as f64);
    let np = nf * pf;
    let q = nf - pf;
    let id = DMatrix::<f64>::identity(p, p);
    let mean = &id * ((np - 2.0) / (q - 1.0));
    let scale = (np - 2.0) * (np - 4.0) / (q * (q - 1.0) * (q - 3.0));
    let second = (sym_kron(&id) + vec_outer(&id) * (q - 2.0)) * scale;
    Ok((mean, second))
}
