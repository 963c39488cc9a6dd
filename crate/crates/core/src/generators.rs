//! Density generators of elliptical laws and their second-order modular
//! variable `Q`.
//!
//! Everything is evaluated in the log domain, since `d = n·p` is routinely
//! in the thousands.

use std::f64::consts::PI;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// An elliptical density generator family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityGenerator {
    Gaussian,
    T { nu: f64 },
    GeneralizedGaussian { beta: f64 },
    Kotz { alpha: f64, beta: f64, r: f64 },
}

impl fmt::Display for DensityGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DensityGenerator::Gaussian => write!(f, "gaussian"),
            DensityGenerator::T { nu } => write!(f, "t-(nu={nu})"),
            DensityGenerator::GeneralizedGaussian { beta } => write!(f, "gg-(beta={beta})"),
            DensityGenerator::Kotz { alpha, beta, r } => {
                write!(f, "kotz-(alpha={alpha}, beta={beta}, R={r})")
            }
        }
    }
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {x}")))
    }
}

impl DensityGenerator {
    /// Short family name used in messages ("gaussian", "t-", "gg-", "kotz-").
    pub fn family(&self) -> &'static str {
        match self {
            DensityGenerator::Gaussian => "gaussian",
            DensityGenerator::T { .. } => "t-",
            DensityGenerator::GeneralizedGaussian { .. } => "gg-",
            DensityGenerator::Kotz { .. } => "kotz-",
        }
    }

    /// Checks the dimension-free parameter constraints.
    pub fn validate(&self) -> Result<()> {
        match *self {
            DensityGenerator::Gaussian => Ok(()),
            DensityGenerator::T { nu } => positive("nu", nu),
            DensityGenerator::GeneralizedGaussian { beta } => positive("beta", beta),
            DensityGenerator::Kotz { alpha, beta, r } => {
                positive("beta", beta)?;
                positive("R", r)?;
                if alpha.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!("alpha must be finite, got {alpha}")))
                }
            }
        }
    }

    /// Checks the parameter constraints at dimension `d`.
    pub fn validate_for(&self, d: usize) -> Result<()> {
        self.validate()?;
        if d == 0 {
            return Err(Error::InvalidParameter("dimension d must be positive".into()));
        }
        if let DensityGenerator::Kotz { alpha, .. } = *self {
            if alpha + d as f64 / 2.0 <= 1.0 {
                return Err(Error::InvalidParameter(format!(
                    "kotz- requires alpha + d/2 > 1 (alpha = {alpha}, d = {d})"
                )));
            }
        }
        Ok(())
    }

    /// `log h_d(t)`.
    pub fn log_h(&self, d: usize, t: f64) -> Result<f64> {
        self.validate_for(d)?;
        if !(t >= 0.0) {
            return Err(Error::InvalidParameter(format!("t must be nonnegative, got {t}")));
        }
        let hd = d as f64 / 2.0;
        Ok(match *self {
            DensityGenerator::Gaussian => -hd * (2.0 * PI).ln() - t / 2.0,
            DensityGenerator::T { nu } => {
                -hd * (PI * nu).ln() + ln_gamma((nu + d as f64) / 2.0)
                    - ln_gamma(nu / 2.0)
                    - (nu + d as f64) / 2.0 * (t / nu).ln_1p()
            }
            DensityGenerator::GeneralizedGaussian { beta } => {
                beta.ln() - hd * (2f64.ln() / beta + PI.ln()) + ln_gamma(hd)
                    - ln_gamma(hd / beta)
                    - t.powf(beta) / 2.0
            }
            DensityGenerator::Kotz { alpha, beta, r } => {
                let s = (hd + alpha - 1.0) / beta;
                let power = if alpha == 1.0 {
                    0.0
                } else if t == 0.0 {
                    if alpha < 1.0 {
                        return Err(Error::InvalidParameter(
                            "kotz- with alpha < 1 requires t > 0".into(),
                        ));
                    }
                    f64::NEG_INFINITY
                } else {
                    (alpha - 1.0) * t.ln()
                };
                beta.ln() - hd * PI.ln() + s * r.ln() + ln_gamma(hd) - ln_gamma(s) + power
                    - r * t.powf(beta)
            }
        })
    }

    /// Checks that `m_k` exists at dimension `d`.
    pub fn check_moment(&self, d: usize, k: i32) -> Result<()> {
        self.validate_for(d)?;
        let hd = d as f64 / 2.0;
        let kf = f64::from(k);
        let what = || format!("modular moment m_{k} of the {} generator (d = {d})", self.family());
        if kf <= -hd {
            return Err(Error::moment(what(), format!("k > -d/2 = {}", -hd)));
        }
        match *self {
            DensityGenerator::T { nu } if kf >= nu / 2.0 => {
                Err(Error::moment(what(), format!("nu>{}", 2 * k)))
            }
            DensityGenerator::Kotz { alpha, .. } if kf <= -hd - alpha + 1.0 => Err(Error::moment(
                what(),
                format!("k > -d/2 - alpha + 1 = {}", -hd - alpha + 1.0),
            )),
            _ => Ok(()),
        }
    }

    /// `log m_k`, with `m_k = E[Q^k]`.
    pub fn log_modular_moment(&self, d: usize, k: i32) -> Result<f64> {
        self.check_moment(d, k)?;
        if k == 0 {
            return Ok(0.0);
        }
        let hd = d as f64 / 2.0;
        let kf = f64::from(k);
        Ok(match *self {
            DensityGenerator::Gaussian => kf * 2f64.ln() + ln_gamma(hd + kf) - ln_gamma(hd),
            DensityGenerator::T { nu } => {
                kf * nu.ln() + ln_gamma(hd + kf) + ln_gamma(nu / 2.0 - kf)
                    - ln_gamma(hd)
                    - ln_gamma(nu / 2.0)
            }
            DensityGenerator::GeneralizedGaussian { beta } => {
                kf / beta * 2f64.ln() + ln_gamma((hd + kf) / beta) - ln_gamma(hd / beta)
            }
            DensityGenerator::Kotz { alpha, beta, r } => {
                let s = (hd + alpha - 1.0) / beta;
                -kf / beta * r.ln() + ln_gamma(s + kf / beta) - ln_gamma(s)
            }
        })
    }

    /// `m_k = E[Q^k]` for `Q` the second-order modular variable at dimension `d`.
    pub fn modular_moment(&self, d: usize, k: i32) -> Result<f64> {
        if k == 0 {
            self.validate_for(d)?;
            return Ok(1.0);
        }
        self.check_moment(d, k)?;
        let hd = d as f64 / 2.0;
        let kf = f64::from(k);
        Ok(match *self {
            DensityGenerator::Gaussian => 2f64.powi(k) * gamma_ratio(hd, kf),
            DensityGenerator::T { nu } => nu.powi(k) * gamma_ratio(hd, kf) * gamma_ratio(nu / 2.0, -kf),
            DensityGenerator::GeneralizedGaussian { beta } => {
                2f64.powf(kf / beta) * gamma_ratio(hd / beta, kf / beta)
            }
            DensityGenerator::Kotz { alpha, beta, r } => {
                let s = (hd + alpha - 1.0) / beta;
                r.powf(-kf / beta) * gamma_ratio(s, kf / beta)
            }
        })
    }

    /// Density of `Q`: `t ↦ π^{d/2}/Γ(d/2) · h_d(t) · t^{d/2-1}`.
    pub fn modular_pdf(&self, d: usize, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::InvalidParameter(format!("t must be positive, got {t}")));
        }
        let hd = d as f64 / 2.0;
        let log = hd * PI.ln() - ln_gamma(hd) + self.log_h(d, t)? + (hd - 1.0) * t.ln();
        Ok(log.exp())
    }

    /// Draws `Q` at dimension `d`.
    pub fn sample_q<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Result<f64> {
        Ok(self.q_sampler(d)?.sample(rng))
    }

    /// A reusable sampler for `Q` at dimension `d`.
    pub fn q_sampler(&self, d: usize) -> Result<QSampler> {
        self.validate_for(d)?;
        let hd = d as f64 / 2.0;
        let gamma = |shape: f64, scale: f64| {
            Gamma::new(shape, scale).map_err(|e| Error::InvalidParameter(e.to_string()))
        };
        Ok(match *self {
            DensityGenerator::Gaussian => QSampler::Gamma {
                g: gamma(hd, 2.0)?,
                scale: 1.0,
                power: 1.0,
            },
            DensityGenerator::T { nu } => QSampler::Ratio {
                num: gamma(hd, 2.0)?,
                den: gamma(nu / 2.0, 2.0)?,
                nu,
            },
            DensityGenerator::GeneralizedGaussian { beta } => QSampler::Gamma {
                g: gamma(hd / beta, 2.0)?,
                scale: 1.0,
                power: 1.0 / beta,
            },
            DensityGenerator::Kotz { alpha, beta, r } => QSampler::Gamma {
                g: gamma((hd + alpha - 1.0) / beta, 1.0)?,
                scale: 1.0 / r,
                power: 1.0 / beta,
            },
        })
    }
}

/// Sampler for `Q`, built once per `(generator, d)`.
#[derive(Debug, Clone, Copy)]
pub enum QSampler {
    /// `(scale · G)^power` with `G` Gamma distributed.
    Gamma { g: Gamma<f64>, scale: f64, power: f64 },
    /// `ν · χ²_d / χ²_ν`.
    Ratio { num: Gamma<f64>, den: Gamma<f64>, nu: f64 },
}

impl Distribution<f64> for QSampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            QSampler::Gamma { g, scale, power } => {
                let x = scale * g.sample(rng);
                if *power == 1.0 {
                    x
                } else {
                    x.powf(*power)
                }
            }
            QSampler::Ratio { num, den, nu } => {
                let a = num.sample(rng);
                let b = den.sample(rng);
                nu * a / b
            }
        }
    }
}

/// `Γ(a + δ) / Γ(a)`; a finite product when `δ` is a small integer, which
/// keeps integer-offset moments free of exp/ln round-off.
fn gamma_ratio(a: f64, delta: f64) -> f64 {
    if delta.fract() == 0.0 && delta.abs() <= 64.0 {
        let m = delta as i32;
        if m >= 0 {
            (0..m).map(|j| a + f64::from(j)).product()
        } else {
            1.0 / (1..=-m).map(|j| a - f64::from(j)).product::<f64>()
        }
    } else {
        (ln_gamma(a + delta) - ln_gamma(a)).exp()
    }
}
