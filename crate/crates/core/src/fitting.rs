//! Goodness-of-fit machinery: scalar statistics of SPD matrices, empirical
//! CDFs, two-sample Kolmogorov-Smirnov tests and maximum-likelihood centers
//! for the Wishart and t-Wishart models.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{ln_multivariate_gamma, EwParams};
use crate::error::{Error, Result};
use crate::generators::DensityGenerator;
use crate::linalg::{vec, SpdMatrix};
use crate::sampling::{child_seed, sample_many, SamplerMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    Trace,
    TracePow2,
    TracePow3,
    FrobNorm,
    FrobNormPow2,
    FrobNormPow3,
    NegLog10Det,
}

impl StatisticKind {
    pub const ALL: [StatisticKind; 7] = [
        StatisticKind::Trace,
        StatisticKind::TracePow2,
        StatisticKind::TracePow3,
        StatisticKind::FrobNorm,
        StatisticKind::FrobNormPow2,
        StatisticKind::FrobNormPow3,
        StatisticKind::NegLog10Det,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StatisticKind::Trace => "trace",
            StatisticKind::TracePow2 => "trace_pow2",
            StatisticKind::TracePow3 => "trace_pow3",
            StatisticKind::FrobNorm => "frob_norm",
            StatisticKind::FrobNormPow2 => "frob_norm_pow2",
            StatisticKind::FrobNormPow3 => "frob_norm_pow3",
            StatisticKind::NegLog10Det => "neg_log10_det",
        }
    }
}

impl fmt::Display for StatisticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StatisticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StatisticKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::InvalidParameter(format!("unknown statistic '{s}'")))
    }
}

/// Scalar summary of an SPD matrix.
pub fn statistic(s: &SpdMatrix, kind: StatisticKind) -> f64 {
    let m = s.as_matrix();
    let pow = |r: u32| -> DMatrix<f64> {
        match r {
            1 => m.clone(),
            2 => m * m,
            _ => m * m * m,
        }
    };
    match kind {
        StatisticKind::Trace => m.trace(),
        StatisticKind::TracePow2 => pow(2).trace(),
        StatisticKind::TracePow3 => pow(3).trace(),
        StatisticKind::FrobNorm => m.norm(),
        StatisticKind::FrobNormPow2 => pow(2).norm(),
        StatisticKind::FrobNormPow3 => pow(3).norm(),
        StatisticKind::NegLog10Det => -s.log_det() / std::f64::consts::LN_10,
    }
}

/// Right-continuous empirical CDF: `F(x) = #{v ≤ x} / N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EcdfCurve {
    /// Distinct support points, ascending.
    pub x: Vec<f64>,
    /// `F` at each support point.
    pub f: Vec<f64>,
}

impl EcdfCurve {
    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.x.partition_point(|&v| v <= t);
        if idx == 0 {
            0.0
        } else {
            self.f[idx - 1]
        }
    }
}

fn sorted(values: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidParameter("NaN in sample".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

pub fn ecdf(values: &[f64]) -> Result<EcdfCurve> {
    if values.is_empty() {
        return Err(Error::Empty("ecdf needs at least one value"));
    }
    let v = sorted(values)?;
    let n = v.len() as f64;
    let mut x = Vec::new();
    let mut f = Vec::new();
    for (i, &val) in v.iter().enumerate() {
        if i + 1 < v.len() && v[i + 1] == val {
            continue;
        }
        x.push(val);
        f.push((i + 1) as f64 / n);
    }
    Ok(EcdfCurve { x, f })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    #[serde(rename = "D")]
    pub d: f64,
    pub p: f64,
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(xs: &[f64], ys: &[f64]) -> Result<KsResult> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::Empty("KS test needs two nonempty samples"));
    }
    let (a, b) = (sorted(xs)?, sorted(ys)?);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() || j < b.len() {
        let v = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    Ok(KsResult {
        d,
        p: kolmogorov_survival(ne.sqrt() * d),
    })
}

/// `P(K > λ)` for the Kolmogorov distribution,
/// `2 Σ_{j≥1} (-1)^{j-1} exp(-2 j² λ²)`, clamped to `[0, 1]`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let p = if lambda < 1.0 {
        // the alternating series converges slowly here; use the
        // equivalent theta-function form of the same distribution
        let c = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut cdf = 0.0;
        for j in 1..=100 {
            let term = ((2 * j - 1) as f64).powi(2) * c;
            let t = term.exp();
            cdf += t;
            if t < 1e-16 {
                break;
            }
        }
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * cdf
    } else {
        let mut sum = 0.0;
        for j in 1..=100 {
            let jf = j as f64;
            let term = (-2.0 * jf * jf * lambda * lambda).exp();
            sum += if j % 2 == 1 { term } else { -term };
            if term < 1e-12 {
                break;
            }
        }
        2.0 * sum
    };
    p.clamp(0.0, 1.0)
}

fn check_samples(samples: &[SpdMatrix]) -> Result<usize> {
    let first = samples.first().ok_or(Error::Empty("no samples"))?;
    let p = first.dim();
    if let Some(bad) = samples.iter().position(|s| s.dim() != p) {
        return Err(Error::Dimension(format!(
            "sample {bad} is {0}x{0}, expected {p}x{p}",
            samples[bad].dim()
        )));
    }
    Ok(p)
}

/// Wishart MLE of the center: `(1 / (n K)) Σ_i S_i`.
pub fn mle_wishart(samples: &[SpdMatrix], n: usize) -> Result<SpdMatrix> {
    let p = check_samples(samples)?;
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    let mut sum = DMatrix::zeros(p, p);
    for s in samples {
        sum += s.as_matrix();
    }
    Ok(SpdMatrix::from_trusted(sum / (n * samples.len()) as f64))
}

/// Output of [`mle_t_wishart`].
#[derive(Debug, Clone)]
pub struct TWishartFit {
    pub sigma: SpdMatrix,
    pub iterations: usize,
    /// Relative Frobenius change of the last step.
    pub residual: f64,
    /// Log-likelihood of each iterate, starting from the Wishart MLE.
    pub log_likelihood: Vec<f64>,
}

/// t-Wishart log-likelihood, given precomputed `Σ_i log|S_i|` and the
/// traces `tr(Σ⁻¹ S_i)`.
fn t_log_likelihood(n: usize, p: usize, nu: f64, sum_log_det_s: f64, log_det_sigma: f64, traces: &[f64]) -> f64 {
    let k = traces.len() as f64;
    let (nf, pf) = (n as f64, p as f64);
    let np = nf * pf;
    let gen = DensityGenerator::T { nu };
    let constant = np / 2.0 * std::f64::consts::PI.ln() - ln_multivariate_gamma(p, nf / 2.0);
    let h: f64 = traces
        .iter()
        .map(|&t| gen.log_h(n * p, t).expect("validated generator"))
        .sum();
    k * (constant - nf / 2.0 * log_det_sigma) + (nf - pf - 1.0) / 2.0 * sum_log_det_s + h
}

/// t-Wishart MLE by the fixed-point iteration
/// `Σ ← (1/(nK)) Σ_i w_i S_i`, `w_i = (ν + np) / (ν + tr(Σ⁻¹ S_i))`,
/// started at the Wishart MLE.
pub fn mle_t_wishart(samples: &[SpdMatrix], n: usize, nu: f64, tol: f64, max_iter: usize) -> Result<TWishartFit> {
    let p = check_samples(samples)?;
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::InvalidParameter(format!("nu must be positive, got {nu}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {tol}")));
    }
    let np = (n * p) as f64;
    let k = samples.len() as f64;
    let sum_log_det_s: f64 = samples.iter().map(SpdMatrix::log_det).sum();
    let mut sigma = mle_wishart(samples, n)?;
    let mut log_likelihood = Vec::new();
    let mut residual = f64::INFINITY;
    for iteration in 1..=max_iter {
        let traces: Vec<f64> = samples.par_iter().map(|s| sigma.trace_inv_mul(s.as_matrix())).collect();
        log_likelihood.push(t_log_likelihood(n, p, nu, sum_log_det_s, sigma.log_det(), &traces));
        let mut next = DMatrix::zeros(p, p);
        for (s, t) in samples.iter().zip(&traces) {
            next += s.as_matrix() * ((nu + np) / (nu + t));
        }
        next /= n as f64 * k;
        residual = (&next - sigma.as_matrix()).norm() / sigma.as_matrix().norm();
        sigma = SpdMatrix::from_trusted(next);
        if residual < tol {
            let traces: Vec<f64> = samples.par_iter().map(|s| sigma.trace_inv_mul(s.as_matrix())).collect();
            log_likelihood.push(t_log_likelihood(n, p, nu, sum_log_det_s, sigma.log_det(), &traces));
            return Ok(TWishartFit {
                sigma,
                iterations: iteration,
                residual,
                log_likelihood,
            });
        }
    }
    Err(Error::Convergence {
        iterations: max_iter,
        residual,
        last: Box::new(sigma.into_matrix()),
    })
}

/// Degrees of freedom used for the t-Wishart model of the reference EEG
/// classes (13, 17, 21 Hz stimulation and resting state).
pub fn default_nu(label: &str) -> Option<f64> {
    let l = label.trim().to_ascii_lowercase();
    let l = l.strip_suffix("hz").unwrap_or(&l);
    match l {
        "13" => Some(40.0),
        "17" => Some(35.0),
        "21" => Some(50.0),
        "resting" | "rest" => Some(23.0),
        _ => None,
    }
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    /// Degrees of freedom `n` of the data.
    pub n: usize,
    /// Per-class ν; takes precedence over `nu`.
    pub nu_per_class: BTreeMap<String, f64>,
    /// ν for classes absent from `nu_per_class`; falls back to
    /// [`default_nu`] when unset.
    pub nu: Option<f64>,
    pub stats: Vec<StatisticKind>,
    pub mc_count: usize,
    pub seed: u64,
    pub grid_size: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl FitConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        FitConfig {
            n,
            nu_per_class: BTreeMap::new(),
            nu: None,
            stats: StatisticKind::ALL.to_vec(),
            mc_count: 100_000,
            seed,
            grid_size: 512,
            tol: 1e-8,
            max_iter: 10_000,
        }
    }

    pub fn nu_for(&self, label: &str) -> Result<f64> {
        self.nu_per_class
            .get(label)
            .copied()
            .or(self.nu)
            .or_else(|| default_nu(label))
            .ok_or_else(|| Error::InvalidParameter(format!("no nu given for class '{label}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelResults {
    pub wishart: KsResult,
    pub t_wishart: KsResult,
}

/// Empirical CDFs of one statistic on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfTable {
    pub x: Vec<f64>,
    pub data_cdf: Vec<f64>,
    pub wishart_cdf: Vec<f64>,
    pub t_wishart_cdf: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSummary {
    pub count: usize,
    pub nu: f64,
    pub seed: u64,
    /// Column-major `vec` of the Wishart MLE center.
    pub wishart_center: Vec<f64>,
    /// Column-major `vec` of the t-Wishart MLE center.
    pub t_wishart_center: Vec<f64>,
    pub t_wishart_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub n: usize,
    pub p: usize,
    pub mc_samples: usize,
    pub seed: u64,
    /// class → statistic → model → KS result.
    pub results: BTreeMap<String, BTreeMap<String, ModelResults>>,
    pub classes: BTreeMap<String, ClassSummary>,
    #[serde(skip)]
    pub curves: BTreeMap<String, BTreeMap<String, CdfTable>>,
}

fn grid(lo: f64, hi: f64, size: usize) -> Vec<f64> {
    if size == 1 || hi <= lo {
        return vec![lo; size.max(1)];
    }
    (0..size)
        .map(|i| if i + 1 == size { hi } else { lo + (hi - lo) * i as f64 / (size - 1) as f64 })
        .collect()
}

struct ClassFit {
    summary: ClassSummary,
    results: BTreeMap<String, ModelResults>,
    curves: BTreeMap<String, CdfTable>,
}

fn fit_class(index: usize, samples: &[SpdMatrix], nu: f64, cfg: &FitConfig) -> Result<ClassFit> {
    check_samples(samples)?;
    let seed = child_seed(cfg.seed, index as u64);
    let sigma_w = mle_wishart(samples, cfg.n)?;
    let t_fit = mle_t_wishart(samples, cfg.n, nu, cfg.tol, cfg.max_iter)?;
    let wishart = EwParams::wishart(cfg.n, sigma_w.clone())?;
    let t_model = EwParams::ew(cfg.n, t_fit.sigma.clone(), DensityGenerator::T { nu })?;
    let w_draws = sample_many(&wishart, cfg.mc_count, child_seed(seed, 0), SamplerMethod::Bartlett)?;
    let t_draws = sample_many(&t_model, cfg.mc_count, child_seed(seed, 1), SamplerMethod::Bartlett)?;

    let mut results = BTreeMap::new();
    let mut curves = BTreeMap::new();
    for &kind in &cfg.stats {
        let eval = |xs: &[SpdMatrix]| -> Vec<f64> { xs.iter().map(|s| statistic(s, kind)).collect() };
        let (data, ws, ts) = (eval(samples), eval(&w_draws), eval(&t_draws));
        results.insert(
            kind.name().to_string(),
            ModelResults {
                wishart: ks_two_sample(&data, &ws)?,
                t_wishart: ks_two_sample(&data, &ts)?,
            },
        );
        let all = data.iter().chain(&ws).chain(&ts);
        let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
        let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
        let x = grid(lo, hi, cfg.grid_size);
        let (fd, fw, ft) = (ecdf(&data)?, ecdf(&ws)?, ecdf(&ts)?);
        curves.insert(
            kind.name().to_string(),
            CdfTable {
                data_cdf: x.iter().map(|&t| fd.eval(t)).collect(),
                wishart_cdf: x.iter().map(|&t| fw.eval(t)).collect(),
                t_wishart_cdf: x.iter().map(|&t| ft.eval(t)).collect(),
                x,
            },
        );
    }
    Ok(ClassFit {
        summary: ClassSummary {
            count: samples.len(),
            nu,
            seed,
            wishart_center: vec(sigma_w.as_matrix()).as_slice().to_vec(),
            t_wishart_center: vec(t_fit.sigma.as_matrix()).as_slice().to_vec(),
            t_wishart_iterations: t_fit.iterations,
        },
        results,
        curves,
    })
}

/// Fits both models to every class and compares statistic distributions.
///
/// Class `i` (in label order) draws its model samples from child seed `i`
/// of `cfg.seed`, so results do not depend on scheduling.
pub fn fit_report(dataset: &BTreeMap<String, Vec<SpdMatrix>>, cfg: &FitConfig) -> Result<FitReport> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset has no classes"));
    }
    if let Some((label, _)) = dataset.iter().find(|(_, v)| v.is_empty()) {
        return Err(Error::InvalidParameter(format!("class '{label}' is empty")));
    }
    if cfg.mc_count == 0 || cfg.grid_size == 0 {
        return Err(Error::InvalidParameter("mc_count and grid_size must be positive".into()));
    }
    let p = dataset.values().next().unwrap()[0].dim();
    let jobs: Vec<(usize, &String, &Vec<SpdMatrix>, f64)> = dataset
        .iter()
        .enumerate()
        .map(|(i, (label, samples))| Ok((i, label, samples, cfg.nu_for(label)?)))
        .collect::<Result<_>>()?;
    let fits: Vec<Result<ClassFit>> = jobs
        .par_iter()
        .map(|(i, _, samples, nu)| {
            if samples[0].dim() != p {
                return Err(Error::Dimension("classes have different matrix sizes".into()));
            }
            fit_class(*i, samples, *nu, cfg)
        })
        .collect();
    let mut report = FitReport {
        n: cfg.n,
        p,
        mc_samples: cfg.mc_count,
        seed: cfg.seed,
        results: BTreeMap::new(),
        classes: BTreeMap::new(),
        curves: BTreeMap::new(),
    };
    for ((_, label, _, _), fit) in jobs.iter().zip(fits) {
        let fit = fit?;
        report.results.insert((*label).clone(), fit.results);
        report.classes.insert((*label).clone(), fit.summary);
        report.curves.insert((*label).clone(), fit.curves);
    }
    Ok(report)
}

/// Heuristic ν selection: the candidate maximizing the trace-statistic KS
/// p-value of the t-Wishart model. Returns `(best ν, p-value per candidate)`.
pub fn select_nu(samples: &[SpdMatrix], n: usize, candidates: &[f64], mc_count: usize, seed: u64) -> Result<(f64, Vec<f64>)> {
    if candidates.is_empty() {
        return Err(Error::Empty("no candidate nu values"));
    }
    let data: Vec<f64> = samples.iter().map(|s| statistic(s, StatisticKind::Trace)).collect();
    let mut pvals = Vec::with_capacity(candidates.len());
    for (i, &nu) in candidates.iter().enumerate() {
        let fit = mle_t_wishart(samples, n, nu, 1e-8, 10_000)?;
        let model = EwParams::ew(n, fit.sigma, DensityGenerator::T { nu })?;
        let draws = sample_many(&model, mc_count, child_seed(seed, i as u64), SamplerMethod::Bartlett)?;
        let stats: Vec<f64> = draws.iter().map(|s| statistic(s, StatisticKind::Trace)).collect();
        pvals.push(ks_two_sample(&data, &stats)?.p);
    }
    let best = pvals
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| candidates[i])
        .unwrap();
    Ok((best, pvals))
}
