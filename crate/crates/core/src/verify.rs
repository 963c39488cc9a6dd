//! Acceptance checks, shared by the `acceptance` test target and the
//! `verify` CLI command. Every check compares library output with an
//! independently assembled oracle or a Monte Carlo estimate.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::distributions::{coefficients, ew_mean, ew_variance, iew_mean, iew_variance, nw_moments, EwParams};
use crate::error::Error;
use crate::fitting::{fit_report, statistic, ks_two_sample, FitConfig, StatisticKind};
use crate::generators::DensityGenerator;
use crate::io::{report_json, write_cdf_csv, write_dataset};
use crate::kronecker::{
    inverse_wishart_kron_moment, iew_kron_moment, mc_expectation, rearrange_second_moment, reference,
    wishart_kron_moment, MeanAccumulator, MemoryBudget,
};
use crate::linalg::{kron, kron_power, vec, SpdMatrix};
use crate::operator::{Permutation, PermSumOperator};
use crate::sampling::{child_seed, sample_many, sample_nw, stream_rng, SamplerMethod};

#[derive(Debug, Clone, Copy)]
pub struct VerifyConfig {
    /// Smaller Monte Carlo sizes; tolerances are unchanged.
    pub quick: bool,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { quick: false, seed: 20240501 }
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub id: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} [{}] {}: {} ({:.2}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

type Outcome = std::result::Result<String, String>;
type CheckFn = fn(&VerifyConfig) -> Outcome;

pub const CHECKS: &[(&str, &str, CheckFn)] = &[
    ("0", "operator equivalence", operator_equivalence),
    ("1", "closed-form specializations", closed_forms),
    ("2", "order-2 Kronecker moment", kron_order2),
    ("3", "order-3 Kronecker moment and Monte Carlo", kron_order3),
    ("4", "univariate reduction", univariate),
    ("5", "inverse recursion consistency", inverse_recursion),
    ("6", "sampler correctness", sampler),
    ("7", "normalized Wishart", normalized_wishart),
    ("8", "generator coefficients", generator_coefficients),
    ("9", "fitting power and calibration", fitting_power),
    ("10", "moment-existence guards", existence_guards),
    ("11", "determinism", determinism),
];

/// Runs one check, converting panics into failures.
pub fn run_check(id: &'static str, name: &'static str, f: CheckFn, cfg: &VerifyConfig) -> CheckResult {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(|| f(cfg))).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let (passed, detail) = match outcome {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    CheckResult {
        id,
        name,
        passed,
        detail,
        elapsed: start.elapsed(),
    }
}

/// Runs every check in order, reporting each result as it completes.
pub fn run_all(cfg: &VerifyConfig, mut report: impl FnMut(&CheckResult)) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|&(id, name, f)| {
            let r = run_check(id, name, f, cfg);
            report(&r);
            r
        })
        .collect()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lib<T>(r: crate::error::Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// `max |a - b| / max |b|`.
fn rel_max(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Random SPD matrix `A Aᵀ / p + I / 2` with standard normal `A`.
pub fn random_spd(p: usize, seed: u64) -> SpdMatrix {
    let mut rng = stream_rng(seed, 0);
    let a = DMatrix::<f64>::from_fn(p, p, |_, _| rng.sample(StandardNormal));
    let m = &a * a.transpose() / p as f64 + DMatrix::identity(p, p) * 0.5;
    SpdMatrix::new((&m + m.transpose()) / 2.0).expect("random SPD")
}

fn operator_equivalence(_: &VerifyConfig) -> Outcome {
    for (p, q) in [(2, 2), (2, 3), (3, 2), (3, 4), (4, 4)] {
        let lazy = PermSumOperator::from_permutation(1.0, Permutation::commutation(p, q));
        let dense = lib(lazy.to_dense())?;
        ensure(dense == reference::commutation(p, q), || format!("K_{{{p},{q}}} differs from its dense definition"))?;
        let a = DMatrix::from_fn(p, q, |i, j| (1 + i + 7 * j) as f64);
        ensure(lib(lazy.apply(vec(&a).as_slice()))? == vec(&a.transpose()).as_slice(), || {
            format!("K_{{{p},{q}}} vec(A) != vec(Aᵀ)")
        })?;
    }
    let budget = MemoryBudget::unlimited();
    for p in [2, 3] {
        for k in 0..=1 {
            let lazy = lib(crate::kronecker::build_m(p, k, 7, &budget))?;
            ensure(lib(lazy.to_dense())? == reference::m(p, k, 7), || {
                format!("lazy M({k}) differs from dense assembly at p = {p}")
            })?;
        }
    }
    Ok("commutation and moment operators equal their dense assemblies".into())
}

fn closed_forms(cfg: &VerifyConfig) -> Outcome {
    let mut worst: f64 = 0.0;
    for (n, p) in [(10usize, 2usize), (20, 4)] {
        for r in 0..5 {
            let sigma = random_spd(p, child_seed(cfg.seed, (100 * p + r) as u64));
            let s = sigma.as_matrix();
            let (nf, q) = (n as f64, (n - p) as f64);
            let sym = (DMatrix::identity(p * p, p * p) + reference::commutation(p, p)) * kron(s, s);
            let v = vec(s);
            let outer = &v * v.transpose();

            let ew = lib(EwParams::wishart(n, sigma.clone()))?;
            let iew = lib(EwParams::iew(n, sigma.clone(), DensityGenerator::Gaussian))?;
            let pairs = [
                (lib(ew_mean(&ew))?, s * nf),
                (lib(ew_variance(&ew))?, &sym * nf),
                (lib(iew_mean(&iew))?, s / (q - 1.0)),
                (
                    lib(iew_variance(&iew))?,
                    (&sym + &outer * (2.0 / (q - 1.0))) / (q * (q - 1.0) * (q - 3.0)),
                ),
            ];
            for (got, want) in pairs {
                worst = worst.max(rel_frob(&got, &want));
            }
        }
    }
    ensure(worst < 1e-12, || format!("max relative error {worst:e} >= 1e-12"))?;
    Ok(format!("max relative error {worst:.1e}"))
}

fn kron_order2(cfg: &VerifyConfig) -> Outcome {
    let mut worst: f64 = 0.0;
    for p in [2usize, 3] {
        for n in [5usize, 20] {
            let sigma = random_spd(p, child_seed(cfg.seed, (200 + 10 * p + n) as u64));
            let got = lib(wishart_kron_moment(n, &sigma, 2, &MemoryBudget::default()))?;
            let want = reference::wishart_order2(n, &sigma);
            worst = worst.max(rel_max(&got, want.as_slice()));
        }
    }
    ensure(worst < 1e-10, || format!("max relative entry error {worst:e} >= 1e-10"))?;
    Ok(format!("max relative entry error {worst:.1e}"))
}

fn kron_order3(cfg: &VerifyConfig) -> Outcome {
    let (n, p) = (5, 2);
    let sigma = random_spd(p, child_seed(cfg.seed, 300));
    let got = lib(wishart_kron_moment(n, &sigma, 3, &MemoryBudget::default()))?;
    let dense = reference::wishart_order3(n, &sigma);
    let closed = rel_max(&got, dense.as_slice());
    ensure(closed < 1e-10, || format!("closed form: max relative entry error {closed:e} >= 1e-10"))?;

    let samples = if cfg.quick { 100_000 } else { 1_000_000 };
    let params = lib(EwParams::wishart(n, sigma))?;
    let est = lib(mc_expectation(&params, samples, child_seed(cfg.seed, 301), SamplerMethod::Bartlett, 64, |s| {
        kron_power(s.as_matrix(), 3).as_slice().to_vec()
    }))?;
    let z = est.max_abs_z(&got);
    ensure(z < 4.0, || format!("Monte Carlo max |z| = {z:.2} >= 4 ({samples} samples)"))?;
    Ok(format!("closed form error {closed:.1e}; Monte Carlo max |z| {z:.2} over {samples} samples"))
}

fn univariate(_: &VerifyConfig) -> Outcome {
    let mut worst: f64 = 0.0;
    for n in [1usize, 2, 5, 13] {
        for s2 in [1.0, 2.5] {
            let sigma = lib(SpdMatrix::new(DMatrix::from_element(1, 1, s2)))?;
            for k in 1..=6 {
                let got = lib(wishart_kron_moment(n, &sigma, k, &MemoryBudget::default()))?;
                // E[χ²_n^k] = 2^k Γ(n/2 + k) / Γ(n/2) = Π_{j<k} (n + 2j)
                let chi: f64 = (0..k).map(|j| (n + 2 * j) as f64).product();
                let want = chi * s2.powi(k as i32);
                worst = worst.max((got[0] - want).abs() / want);
            }
        }
    }
    ensure(worst < 1e-12, || format!("max relative error {worst:e} >= 1e-12"))?;
    Ok(format!("max relative error {worst:.1e}"))
}

fn inverse_recursion(cfg: &VerifyConfig) -> Outcome {
    let budget = MemoryBudget::default();
    let mut worst1: f64 = 0.0;
    for (n, p) in [(10usize, 2usize), (12, 3), (20, 4)] {
        let sigma = random_spd(p, child_seed(cfg.seed, (500 + p) as u64));
        let params = lib(EwParams::iew(n, sigma.clone(), DensityGenerator::Gaussian))?;
        let got = lib(iew_kron_moment(&params, 1, &budget))?;
        let want = sigma.as_matrix() / (n - p - 1) as f64;
        worst1 = worst1.max(rel_max(&got, want.as_slice()));
    }
    ensure(worst1 < 1e-10, || format!("first moment: relative error {worst1:e} >= 1e-10"))?;

    let (n, p) = (10usize, 2usize);
    let sigma = random_spd(p, child_seed(cfg.seed, 510));
    let s = sigma.as_matrix();
    let q = (n - p) as f64;
    let v = vec(s);
    let sym = (DMatrix::identity(p * p, p * p) + reference::commutation(p, p)) * kron(s, s);
    let var = (sym + &v * v.transpose() * (2.0 / (q - 1.0))) / (q * (q - 1.0) * (q - 3.0));
    let mean = &v / (q - 1.0);
    let second_vec = var + &mean * mean.transpose();
    let want = lib(rearrange_second_moment(&second_vec))?;
    let params = lib(EwParams::iew(n, sigma.clone(), DensityGenerator::Gaussian))?;
    let got = lib(iew_kron_moment(&params, 2, &budget))?;
    let err2 = rel_max(&got, want.as_slice());
    ensure(err2 < 1e-10, || format!("second moment: relative error {err2:e} >= 1e-10"))?;
    let plain = lib(inverse_wishart_kron_moment(n, &sigma, 2, &budget))?;
    ensure(rel_max(&plain, want.as_slice()) < 1e-10, || "inverse Wishart entry point disagrees".into())?;
    Ok(format!("first moment error {worst1:.1e}; second moment error {err2:.1e}"))
}

fn sampler(cfg: &VerifyConfig) -> Outcome {
    let (n, p) = (20, 3);
    let count = if cfg.quick { 20_000 } else { 100_000 };
    let sigma = random_spd(p, child_seed(cfg.seed, 600));
    let params = lib(EwParams::ew(n, sigma, DensityGenerator::T { nu: 10.0 }))?;
    let seed = child_seed(cfg.seed, 601);

    let mean = lib(mc_expectation(&params, count, seed, SamplerMethod::Bartlett, p * p, |s| {
        s.as_matrix().as_slice().to_vec()
    }))?;
    let want_mean = lib(ew_mean(&params))?;
    let got_mean = DMatrix::from_column_slice(p, p, &mean.mean);
    let mean_err = rel_frob(&got_mean, &want_mean);
    ensure(mean_err < 0.01, || format!("mean: relative Frobenius error {mean_err:.4} >= 1%"))?;

    let second = lib(mc_expectation(&params, count, seed, SamplerMethod::Bartlett, p.pow(4), |s| {
        let v = vec(s.as_matrix());
        (&v * v.transpose()).as_slice().to_vec()
    }))?;
    let want_second = lib(params.second_moment())?;
    let z = second.max_abs_z(want_second.as_slice());
    ensure(z < 4.0, || format!("second moment: max |z| = {z:.2} >= 4"))?;

    let bartlett = lib(sample_many(&params, count, child_seed(cfg.seed, 602), SamplerMethod::Bartlett))?;
    let naive = lib(sample_many(&params, count, child_seed(cfg.seed, 603), SamplerMethod::Naive))?;
    let mut ks = Vec::new();
    for kind in [StatisticKind::Trace, StatisticKind::NegLog10Det] {
        let a: Vec<f64> = bartlett.iter().map(|s| statistic(s, kind)).collect();
        let b: Vec<f64> = naive.iter().map(|s| statistic(s, kind)).collect();
        let r = lib(ks_two_sample(&a, &b))?;
        ensure(r.p > 0.01, || format!("Bartlett vs naive on {kind}: KS p = {:.2e} <= 0.01", r.p))?;
        ks.push(format!("{kind} p={:.3}", r.p));
    }
    Ok(format!(
        "mean error {:.2}%; second moment max |z| {z:.2}; KS {} ({count} draws)",
        100.0 * mean_err,
        ks.join(", ")
    ))
}

fn normalized_wishart(cfg: &VerifyConfig) -> Outcome {
    let (n, p) = (20, 4);
    let count: usize = if cfg.quick { 20_000 } else { 100_000 };
    const CHUNK: usize = 1024;
    let seed = child_seed(cfg.seed, 700);
    type Acc = (MeanAccumulator, MeanAccumulator, usize);
    let parts: Vec<crate::error::Result<Acc>> = (0..count.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let (mut m1, mut m2, mut off) = (MeanAccumulator::new(p * p), MeanAccumulator::new(p.pow(4)), 0);
            for _ in 0..CHUNK.min(count - c * CHUNK) {
                let v = sample_nw(n, p, &mut rng)?;
                if v.trace() != 1.0 {
                    off += 1;
                }
                let x = vec(v.as_matrix());
                m1.push(x.as_slice());
                m2.push((&x * x.transpose()).as_slice());
            }
            Ok((m1, m2, off))
        })
        .collect();
    let (mut m1, mut m2, mut off) = (MeanAccumulator::new(p * p), MeanAccumulator::new(p.pow(4)), 0);
    for part in parts {
        let (a, b, o) = lib(part)?;
        m1.merge(&a);
        m2.merge(&b);
        off += o;
    }
    ensure(off == 0, || format!("{off} draws with trace != 1"))?;
    let (want1, want2) = lib(nw_moments(n, p))?;
    let z1 = m1.finish().max_abs_z(want1.as_slice());
    let z2 = m2.finish().max_abs_z(want2.as_slice());
    ensure(z1 < 3.0, || format!("mean: max |z| = {z1:.2} >= 3"))?;
    ensure(z2 < 4.0, || format!("second moment: max |z| = {z2:.2} >= 4"))?;
    Ok(format!("trace exactly 1 in all {count} draws; mean max |z| {z1:.2}; second moment max |z| {z2:.2}"))
}

fn generator_coefficients(_: &VerifyConfig) -> Outcome {
    for (n, p) in [(10usize, 2usize), (12, 3), (20, 4), (9, 3)] {
        let c = coefficients(DensityGenerator::Gaussian, n, p);
        let q = (n - p) as f64;
        let exact = [
            (c.a, Some(n as f64)),
            (c.b, Some(1.0)),
            (c.c, Some(0.0)),
            (c.d, Some(1.0 / (q - 1.0))),
            (c.e, Some(1.0 / (q * (q - 1.0) * (q - 3.0)))),
            (c.f, Some(2.0 / (q * (q - 1.0) * (q - 1.0) * (q - 2.0) * (q - 3.0)))),
        ];
        for (i, (got, want)) in exact.into_iter().enumerate() {
            ensure(got == want, || format!("Gaussian coefficient {i} at (n, p) = ({n}, {p}): {got:?} != {want:?}"))?;
        }
    }
    let t = coefficients(DensityGenerator::T { nu: 6.0 }, 10, 2);
    for (name, got, want) in [("a", t.a, 15.0), ("b", t.b, 4.5), ("c", t.c, 2.25), ("d", t.d, 1.0 / 7.0)] {
        let got = got.ok_or_else(|| format!("t coefficient {name} missing"))?;
        ensure((got - want).abs() <= 1e-12 * want, || format!("t coefficient {name} = {got} != {want}"))?;
    }
    let gauss = coefficients(DensityGenerator::Gaussian, 12, 3);
    for gen in [
        DensityGenerator::Kotz { alpha: 1.0, beta: 1.0, r: 0.5 },
        DensityGenerator::GeneralizedGaussian { beta: 1.0 },
    ] {
        let c = coefficients(gen, 12, 3);
        for (got, want) in [(c.a, gauss.a), (c.b, gauss.b), (c.c, gauss.c), (c.d, gauss.d), (c.e, gauss.e), (c.f, gauss.f)] {
            let (g, w) = (got.ok_or("missing coefficient")?, want.ok_or("missing coefficient")?);
            ensure((g - w).abs() <= 1e-12 * w.abs().max(1.0), || format!("{gen}: {g} != {w}"))?;
        }
    }
    Ok("Gaussian sextet exact; t values 15, 4.5, 2.25, 1/7; Kotz and GG reduce to Gaussian".into())
}

fn fitting_power(cfg: &VerifyConfig) -> Outcome {
    let (n, p) = (100, 4);
    let mc = if cfg.quick { 5_000 } else { 10_000 };
    let sigma = random_spd(p, child_seed(cfg.seed, 900));

    let self_model = lib(EwParams::ew(n, sigma.clone(), DensityGenerator::T { nu: 20.0 }))?;
    let data = lib(sample_many(&self_model, 1000, child_seed(cfg.seed, 901), SamplerMethod::Bartlett))?;
    let mut cfg_fit = FitConfig::new(n, child_seed(cfg.seed, 902));
    cfg_fit.mc_count = mc;
    cfg_fit.nu = Some(20.0);
    let report = lib(fit_report(&BTreeMap::from([("self".to_string(), data)]), &cfg_fit))?;
    let pvals: Vec<f64> = report.results["self"].values().map(|r| r.t_wishart.p).collect();
    let good = pvals.iter().filter(|&&p| p > 0.01).count();
    ensure(good >= 6, || format!("self-fit: only {good}/7 statistics with p > 0.01 ({pvals:?})"))?;

    let heavy = lib(EwParams::ew(n, sigma, DensityGenerator::T { nu: 5.0 }))?;
    let data = lib(sample_many(&heavy, mc, child_seed(cfg.seed, 903), SamplerMethod::Bartlett))?;
    let mut cfg_fit = FitConfig::new(n, child_seed(cfg.seed, 904));
    cfg_fit.mc_count = mc;
    cfg_fit.nu = Some(5.0);
    cfg_fit.stats = vec![StatisticKind::Trace];
    let report = lib(fit_report(&BTreeMap::from([("heavy".to_string(), data)]), &cfg_fit))?;
    let r = &report.results["heavy"]["trace"];
    ensure(r.wishart.p < 0.01, || format!("cross-fit: Wishart trace p = {:.3} >= 0.01", r.wishart.p))?;
    Ok(format!(
        "self-fit {good}/7 with p > 0.01; cross-fit Wishart trace p = {:.1e}, t-Wishart p = {:.3}",
        r.wishart.p, r.t_wishart.p
    ))
}

fn existence_guards(_: &VerifyConfig) -> Outcome {
    let t4 = DensityGenerator::T { nu: 4.0 };
    match t4.modular_moment(8, 2) {
        Err(e @ Error::MomentDoesNotExist { .. }) => ensure(e.to_string().contains("nu>4"), || format!("unhelpful message: {e}"))?,
        other => return Err(format!("T(nu=4) m_2: expected an existence error, got {other:?}")),
    }
    let (n, p) = (4, 3);
    let iew = lib(EwParams::iew(n, SpdMatrix::identity(p), DensityGenerator::Gaussian))?;
    match iew_mean(&iew) {
        Err(e @ Error::MomentDoesNotExist { .. }) => ensure(e.to_string().contains("n>p+1"), || format!("unhelpful message: {e}"))?,
        other => return Err(format!("iew_mean at n = p + 1: expected an existence error, got {other:?}")),
    }
    match wishart_kron_moment(10, &SpdMatrix::identity(3), 6, &MemoryBudget::default()) {
        Err(Error::BudgetExceeded { required, budget }) => {
            ensure(required > u128::from(budget), || "budget error with required <= budget".into())?
        }
        other => return Err(format!("p = 3, k = 6: expected a budget error, got {:?}", other.map(|v| v.len()))),
    }
    lib(wishart_kron_moment(10, &SpdMatrix::identity(3), 4, &MemoryBudget::default()))?;
    Ok("T(nu=4) m_2, inverse mean at n = p + 1 and p = 3, k = 6 all rejected".into())
}

fn fit_artifacts(cfg: &VerifyConfig) -> crate::error::Result<(Vec<u8>, Vec<u8>)> {
    let params = EwParams::ew(8, random_spd(3, cfg.seed), DensityGenerator::T { nu: 7.0 })?;
    let draws = sample_many(&params, 600, cfg.seed, SamplerMethod::Bartlett)?;
    let mut dataset_bytes = Vec::new();
    write_dataset(&mut dataset_bytes, &draws, None)?;
    let mut fit = FitConfig::new(8, cfg.seed);
    fit.mc_count = 2_000;
    fit.nu = Some(7.0);
    let mut classes = BTreeMap::new();
    classes.insert("a".to_string(), draws[..300].to_vec());
    classes.insert("b".to_string(), draws[300..].to_vec());
    let report = fit_report(&classes, &fit)?;
    let mut report_bytes = serde_json::to_vec_pretty(&report_json(&report)).expect("json");
    for tables in report.curves.values() {
        for t in tables.values() {
            write_cdf_csv(&mut report_bytes, t)?;
        }
    }
    Ok((dataset_bytes, report_bytes))
}

fn determinism(cfg: &VerifyConfig) -> Outcome {
    let first = lib(fit_artifacts(cfg))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?;
    let second = lib(pool.install(|| fit_artifacts(cfg)))?;
    ensure(first.0 == second.0, || "sample output differs between runs".into())?;
    ensure(first.1 == second.1, || "fit output differs between runs".into())?;
    Ok(format!(
        "sample ({} bytes) and fit ({} bytes) outputs identical across runs and thread counts",
        first.0.len(),
        first.1.len()
    ))
}
