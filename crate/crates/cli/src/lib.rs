//! Command-line frontend: sampling, moments, fitting and the verification
//! suite.
//!
//! Exit codes: 0 success; 1 verification failure or runtime failure;
//! 2 bad flags or unreadable/ill-formed input; 3 parameter-domain error;
//! 4 a data record that is not an SPD matrix.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde_json::{json, Value};

use ellwishart::fitting::FitConfig;
use ellwishart::io::{cdf_file_name, group_by_label, read_dataset_file, report_json, write_cdf_csv, write_dataset};
use ellwishart::kronecker::{kron_moment, mc_kron_moment};
use ellwishart::operator::fault::with_corrupted_commutation;
use ellwishart::verify::{run_all, VerifyConfig};
use ellwishart::{
    fit_report, sample_many, DensityGenerator, Error, EwParams, MemoryBudget, SamplerMethod, SpdMatrix,
    StatisticKind, DEFAULT_BUDGET_BYTES,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DOMAIN: i32 = 3;
pub const EXIT_RECORD: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "ellwishart", version, about = "Elliptical Wishart sampling, moments and goodness of fit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw random matrices and write them in dataset format.
    Sample(SampleArgs),
    /// Closed-form moments, optionally cross-checked by Monte Carlo.
    Moments(MomentsArgs),
    /// Fit Wishart and t-Wishart models to a dataset and run KS tests.
    Fit(FitArgs),
    /// Run the acceptance suite.
    Verify(VerifyArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Dist {
    Wishart,
    TWishart,
    GgWishart,
    KotzWishart,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Bartlett,
    Naive,
}

#[derive(Args, Debug)]
pub struct DistArgs {
    #[arg(long, value_enum)]
    pub dist: Dist,
    /// Use the inverse law.
    #[arg(long)]
    pub inverse: bool,
    /// Degrees of freedom.
    #[arg(long)]
    pub n: usize,
    /// Matrix dimension.
    #[arg(long)]
    pub p: usize,
    /// Center: `identity` or a file holding one matrix in dataset format.
    #[arg(long, default_value = "identity")]
    pub sigma: String,
    #[arg(long, allow_negative_numbers = true)]
    pub nu: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    /// Kotz scale parameter R.
    #[arg(long, allow_negative_numbers = true)]
    pub bigr: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[command(flatten)]
    pub dist: DistArgs,
    #[arg(long)]
    pub count: usize,
    #[arg(long, env = "ELLWISHART_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "bartlett")]
    pub method: Method,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MomentsArgs {
    #[command(flatten)]
    pub dist: DistArgs,
    /// Highest Kronecker-moment order; every order from 1 up is reported.
    #[arg(long, default_value_t = 1)]
    pub order: usize,
    /// Monte Carlo sample count for a cross-check (at least 1000).
    #[arg(long)]
    pub mc: Option<usize>,
    #[arg(long, env = "ELLWISHART_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Memory budget for Kronecker-moment vectors.
    #[arg(long, default_value_t = DEFAULT_BUDGET_BYTES)]
    pub budget_bytes: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Matrix dimension p of each record.
    #[arg(long)]
    pub dim: usize,
    /// Degrees of freedom of the data.
    #[arg(long)]
    pub n: usize,
    /// Records start with a class label.
    #[arg(long)]
    pub labeled: bool,
    /// Per-class ν, e.g. `13=40,17=35`.
    #[arg(long)]
    pub nu_per_class: Option<String>,
    /// ν for classes not listed in `--nu-per-class`.
    #[arg(long, allow_negative_numbers = true)]
    pub nu: Option<f64>,
    /// Comma-separated statistics (default: all).
    #[arg(long)]
    pub stats: Option<String>,
    #[arg(long, default_value_t = 100_000)]
    pub mc_samples: usize,
    #[arg(long, env = "ELLWISHART_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Smaller Monte Carlo sizes.
    #[arg(long)]
    pub quick: bool,
    #[arg(long, env = "ELLWISHART_SEED", default_value_t = VerifyConfig::default().seed)]
    pub seed: u64,
    /// Test hook: corrupt the commutation index map.
    #[arg(long, hide = true)]
    pub corrupt_commutation: bool,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::usage(e.to_string())
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parse { .. } | Error::Io(_) | Error::Empty(_) => EXIT_USAGE,
        Error::InvalidRecord { .. } => EXIT_RECORD,
        Error::Convergence { .. } | Error::SingularDraw { .. } => EXIT_FAILURE,
        _ => EXIT_DOMAIN,
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match cli.command {
        Command::Sample(a) => run_sample(&a),
        Command::Moments(a) => run_moments(&a),
        Command::Fit(a) => run_fit(&a),
        Command::Verify(a) => Ok(run_verify(&a)),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dist_name(d: Dist) -> String {
    d.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default()
}

fn generator(d: &DistArgs) -> CliResult<DensityGenerator> {
    let need = |v: Option<f64>, flag: &str| v.ok_or_else(|| Failure::usage(format!("--dist {} requires --{flag}", dist_name(d.dist))));
    let given: Vec<&str> = [("nu", d.nu), ("beta", d.beta), ("alpha", d.alpha), ("bigr", d.bigr)]
        .iter()
        .filter(|(_, v)| v.is_some())
        .map(|(f, _)| *f)
        .collect();
    let allowed: &[&str] = match d.dist {
        Dist::Wishart => &[],
        Dist::TWishart => &["nu"],
        Dist::GgWishart => &["beta"],
        Dist::KotzWishart => &["alpha", "beta", "bigr"],
    };
    if let Some(extra) = given.iter().find(|f| !allowed.contains(f)) {
        return Err(Failure::usage(format!("--{extra} does not apply to this distribution")));
    }
    let gen = match d.dist {
        Dist::Wishart => DensityGenerator::Gaussian,
        Dist::TWishart => DensityGenerator::T { nu: need(d.nu, "nu")? },
        Dist::GgWishart => DensityGenerator::GeneralizedGaussian { beta: need(d.beta, "beta")? },
        Dist::KotzWishart => DensityGenerator::Kotz {
            alpha: need(d.alpha, "alpha")?,
            beta: need(d.beta, "beta")?,
            r: need(d.bigr, "bigr")?,
        },
    };
    gen.validate()?;
    Ok(gen)
}

fn center(d: &DistArgs) -> CliResult<SpdMatrix> {
    if d.p == 0 {
        return Err(Failure::usage("--p must be positive"));
    }
    if d.sigma == "identity" {
        return Ok(SpdMatrix::identity(d.p));
    }
    let records = read_dataset_file(Path::new(&d.sigma), d.p, false)?;
    match <[_; 1]>::try_from(records) {
        Ok([r]) => Ok(r.matrix),
        Err(v) => Err(Failure::usage(format!("--sigma file must hold exactly one matrix, found {}", v.len()))),
    }
}

fn params(d: &DistArgs) -> CliResult<EwParams> {
    let gen = generator(d)?;
    let sigma = center(d)?;
    Ok(EwParams::new(d.n, sigma, gen, d.inverse)?)
}

/// Names the violated condition, e.g. `t-: requires nu>2 for mean`.
pub fn describe(gen: DensityGenerator, e: &Error) -> String {
    match e {
        Error::MomentDoesNotExist { what, condition } => {
            format!("{}: requires {condition} for {what}", gen.family())
        }
        other => other.to_string(),
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))
}

pub fn run_sample(a: &SampleArgs) -> CliResult<i32> {
    let params = params(&a.dist)?;
    let method = match a.method {
        Method::Bartlett => SamplerMethod::Bartlett,
        Method::Naive => SamplerMethod::Naive,
    };
    let draws = sample_many(&params, a.count, a.seed, method)?;
    write_dataset(create(&a.out)?, &draws, None)?;

    println!("wrote {} matrices to {}", draws.len(), a.out.display());
    if !draws.is_empty() {
        let mean_trace = draws.iter().map(SpdMatrix::trace).sum::<f64>() / draws.len() as f64;
        println!("empirical mean trace: {mean_trace}");
    }
    match params.mean() {
        Ok(m) => println!("closed-form mean trace: {}", m.trace()),
        Err(e) => println!("closed-form mean trace: nonexistent ({})", describe(params.generator(), &e)),
    }
    Ok(EXIT_OK)
}

fn rows(m: &DMatrix<f64>) -> Value {
    json!((0..m.nrows()).map(|i| m.row(i).iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>())
}

fn quantity(gen: DensityGenerator, r: ellwishart::Result<Value>, computed: &mut usize) -> Value {
    match r {
        Ok(v) => {
            *computed += 1;
            json!({ "exists": true, "value": v })
        }
        Err(e) => json!({ "exists": false, "reason": describe(gen, &e) }),
    }
}

pub fn run_moments(a: &MomentsArgs) -> CliResult<i32> {
    if a.order == 0 {
        return Err(Failure::usage("--order must be at least 1"));
    }
    if matches!(a.mc, Some(n) if n < 1000) {
        return Err(Failure::usage("--mc must be at least 1000"));
    }
    let params = params(&a.dist)?;
    let gen = params.generator();
    let budget = MemoryBudget(a.budget_bytes);
    let mut computed = 0;

    let mean = quantity(gen, params.mean().map(|m| rows(&m)), &mut computed);
    let variance = quantity(gen, params.variance().map(|m| rows(&m)), &mut computed);
    let mut kron = Vec::new();
    let mut mc = Vec::new();
    for order in 1..=a.order {
        let closed = kron_moment(&params, order, &budget);
        if let (Some(samples), Ok(reference)) = (a.mc, &closed) {
            let seed = ellwishart::sampling::child_seed(a.seed, order as u64);
            let est = mc_kron_moment(&params, order, samples, seed, &budget)?;
            mc.push(json!({
                "order": order,
                "samples": samples,
                "seed": seed,
                "estimate": est.mean,
                "standard_errors": est.standard_errors,
                "max_abs_z": est.max_abs_z(reference),
            }));
        }
        let mut entry = quantity(gen, closed.map(|v| json!(v)), &mut computed);
        entry["order"] = json!(order);
        kron.push(entry);
    }

    let mut out = json!({
        "schema_version": ellwishart::io::REPORT_SCHEMA_VERSION,
        "version": env!("CARGO_PKG_VERSION"),
        "distribution": {
            "dist": dist_name(a.dist.dist),
            "inverse": params.is_inverse(),
            "n": params.n(),
            "p": params.p(),
            "generator": gen,
            "sigma": rows(params.sigma().as_matrix()),
        },
        "coefficients": params.coefficients(),
        "mean": mean,
        "variance": variance,
        "kron_moments": kron,
    });
    if a.mc.is_some() {
        out["mc"] = json!(mc);
    }
    let mut w = create(&a.out)?;
    serde_json::to_writer_pretty(&mut w, &out).map_err(|e| Failure::usage(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;

    println!("computed {computed} of {} quantities; wrote {}", 2 + a.order, a.out.display());
    if computed == 0 {
        eprintln!("error: no requested moment exists for these parameters");
        return Ok(EXIT_DOMAIN);
    }
    Ok(EXIT_OK)
}

fn parse_nu_list(s: &str) -> CliResult<BTreeMap<String, f64>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|item| {
            let (label, nu) = item
                .split_once('=')
                .ok_or_else(|| Failure::usage(format!("expected LABEL=NU in --nu-per-class, got '{item}'")))?;
            let nu = nu
                .trim()
                .parse::<f64>()
                .map_err(|_| Failure::usage(format!("'{nu}' is not a number in --nu-per-class")))?;
            Ok((label.trim().to_string(), nu))
        })
        .collect()
}

fn parse_stats(s: &str) -> CliResult<Vec<StatisticKind>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.parse::<StatisticKind>().map_err(|e| Failure::usage(e.to_string())))
        .collect()
}

pub fn run_fit(a: &FitArgs) -> CliResult<i32> {
    let mut cfg = FitConfig::new(a.n, a.seed);
    if let Some(list) = &a.nu_per_class {
        cfg.nu_per_class = parse_nu_list(list)?;
    }
    cfg.nu = a.nu;
    if let Some(stats) = &a.stats {
        cfg.stats = parse_stats(stats)?;
        if cfg.stats.is_empty() {
            return Err(Failure::usage("--stats lists no statistic"));
        }
    }
    cfg.mc_count = a.mc_samples;
    if a.dim == 0 {
        return Err(Failure::usage("--dim must be positive"));
    }

    let records = read_dataset_file(&a.data, a.dim, a.labeled)?;
    if records.is_empty() {
        return Err(Failure::usage(format!("{} holds no records", a.data.display())));
    }
    let report = fit_report(&group_by_label(records), &cfg)?;

    std::fs::create_dir_all(&a.out_dir)?;
    for (label, tables) in &report.curves {
        for (stat, table) in tables {
            write_cdf_csv(create(&a.out_dir.join(cdf_file_name(stat, label)))?, table)?;
        }
    }
    let mut w = create(&a.out_dir.join("report.json"))?;
    serde_json::to_writer_pretty(&mut w, &report_json(&report)).map_err(|e| Failure::usage(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;

    for (label, stats) in &report.results {
        for (stat, r) in stats {
            println!(
                "class {label} {stat}: wishart D={:.4} p={:.3e}; t-wishart D={:.4} p={:.3e}",
                r.wishart.d, r.wishart.p, r.t_wishart.d, r.t_wishart.p
            );
        }
    }
    Ok(EXIT_OK)
}

pub fn run_verify(a: &VerifyArgs) -> i32 {
    let cfg = VerifyConfig {
        quick: a.quick,
        seed: a.seed,
    };
    let go = || run_all(&cfg, |r| println!("{r}"));
    let results = if a.corrupt_commutation {
        with_corrupted_commutation(go)
    } else {
        go()
    };
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        EXIT_OK
    } else {
        EXIT_FAILURE
    }
}
