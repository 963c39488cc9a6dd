use std::fs;
use std::io::BufReader;
use std::path::Path;
use std::process::{Command, Output};

use ellwishart::io::{read_cdf_csv, read_dataset_file, CDF_HEADER};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ellwishart"));
    c.env_remove("ELLWISHART_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

fn sample(out: &str, extra: &[&str]) -> Output {
    let mut args = vec!["sample", "--dist", "t-wishart", "--nu", "6", "--n", "10", "--p", "2", "--count", "500", "--out", out];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn sample_is_deterministic_per_seed() {
    let dir = TempDir::new().unwrap();
    let (a, b, c) = (path(&dir, "a"), path(&dir, "b"), path(&dir, "c"));
    assert_eq!(code(&sample(&a, &["--seed", "7"])), 0);
    assert_eq!(code(&sample(&b, &["--seed", "7"])), 0);
    assert_eq!(code(&sample(&c, &["--seed", "8"])), 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn seed_from_environment_and_flag_override() {
    let dir = TempDir::new().unwrap();
    let (a, b, c) = (path(&dir, "a"), path(&dir, "b"), path(&dir, "c"));
    assert_eq!(code(&sample(&a, &["--seed", "11"])), 0);
    let env_run = |out: &str, extra: &[&str]| {
        let mut args = vec!["sample", "--dist", "t-wishart", "--nu", "6", "--n", "10", "--p", "2", "--count", "500", "--out", out];
        args.extend_from_slice(extra);
        bin().env("ELLWISHART_SEED", "11").args(&args).output().unwrap()
    };
    assert_eq!(code(&env_run(&b, &[])), 0);
    assert_eq!(code(&env_run(&c, &["--seed", "12"])), 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn sample_mean_trace_matches_closed_form() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "w");
    let o = run(&["sample", "--dist", "wishart", "--n", "10", "--p", "4", "--count", "20000", "--seed", "3", "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("closed-form mean trace: 40"), "{}", stdout(&o));
    let records = read_dataset_file(Path::new(&out), 4, false).unwrap();
    assert_eq!(records.len(), 20000);
    let mean = records.iter().map(|r| r.matrix.trace()).sum::<f64>() / records.len() as f64;
    assert!((mean - 40.0).abs() < 0.4, "mean trace {mean}");
}

#[test]
fn nonexistent_mean_is_reported() {
    let dir = TempDir::new().unwrap();
    let o = run(&["sample", "--dist", "t-wishart", "--nu", "2", "--n", "10", "--p", "2", "--count", "50", "--out", &path(&dir, "x")]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("nonexistent (t-: requires nu>2 for mean)"), "{}", stdout(&o));
}

#[test]
fn sigma_file_sets_the_center() {
    let dir = TempDir::new().unwrap();
    let sigma = path(&dir, "sigma");
    fs::write(&sigma, "# center\n2,0.5,0.5,1\n").unwrap();
    let o = run(&["sample", "--dist", "wishart", "--n", "5", "--p", "2", "--sigma", &sigma, "--count", "10", "--out", &path(&dir, "s")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("closed-form mean trace: 15"), "{}", stdout(&o));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "o");
    // bad or missing flags
    assert_eq!(code(&run(&["sample", "--dist", "cauchy", "--n", "5", "--p", "2", "--count", "1", "--out", &out])), 2);
    assert_eq!(code(&run(&["sample", "--dist", "t-wishart", "--n", "5", "--p", "2", "--count", "1", "--out", &out])), 2);
    assert_eq!(code(&run(&["sample", "--dist", "wishart", "--nu", "3", "--n", "5", "--p", "2", "--count", "1", "--out", &out])), 2);
    assert_eq!(code(&run(&["fit", "--data", &out, "--dim", "2", "--n", "5", "--out-dir", &out])), 2);
    // parameter domain
    assert_eq!(code(&run(&["sample", "--dist", "t-wishart", "--nu", "-1", "--n", "5", "--p", "2", "--count", "1", "--out", &out])), 3);
    assert_eq!(code(&run(&["sample", "--dist", "wishart", "--n", "1", "--p", "3", "--count", "1", "--out", &out])), 3);
    assert_eq!(code(&run(&["sample", "--dist", "gg-wishart", "--beta", "0", "--n", "3", "--p", "3", "--count", "1", "--out", &out])), 3);
    // non-SPD record
    let data = path(&dir, "bad");
    fs::write(&data, "1,0,0,1\n2,0,0,2\n1,2,2,1\n").unwrap();
    let o = run(&["fit", "--data", &data, "--dim", "2", "--n", "5", "--nu", "10", "--out-dir", &path(&dir, "fit")]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("record 2"), "{}", stderr(&o));
    // malformed record
    fs::write(&data, "1,0,0\n").unwrap();
    assert_eq!(code(&run(&["fit", "--data", &data, "--dim", "2", "--n", "5", "--nu", "10", "--out-dir", &out])), 2);
}

#[test]
fn fit_requires_dim() {
    let o = run(&["fit", "--data", "x", "--n", "5", "--out-dir", "y"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--dim"));
    assert!(stderr(&o).contains("Usage"));
}

fn json(path: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn moments_report() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "m.json");
    let o = run(&["moments", "--dist", "t-wishart", "--nu", "6", "--n", "10", "--p", "2", "--order", "3", "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&out);
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["distribution"]["dist"], "t-wishart");
    for (key, want) in [("a", 15.0), ("b", 4.5), ("c", 2.25)] {
        assert!((v["coefficients"][key].as_f64().unwrap() - want).abs() < 1e-12, "{key}");
    }
    let mean = &v["mean"]["value"];
    assert!((mean[0][0].as_f64().unwrap() - 15.0).abs() < 1e-12);
    assert_eq!(mean[0][1].as_f64().unwrap(), 0.0);
    assert_eq!(v["variance"]["exists"], true);
    let kron = v["kron_moments"].as_array().unwrap();
    assert_eq!(kron.len(), 3);
    assert_eq!(kron[1]["exists"], true);
    assert_eq!(kron[2]["exists"], false);
    assert!(kron[2]["reason"].as_str().unwrap().starts_with("t-: requires nu>6 for "), "{}", kron[2]["reason"]);
}

#[test]
fn moments_monte_carlo_agrees() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "m.json");
    let o = run(&["moments", "--dist", "wishart", "--n", "6", "--p", "2", "--order", "2", "--mc", "100000", "--seed", "5", "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mc = json(&out)["mc"].as_array().unwrap().clone();
    assert_eq!(mc.len(), 2);
    for m in mc {
        let z = m["max_abs_z"].as_f64().unwrap();
        assert!(z < 4.0, "order {}: max |z| = {z}", m["order"]);
    }
    assert_eq!(code(&run(&["moments", "--dist", "wishart", "--n", "6", "--p", "2", "--mc", "10", "--out", &out])), 2);
}

#[test]
fn moments_with_nothing_computable() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "m.json");
    let o = run(&["moments", "--dist", "t-wishart", "--nu", "1", "--n", "6", "--p", "2", "--order", "2", "--out", &out]);
    assert_eq!(code(&o), 3);
    assert_eq!(json(&out)["mean"]["exists"], false);
}

#[test]
fn moments_budget_flag() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "m.json");
    let o = run(&["moments", "--dist", "wishart", "--n", "10", "--p", "3", "--order", "5", "--out", &out]);
    assert_eq!(code(&o), 0);
    let v = json(&out);
    assert_eq!(v["kron_moments"][3]["exists"], true);
    assert_eq!(v["kron_moments"][4]["exists"], false);
    let o = run(&["moments", "--dist", "wishart", "--n", "10", "--p", "3", "--order", "5", "--budget-bytes", "472392", "--out", &out]);
    assert_eq!(code(&o), 0);
    assert_eq!(json(&out)["kron_moments"][4]["exists"], true);
}

fn labeled_dataset(dir: &TempDir) -> String {
    let a = path(dir, "a");
    let b = path(dir, "b");
    assert_eq!(code(&run(&["sample", "--dist", "t-wishart", "--nu", "40", "--n", "20", "--p", "3", "--count", "300", "--seed", "1", "--out", &a])), 0);
    assert_eq!(code(&run(&["sample", "--dist", "t-wishart", "--nu", "23", "--n", "20", "--p", "3", "--count", "200", "--seed", "2", "--out", &b])), 0);
    let mut text = String::new();
    for (label, file) in [("13Hz", &a), ("resting", &b)] {
        for line in fs::read_to_string(file).unwrap().lines().filter(|l| !l.starts_with('#')) {
            text.push_str(&format!("{label},{line}\n"));
        }
    }
    let data = path(dir, "data.csv");
    fs::write(&data, text).unwrap();
    data
}

#[test]
fn fit_writes_curves_and_report() {
    let dir = TempDir::new().unwrap();
    let data = labeled_dataset(&dir);
    let out = path(&dir, "out");
    let args = ["fit", "--data", &data, "--dim", "3", "--n", "20", "--labeled", "--stats", "trace,neg_log10_det", "--mc-samples", "5000", "--seed", "9", "--out-dir", &out];
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let report = json(&format!("{out}/report.json"));
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["classes"]["13Hz"]["nu"], 40.0);
    assert_eq!(report["classes"]["resting"]["nu"], 23.0);
    for label in ["13Hz", "resting"] {
        for stat in ["trace", "neg_log10_det"] {
            let p = report["results"][label][stat]["t_wishart"]["p"].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&p));
            let csv = format!("{out}/cdf_{stat}_class_{label}.csv");
            let text = fs::read_to_string(&csv).unwrap();
            assert_eq!(text.lines().next().unwrap(), CDF_HEADER);
            let table = read_cdf_csv(BufReader::new(text.as_bytes())).unwrap();
            assert_eq!(table.x.len(), 512);
        }
    }

    let again = path(&dir, "again");
    let mut args2 = args.to_vec();
    *args2.last_mut().unwrap() = &again;
    assert_eq!(code(&run(&args2)), 0);
    for entry in fs::read_dir(&out).unwrap() {
        let name = entry.unwrap().file_name();
        let a = fs::read(Path::new(&out).join(&name)).unwrap();
        let b = fs::read(Path::new(&again).join(&name)).unwrap();
        assert_eq!(a, b, "{name:?} differs between runs");
    }
}

#[test]
fn fit_rejects_unknown_statistic_and_class() {
    let dir = TempDir::new().unwrap();
    let data = path(&dir, "d");
    fs::write(&data, "x,1,0,0,1\nx,2,0,0,2\n").unwrap();
    let base = ["fit", "--data", &data, "--dim", "2", "--n", "5", "--labeled", "--mc-samples", "1000"];
    let with = |extra: &[&str]| {
        let mut a = base.to_vec();
        a.extend_from_slice(extra);
        a.extend_from_slice(&["--out-dir", dir.path().to_str().unwrap()]);
        code(&run(&a))
    };
    assert_eq!(with(&["--nu", "5", "--stats", "bogus"]), 2);
    assert_eq!(with(&["--nu-per-class", "x:5"]), 2);
    assert_eq!(with(&[]), 3);
    assert_eq!(with(&["--nu-per-class", "x=5"]), 0);
}

#[test]
fn verify_detects_corrupted_commutation() {
    let o = run(&["verify", "--quick", "--corrupt-commutation"]);
    assert_eq!(code(&o), 1);
    let out = stdout(&o);
    assert!(out.lines().any(|l| l.starts_with("FAIL [0]")), "{out}");
}

#[test]
fn verify_passes() {
    let o = run(&["verify", "--quick"]);
    let out = stdout(&o);
    assert_eq!(code(&o), 0, "{out}");
    assert!(out.lines().filter(|l| l.starts_with("PASS")).count() >= 12, "{out}");
}
