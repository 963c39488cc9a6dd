mod common;

use std::collections::BTreeMap;

use common::{random_spd, rel_frob};
use ellwishart::fitting::{select_nu, FitConfig};
use ellwishart::{
    fit_report, mle_t_wishart, mle_wishart, sample_many, DensityGenerator, EwParams, SamplerMethod, SpdMatrix,
    StatisticKind,
};
use nalgebra::DMatrix;

fn t_data(nu: f64, n: usize, sigma: &SpdMatrix, count: usize, seed: u64) -> Vec<SpdMatrix> {
    let params = EwParams::ew(n, sigma.clone(), DensityGenerator::T { nu }).unwrap();
    sample_many(&params, count, seed, SamplerMethod::Bartlett).unwrap()
}

#[test]
fn wishart_mle_is_consistent() {
    let sigma = random_spd(3, 1);
    let params = EwParams::wishart(20, sigma.clone()).unwrap();
    let data = sample_many(&params, 10_000, 2, SamplerMethod::Bartlett).unwrap();
    let est = mle_wishart(&data, 20).unwrap();
    assert!(rel_frob(est.as_matrix(), sigma.as_matrix()) < 0.03);
}

#[test]
fn t_wishart_mle_is_consistent() {
    let sigma = random_spd(3, 3);
    let data = t_data(10.0, 50, &sigma, 2000, 4);
    let fit = mle_t_wishart(&data, 50, 10.0, 1e-10, 10_000).unwrap();
    assert!(rel_frob(fit.sigma.as_matrix(), sigma.as_matrix()) < 0.05);
}

#[test]
fn t_wishart_likelihood_never_decreases() {
    for (i, (nu, n, p)) in [(3.0, 5, 2), (10.0, 50, 3), (40.0, 8, 4)].into_iter().enumerate() {
        let sigma = random_spd(p, 10 + i as u64);
        let data = t_data(nu, n, &sigma, 300, 20 + i as u64);
        let fit = mle_t_wishart(&data, n, nu, 1e-10, 10_000).unwrap();
        assert!(fit.log_likelihood.len() >= 2);
        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "log-likelihood decreased: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn log_likelihood_matches_density_sum() {
    let sigma = random_spd(2, 5);
    let (nu, n) = (6.0, 7);
    let data = t_data(nu, n, &sigma, 50, 6);
    let fit = mle_t_wishart(&data, n, nu, 1e-12, 10_000).unwrap();
    let params = EwParams::ew(n, fit.sigma.clone(), DensityGenerator::T { nu }).unwrap();
    let direct: f64 = data.iter().map(|s| params.log_pdf(s).unwrap()).sum();
    let last = *fit.log_likelihood.last().unwrap();
    assert!((direct - last).abs() < 1e-9 * direct.abs());
}

#[test]
fn t_wishart_fixed_point_holds() {
    let sigma = random_spd(3, 7);
    let (nu, n, tol) = (8.0, 12, 1e-9);
    let data = t_data(nu, n, &sigma, 500, 8);
    let fit = mle_t_wishart(&data, n, nu, tol, 10_000).unwrap();
    let s = &fit.sigma;
    let np = (n * 3) as f64;
    let mut next = DMatrix::zeros(3, 3);
    for x in &data {
        next += x.as_matrix() * ((nu + np) / (nu + s.trace_inv_mul(x.as_matrix())));
    }
    next /= (n * data.len()) as f64;
    assert!(rel_frob(&next, s.as_matrix()) < 10.0 * tol);
}

#[test]
fn single_sample_scalar_fixed_point() {
    // with one sample Σ = w S / n, and w = (ν + np)/(ν + n p / w) forces w = 1
    let s = random_spd(3, 9);
    let fit = mle_t_wishart(&[s.clone()], 5, 4.0, 1e-13, 10_000).unwrap();
    assert!(rel_frob(fit.sigma.as_matrix(), &(s.as_matrix() / 5.0)) < 1e-10);
}

#[test]
fn report_structure() {
    let sigma = random_spd(2, 11);
    let mut data = BTreeMap::new();
    data.insert("13".to_string(), t_data(40.0, 6, &sigma, 120, 12));
    data.insert("resting".to_string(), t_data(23.0, 6, &sigma, 80, 13));
    let mut cfg = FitConfig::new(6, 14);
    cfg.mc_count = 2000;
    cfg.stats = vec![StatisticKind::Trace, StatisticKind::NegLog10Det];
    let report = fit_report(&data, &cfg).unwrap();
    assert_eq!(report.classes["13"].nu, 40.0);
    assert_eq!(report.classes["resting"].nu, 23.0);
    assert_eq!(report.classes["13"].count, 120);
    assert_ne!(report.classes["13"].seed, report.classes["resting"].seed);
    for (label, stats) in &report.results {
        assert_eq!(stats.len(), 2);
        for (stat, r) in stats {
            for ks in [r.wishart, r.t_wishart] {
                assert!((0.0..=1.0).contains(&ks.d) && (0.0..=1.0).contains(&ks.p));
            }
            let t = &report.curves[label][stat];
            assert_eq!(t.x.len(), 512);
            assert!(t.x.windows(2).all(|w| w[0] <= w[1]));
            for col in [&t.data_cdf, &t.wishart_cdf, &t.t_wishart_cdf] {
                assert!(col.windows(2).all(|w| w[0] <= w[1]));
                assert_eq!(*col.last().unwrap(), 1.0);
            }
        }
    }
    let json = serde_json::to_value(&report).unwrap();
    assert!(json["results"]["13"]["trace"]["wishart"]["D"].is_number());
    assert!(json.get("curves").is_none());
}

#[test]
fn unknown_class_needs_nu() {
    let mut data = BTreeMap::new();
    data.insert("x".to_string(), vec![SpdMatrix::identity(2); 3]);
    let cfg = FitConfig::new(4, 1);
    assert!(fit_report(&data, &cfg).is_err());
}

#[test]
fn nu_selection_prefers_heavy_tails_on_heavy_data() {
    let sigma = random_spd(3, 15);
    let data = t_data(4.0, 30, &sigma, 1500, 16);
    let (best, pvals) = select_nu(&data, 30, &[4.0, 1000.0], 5000, 17).unwrap();
    assert_eq!(pvals.len(), 2);
    assert_eq!(best, 4.0, "p-values {pvals:?}");
}
