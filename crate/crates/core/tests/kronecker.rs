mod common;

use common::{random_spd, rel_max};
use ellwishart::kronecker::{build_a, build_m, reference, OperatorFamily};
use ellwishart::{
    ew_kron_moment, iew_kron_moment, kron, mc_kron_moment, rearrange_second_moment, unvec, wishart_kron_moment,
    DensityGenerator, Error, EwParams, MemoryBudget, SpdMatrix,
};
use nalgebra::DMatrix;

fn budget() -> MemoryBudget {
    MemoryBudget::default()
}

#[test]
fn gaussian_scaling_is_exactly_one() {
    let sigma = random_spd(2, 1);
    let params = EwParams::wishart(6, sigma.clone()).unwrap();
    let a = ew_kron_moment(&params, 3, &budget()).unwrap();
    let b = wishart_kron_moment(6, &sigma, 3, &budget()).unwrap();
    assert!(rel_max(&a, &b) < 1e-12);
}

#[test]
fn t_order_two_matches_variance_plus_mean_outer() {
    let params = EwParams::ew(8, SpdMatrix::identity(2), DensityGenerator::T { nu: 10.0 }).unwrap();
    let second = params.second_moment().unwrap();
    let want = rearrange_second_moment(&second).unwrap();
    let got = ew_kron_moment(&params, 2, &budget()).unwrap();
    assert!(rel_max(&got, want.as_slice()) < 1e-12);

    // ratio to the Gaussian value is the modular scaling factor
    let gauss = wishart_kron_moment(8, &SpdMatrix::identity(2), 2, &budget()).unwrap();
    let nu: f64 = 10.0;
    let factor = nu * nu / ((nu - 2.0) * (nu - 4.0));
    for (g, t) in gauss.iter().zip(&got) {
        assert!((g * factor - t).abs() <= 1e-12 * t.abs().max(1.0));
    }
}

#[test]
fn monte_carlo_matches_t_order_two() {
    let params = EwParams::ew(10, random_spd(2, 2), DensityGenerator::T { nu: 12.0 }).unwrap();
    let closed = ew_kron_moment(&params, 2, &budget()).unwrap();
    let est = mc_kron_moment(&params, 2, 1_000_000, 3, &budget()).unwrap();
    let z = est.max_abs_z(&closed);
    assert!(z < 3.0, "max |z| = {z}");
}

#[test]
fn monte_carlo_matches_inverse_order_two() {
    let params = EwParams::iew(12, random_spd(2, 4), DensityGenerator::Gaussian).unwrap();
    let closed = iew_kron_moment(&params, 2, &budget()).unwrap();
    let est = mc_kron_moment(&params, 2, 1_000_000, 5, &budget()).unwrap();
    let scale = closed.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (m, c) in est.mean.iter().zip(&closed) {
        assert!((m - c).abs() < 0.05 * c.abs().max(0.1 * scale), "{m} vs {c}");
    }
}

#[test]
fn monte_carlo_standard_errors_scale() {
    let params = EwParams::wishart(5, SpdMatrix::identity(2)).unwrap();
    let small = mc_kron_moment(&params, 1, 10_000, 6, &budget()).unwrap();
    let large = mc_kron_moment(&params, 1, 40_000, 7, &budget()).unwrap();
    let ratio = small.standard_errors[0] / large.standard_errors[0];
    assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
    assert!(small.max_abs_z(&[5.0, 0.0, 0.0, 5.0]) < 3.0);
    assert!(mc_kron_moment(&params, 1, 999, 1, &budget()).is_err());
}

#[test]
fn moment_is_symmetric_in_each_factor() {
    // S is symmetric, so E[⊗^k S] is unchanged by transposing any one factor
    let p = 2;
    let sigma = random_spd(p, 8);
    for k in 2..=3 {
        let v = wishart_kron_moment(7, &sigma, k, &budget()).unwrap();
        let d = p.pow(k as u32);
        let m = unvec(&v, d, d).unwrap();
        let digits = |mut x: usize| -> Vec<usize> {
            let mut out = vec![0; k];
            for slot in out.iter_mut().rev() {
                *slot = x % p;
                x /= p;
            }
            out
        };
        let number = |ds: &[usize]| ds.iter().fold(0, |acc, &x| acc * p + x);
        for r in 0..d {
            for c in 0..d {
                for t in 0..k {
                    let (mut rd, mut cd) = (digits(r), digits(c));
                    std::mem::swap(&mut rd[t], &mut cd[t]);
                    let other = m[(number(&rd), number(&cd))];
                    assert!((m[(r, c)] - other).abs() <= 1e-12 * m[(r, c)].abs().max(1.0));
                }
            }
        }
    }
}

/// Checks `E[⊗^{k+1} S] = n E[⊗^k S] ⊗ Σ - 2 ∂E[⊗^k S]/∂Σ⁻¹` with central
/// differences, derivatives of entry `(m, j)` along `(Σ⁻¹)_{kl}` stored at
/// `(m p + k, j p + l)`.
#[test]
fn recursion_matches_finite_differences() {
    let (n, p, eps) = (5, 2, 1e-5);
    let sigma = random_spd(p, 9);
    let lambda = sigma.inverse().into_matrix();
    for k in 1..=2 {
        let d = p.pow(k as u32);
        let moment = |l: &DMatrix<f64>| -> DMatrix<f64> {
            let s = SpdMatrix::new(l.clone()).unwrap().inverse();
            unvec(&wishart_kron_moment(n, &s, k, &MemoryBudget::unlimited()).unwrap(), d, d).unwrap()
        };
        let f = moment(&lambda);
        let mut deriv = DMatrix::zeros(d * p, d * p);
        for a in 0..p {
            for b in 0..p {
                let mut e = DMatrix::zeros(p, p);
                e[(a, b)] += 0.5;
                e[(b, a)] += 0.5;
                let df = (moment(&(&lambda + &e * eps)) - moment(&(&lambda - &e * eps))) / (2.0 * eps);
                for m in 0..d {
                    for j in 0..d {
                        deriv[(m * p + a, j * p + b)] = df[(m, j)];
                    }
                }
            }
        }
        let predicted = kron(&f, sigma.as_matrix()) * n as f64 - deriv * 2.0;
        let next = wishart_kron_moment(n, &sigma, k + 1, &MemoryBudget::unlimited()).unwrap();
        let err = rel_max(predicted.as_slice(), &next);
        assert!(err < 1e-4, "k = {k}: relative error {err}");
    }
}

#[test]
fn order_two_identity_corner() {
    let v = wishart_kron_moment(5, &SpdMatrix::identity(2), 2, &budget()).unwrap();
    assert!((v[0] - 35.0).abs() < 1e-12);
    let v1 = wishart_kron_moment(5, &SpdMatrix::identity(2), 1, &budget()).unwrap();
    assert_eq!(v1, vec![5.0, 0.0, 0.0, 5.0]);
}

#[test]
fn rearrangement_maps_closed_forms() {
    let (n, p) = (5, 2);
    let sigma = SpdMatrix::identity(p);
    let params = EwParams::wishart(n, sigma.clone()).unwrap();
    let vec_form = params.second_moment().unwrap();
    let kron_form = reference::wishart_order2(n, &sigma);
    let mapped = rearrange_second_moment(&vec_form).unwrap();
    assert!((mapped - &kron_form).norm() < 1e-12);
    assert!((rearrange_second_moment(&kron_form).unwrap() - vec_form).norm() < 1e-12);
    let one = DMatrix::from_element(1, 1, 3.0);
    assert_eq!(rearrange_second_moment(&one).unwrap(), one);
}

#[test]
fn inverse_operator_is_symmetric() {
    let a = build_a(2, 1, 9, &MemoryBudget::unlimited()).unwrap().to_dense().unwrap();
    assert_eq!(a, a.transpose());
    assert_eq!(a, reference::a(2, 1, 9));
    let err = build_a(2, 2, 6, &MemoryBudget::unlimited()).unwrap_err();
    assert!(matches!(err, Error::MomentDoesNotExist { .. }), "{err}");
}

#[test]
fn operator_family_reuses_operators() {
    let family = OperatorFamily::new(2, 6, 3, &budget()).unwrap();
    assert_eq!(family.order(), 3);
    let sigma = random_spd(2, 10);
    for k in 1..=3 {
        let a = family.wishart_moment(&sigma, k).unwrap();
        let b = wishart_kron_moment(6, &sigma, k, &budget()).unwrap();
        assert!(rel_max(&a, &b) < 1e-14);
    }
    assert_eq!(family.m(1), &build_m(2, 1, 6, &budget()).unwrap());
}

#[test]
fn budget_envelope() {
    let i3 = SpdMatrix::identity(3);
    assert_eq!(wishart_kron_moment(10, &i3, 4, &budget()).unwrap().len(), 6561);
    assert!(matches!(wishart_kron_moment(10, &i3, 5, &budget()), Err(Error::BudgetExceeded { .. })));
    assert!(wishart_kron_moment(10, &i3, 5, &MemoryBudget(3u64.pow(10) * 8)).is_ok());
}

#[test]
fn existence_checked_before_work() {
    let t = EwParams::ew(6, SpdMatrix::identity(2), DensityGenerator::T { nu: 5.0 }).unwrap();
    assert!(ew_kron_moment(&t, 2, &budget()).is_ok());
    assert!(matches!(ew_kron_moment(&t, 3, &budget()), Err(Error::MomentDoesNotExist { .. })));
    let inv = EwParams::iew(5, SpdMatrix::identity(2), DensityGenerator::Gaussian).unwrap();
    assert!(iew_kron_moment(&inv, 1, &budget()).is_ok());
    assert!(matches!(iew_kron_moment(&inv, 2, &budget()), Err(Error::MomentDoesNotExist { .. })));
}
