use ellwishart::operator::fault::with_corrupted_commutation;
use ellwishart::verify::{run_check, VerifyConfig, CHECKS};

#[test]
fn corrupted_commutation_fails_operator_check() {
    let (id, name, f) = CHECKS[0];
    let cfg = VerifyConfig::default();
    assert!(run_check(id, name, f, &cfg).passed);
    let broken = with_corrupted_commutation(|| run_check(id, name, f, &cfg));
    assert!(!broken.passed);
    assert!(broken.to_string().starts_with("FAIL [0] operator equivalence"));
}
