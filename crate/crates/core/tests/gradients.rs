use std::time::Instant;

use deepcs::gradcheck::{run_suite, MODEL_TOLERANCE, OP_TOLERANCE};

#[test]
fn every_backward_pass_matches_finite_differences() {
    let start = Instant::now();
    let checks = run_suite(7).unwrap();
    let failures: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed())
        .map(|c| format!("{}: {:e} > {:e}", c.name, c.max_rel_error, c.tolerance))
        .collect();
    assert!(failures.is_empty(), "{failures:#?}");
    let models: Vec<_> = checks.iter().filter(|c| c.tolerance == MODEL_TOLERANCE).collect();
    assert_eq!(models.len(), 2);
    assert!(models.iter().all(|c| c.probes >= 50));
    assert!(checks.iter().filter(|c| c.tolerance == OP_TOLERANCE).count() >= 15);
    assert!(start.elapsed().as_secs() < 60);
}
