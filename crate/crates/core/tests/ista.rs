use deepcs::ista::{objective, run_ista, IstaConfig};
use deepcs::{SamplingOperator64, Tensor64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn objective_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for case in 0..20 {
        let ratio = [0.1, 0.25, 0.5, 0.75][case % 4];
        let op = SamplingOperator64::gaussian(8, ratio, 100 + case as u64).unwrap();
        let x = Tensor64::rand_uniform(vec![1, 32, 32], 0.0, 1.0, &mut rng);
        let y = op.measure(&x).unwrap();
        let lambda = rng.gen_range(1e-4..1e-2);
        let cfg = IstaConfig {
            tol: 0.0,
            ..IstaConfig::for_operator(&op, lambda)
        };
        let res = run_ista(&y, &op, &cfg).unwrap();
        assert_eq!(res.trace.len(), 200, "case {case} stopped early");
        let start = objective(&op.init_transpose(&y).unwrap(), &y, &op, lambda).unwrap();
        let mut prev = start;
        for (it, &f) in res.trace.iter().enumerate() {
            assert!(f <= prev * (1.0 + 1e-12), "case {case}: objective rose at iteration {} ({prev} -> {f})", it + 1);
            prev = f;
        }
        assert!(prev < start);
    }
}

#[test]
fn full_ratio_orthonormal_recovers_in_one_step() {
    let op = SamplingOperator64::gaussian(8, 1.0, 3).unwrap().orthonormalized().unwrap();
    let x = Tensor64::rand_uniform(vec![1, 24, 16], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(8));
    let y = op.measure(&x).unwrap();
    let cfg = IstaConfig {
        rho: 1.0,
        lambda: 0.0,
        max_iters: 1,
        tol: 0.0,
    };
    let res = run_ista(&y, &op, &cfg).unwrap();
    assert!(res.image.max_abs_diff(&x).unwrap() <= 1e-10);
}

#[test]
fn oversized_step_reports_divergence() {
    let op = SamplingOperator64::gaussian(8, 0.5, 3).unwrap();
    let x = Tensor64::rand_uniform(vec![1, 16, 16], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    let y = op.measure(&x).unwrap();
    let l = op.lipschitz_estimate(50);
    let cfg = IstaConfig {
        rho: 5.0 / l,
        lambda: 1e-4,
        max_iters: 500,
        tol: 0.0,
    };
    let err = run_ista(&y, &op, &cfg).unwrap_err();
    assert!(err.is_numeric(), "{err}");
}
