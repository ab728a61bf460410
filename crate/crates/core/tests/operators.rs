//! Sampling operator against dense blockwise oracles.

use deepcs::{SamplingOperator64, Tensor64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RATIOS: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// `Φ·vec(block)` for every block, straight from the matrix.
fn oracle_measure(op: &SamplingOperator64, x: &Tensor64) -> Tensor64 {
    let b = op.block_size();
    let (_, h, w) = x.dims3().unwrap();
    let (bh, bw) = (h / b, w / b);
    let (m, n) = (op.m(), op.n());
    let phi = op.phi().data();
    let mut out = vec![0.0; m * bh * bw];
    for by in 0..bh {
        for bx in 0..bw {
            let block: Vec<f64> = (0..n).map(|p| x.at3(0, by * b + p / b, bx * b + p % b)).collect();
            for r in 0..m {
                out[(r * bh + by) * bw + bx] = phi[r * n..(r + 1) * n].iter().zip(&block).map(|(a, v)| a * v).sum();
            }
        }
    }
    Tensor64::new(vec![m, bh, bw], out).unwrap()
}

/// `Φᵀ·y` per block position, reshaped back into the image.
fn oracle_transpose(op: &SamplingOperator64, y: &Tensor64) -> Tensor64 {
    let b = op.block_size();
    let (m, bh, bw) = y.dims3().unwrap();
    let n = op.n();
    let phi = op.phi().data();
    let mut out = vec![0.0; bh * b * bw * b];
    for by in 0..bh {
        for bx in 0..bw {
            for p in 0..n {
                let v: f64 = (0..m).map(|r| phi[r * n + p] * y.at3(r, by, bx)).sum();
                out[(by * b + p / b) * bw * b + bx * b + p % b] = v;
            }
        }
    }
    Tensor64::new(vec![1, bh * b, bw * b], out).unwrap()
}

#[test]
fn adjoint_identity_on_random_operators() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let b = [4, 8, 16][i % 3];
        let ratio = RATIOS[rng.gen_range(0..RATIOS.len())];
        let op = SamplingOperator64::gaussian(b, ratio, rng.gen()).unwrap();
        let (bh, bw) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let x = Tensor64::randn(vec![1, bh * b, bw * b], 1.0, &mut rng);
        let y = Tensor64::randn(vec![op.m(), bh, bw], 1.0, &mut rng);
        let lhs = op.measure(&x).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&op.init_transpose(&y).unwrap()).unwrap();
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300);
        worst = worst.max(rel);
    }
    assert!(worst <= 1e-10, "worst relative adjoint error {worst:e}");
}

#[test]
fn convolutional_sampling_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for i in 0..50 {
        let b = [4, 8, 16][i % 3];
        let op = SamplingOperator64::gaussian(b, RATIOS[i % RATIOS.len()], i as u64).unwrap();
        let (bh, bw) = (rng.gen_range(2..5), rng.gen_range(2..5));
        let x = Tensor64::rand_uniform(vec![1, bh * b, bw * b], 0.0, 1.0, &mut rng);
        let y = op.measure(&x).unwrap();
        assert!(y.max_abs_diff(&oracle_measure(&op, &x)).unwrap() <= 1e-12, "measure, case {i}");
        let back = op.init_transpose(&y).unwrap();
        assert!(back.max_abs_diff(&oracle_transpose(&op, &y)).unwrap() <= 1e-12, "transpose, case {i}");
    }
}

#[test]
fn sampling_is_block_separable() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let op = SamplingOperator64::gaussian(8, 0.3, 1).unwrap();
    let x = Tensor64::rand_uniform(vec![1, 24, 32], 0.0, 1.0, &mut rng);
    let y = op.measure(&x).unwrap();
    for by in 0..3 {
        for bx in 0..4 {
            let block = deepcs::image::window(&x, by * 8, bx * 8, 8).unwrap();
            let alone = op.measure(&block).unwrap();
            for r in 0..op.m() {
                assert_eq!(alone.at3(r, 0, 0), y.at3(r, by, bx));
            }
        }
    }
}

#[test]
fn ratio_set_operators_are_independent_and_sized() {
    let ops = deepcs::make_ratio_set::<f64>(16, &[0.1, 0.3, 0.5], 10).unwrap();
    let ms: Vec<usize> = ops.iter().map(|o| o.m()).collect();
    assert_eq!(ms, [26, 77, 128]);
    assert_eq!(ops[1].seed(), 11);
    let variance = ops[2].phi().sq_norm() / ops[2].phi().len() as f64;
    assert!((variance - 1.0 / 256.0).abs() < 0.1 / 256.0, "{variance}");
}
