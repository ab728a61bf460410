use deepcs::image::{crop_back, decode_pgm, encode_pgm, pad_to_blocks, quantized};
use deepcs::kernels::{pixel_shuffle, pixel_unshuffle};
use deepcs::metrics::{block_artifact_score, psnr};
use deepcs::net::ReconstructOptions;
use deepcs::{Model64, NetConfig, SamplingOperator64, Tensor64};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn image(h: usize, w: usize, seed: u64) -> Tensor64 {
    Tensor64::rand_uniform(vec![1, h, w], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn pad_then_crop_is_identity(h in 1usize..70, w in 1usize..70, b in 2usize..20, seed: u64) {
        let x = image(h, w, seed);
        let (padded, (oh, ow)) = pad_to_blocks(&x, b).unwrap();
        let (_, ph, pw) = padded.dims3().unwrap();
        prop_assert_eq!((oh, ow), (h, w));
        prop_assert!(ph % b == 0 && pw % b == 0 && ph < h + b && pw < w + b);
        prop_assert_eq!(crop_back(&padded, h, w).unwrap(), x);
    }

    #[test]
    fn psnr_depends_only_on_the_difference(seed: u64, c in -0.2f64..0.2) {
        let x = image(8, 8, seed).map(|v| 0.3 + 0.4 * v);
        let r = image(8, 8, seed ^ 1).map(|v| 0.3 + 0.4 * v);
        let a = psnr(&x, &r).unwrap().as_f64();
        let b = psnr(&x.map(|v| v + c), &r.map(|v| v + c)).unwrap().as_f64();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn pixel_shuffle_round_trips(c in 1usize..4, r in 1usize..5, h in 1usize..5, w in 1usize..5, seed: u64) {
        prop_assume!(r * r * c <= 64);
        let x = Tensor64::randn(vec![c * r * r, h, w], 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
        let up = pixel_shuffle(&x, r).unwrap();
        prop_assert_eq!(pixel_unshuffle(&up, r).unwrap(), x);
    }

    #[test]
    fn graymap_round_trip_is_bounded(h in 1usize..20, w in 1usize..20, seed: u64) {
        let x = image(h, w, seed).map(|v| 1.4 * v - 0.2);
        let back: Tensor64 = decode_pgm(&encode_pgm(&x).unwrap()).unwrap();
        let clamped = x.map(|v| v.clamp(0.0, 1.0));
        prop_assert!(back.max_abs_diff(&clamped).unwrap() <= 1.0 / 510.0 + 1e-12);
        let q = quantized(&x);
        prop_assert_eq!(encode_pgm(&q).unwrap(), encode_pgm(&decode_pgm::<f64>(&encode_pgm(&q).unwrap()).unwrap()).unwrap());
    }

    #[test]
    fn artifact_score_is_clamped_raw(seed: u64) {
        let x = image(16, 24, seed);
        let s = block_artifact_score(&x, 8).unwrap();
        prop_assert_eq!(s.score, s.raw.max(0.0));
    }

    #[test]
    fn condition_outputs_are_positive(seed in 0u64..20) {
        let m = Model64::new(NetConfig { seed, ..NetConfig::tiny(3, 2, 4, &[0.5]) }).unwrap();
        for i in 1..=100 {
            let c = m.condition(i as f64 * 0.01).unwrap();
            prop_assert_eq!(c.rho.len(), 3);
            prop_assert!(c.rho.iter().chain(&c.sigma).all(|v| *v > 0.0));
        }
    }
}

#[test]
fn cbs_off_reconstructs_each_block_alone() {
    let cfg = NetConfig {
        cbs: false,
        ..NetConfig::tiny(2, 3, 4, &[0.5])
    };
    let m = Model64::new(cfg).unwrap();
    let op = &m.operators[0];
    let x = image(12, 8, 3);
    let whole = m.reconstruct(&op.measure(&x).unwrap(), op, 0.5, Default::default()).unwrap().image;
    for by in 0..3 {
        for bx in 0..2 {
            let block = deepcs::image::window(&x, by * 4, bx * 4, 4).unwrap();
            let alone = m.reconstruct(&op.measure(&block).unwrap(), op, 0.5, Default::default()).unwrap().image;
            assert_eq!(deepcs::image::window(&whole, by * 4, bx * 4, 4).unwrap(), alone);
        }
    }
}

#[test]
fn severed_conditioning_ignores_the_ratio() {
    let cfg = NetConfig {
        dus_rho: false,
        dus_sigma: false,
        ..NetConfig::tiny(2, 3, 4, &[0.5])
    };
    let m = Model64::new(cfg).unwrap();
    let op: SamplingOperator64 = m.operators[0].clone();
    let y = op.measure(&image(8, 8, 1)).unwrap();
    let opts = ReconstructOptions { allow_extrapolation: true };
    let a = m.reconstruct(&y, &op, 0.5, opts).unwrap().image;
    let b = m.reconstruct(&y, &op, 0.37, opts).unwrap().image;
    assert_eq!(a, b);
}

#[test]
fn dgdm_step_reduces_data_misfit() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for seed in 0..10 {
        let op = SamplingOperator64::gaussian(8, 0.3, seed).unwrap();
        let x = Tensor64::rand_uniform(vec![1, 16, 16], 0.0, 1.0, &mut rng);
        let y = op.measure(&x).unwrap();
        let prev = Tensor64::rand_uniform(vec![1, 16, 16], 0.0, 1.0, &mut rng);
        let rho = 1.0 / op.lipschitz_estimate(50);
        let r = deepcs::ista::gradient_step(&prev, &y, &op, rho).unwrap();
        let misfit = |z: &Tensor64| op.measure(z).unwrap().sub(&y).unwrap().norm();
        assert!(misfit(&r) <= misfit(&prev));
    }
}
