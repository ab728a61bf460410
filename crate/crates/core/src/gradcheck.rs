//! Central finite-difference verification of every differentiable operation
//! and of the end-to-end network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::kernels::ConvSpec;
use crate::net::{reconstruct_graph, Model, NetConfig, ReconstructOptions};
use crate::sampling::SamplingOperator;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;
/// Denominator floor of the relative error, so that gradients that are zero
/// up to rounding are not judged relative to themselves.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub name: String,
    pub probes: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

type Build<'a> = dyn Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId> + 'a;

fn eval(inputs: &[Tensor<f64>], build: &Build) -> Result<f64> {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let l = build(&mut g, &ids)?;
    g.value(l)?.item()
}

/// Compares the backward pass of `build` (which must return a scalar) with
/// central differences at the given `(input, element)` probes.
pub fn check_probes(
    name: &str,
    inputs: &[Tensor<f64>],
    probes: &[(usize, usize)],
    tolerance: f64,
    build: &Build,
) -> Result<GradCheck> {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let l = build(&mut g, &ids)?;
    g.backward(l)?;
    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for &(i, j) in probes {
        let analytic = g.grad(ids[i]).map_or(0.0, |t| t.data()[j]);
        let x0 = work[i].data()[j];
        work[i].data_mut()[j] = x0 + FD_STEP;
        let fp = eval(&work, build)?;
        work[i].data_mut()[j] = x0 - FD_STEP;
        let fm = eval(&work, build)?;
        work[i].data_mut()[j] = x0;
        let e = relative_error(analytic, (fp - fm) / (2.0 * FD_STEP));
        worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
    }
    Ok(GradCheck {
        name: name.to_string(),
        probes: probes.len(),
        max_rel_error: worst,
        tolerance,
    })
}

/// [`check_probes`] at every element of small inputs and `per_input` random
/// elements of larger ones.
pub fn check(
    name: &str,
    inputs: &[Tensor<f64>],
    per_input: usize,
    tolerance: f64,
    rng: &mut impl Rng,
    build: &Build,
) -> Result<GradCheck> {
    let mut probes = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        if t.len() <= per_input {
            probes.extend((0..t.len()).map(|j| (i, j)));
        } else {
            probes.extend((0..per_input).map(|_| (i, rng.gen_range(0..t.len()))));
        }
    }
    check_probes(name, inputs, &probes, tolerance, build)
}

/// Values with magnitude in `[0.2, 1)` and random sign, so kinks (ReLU at 0)
/// are never straddled.
fn away_from_zero(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t: Tensor<f64> = Tensor::rand_uniform(shape, 0.2, 1.0, rng);
    for v in t.data_mut() {
        if rng.gen_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// Projects `out` onto a fixed random direction so every output element
/// contributes to the scalar loss.
fn project(g: &mut Graph<f64>, out: NodeId, seed: u64) -> Result<NodeId> {
    let shape = g.value(out)?.shape().to_vec();
    let w = Tensor::rand_uniform(shape, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
    let w = g.constant(w);
    let p = g.mul(out, w)?;
    g.sum(p)
}

/// Operation-level checks at [`OP_TOLERANCE`].
pub fn op_checks(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut out = Vec::new();
    let mut run = |name: &str, inputs: Vec<Tensor<f64>>, r: &mut ChaCha8Rng, build: &Build| -> Result<()> {
        out.push(check(name, &inputs, 40, OP_TOLERANCE, r, build)?);
        Ok(())
    };
    let conv = |spec: ConvSpec, bias: bool| {
        move |g: &mut Graph<f64>, x: &[NodeId]| {
            let y = g.conv2d(x[0], x[1], bias.then(|| x[2]), spec)?;
            project(g, y, 11)
        }
    };
    let (x, k, b) = (
        Tensor::randn(vec![2, 6, 7], 1.0, r),
        Tensor::randn(vec![3, 2, 3, 3], 1.0, r),
        Tensor::randn(vec![3], 1.0, r),
    );
    run("conv2d 3×3 stride 1 pad 1 + bias", vec![x, k, b], r, &conv(ConvSpec::new(1, 1), true))?;
    let (x, k) = (Tensor::randn(vec![2, 8, 6], 1.0, r), Tensor::randn(vec![4, 2, 2, 2], 1.0, r));
    run("conv2d 2×2 stride 2", vec![x, k], r, &conv(ConvSpec::new(2, 0), false))?;
    let (x, k) = (Tensor::randn(vec![1, 7, 8], 1.0, r), Tensor::randn(vec![2, 1, 3, 3], 1.0, r));
    run("conv2d 3×3 stride 3 pad 1", vec![x, k], r, &conv(ConvSpec::new(3, 1), false))?;
    let (x, k, b) = (
        Tensor::randn(vec![2, 8, 8], 1.0, r),
        Tensor::randn(vec![2, 2, 3, 3], 1.0, r),
        Tensor::randn(vec![2], 1.0, r),
    );
    run("conv2d tile-isolated", vec![x, k, b], r, &conv(ConvSpec::same3(Some(4)), true))?;
    let (x, k) = (Tensor::randn(vec![4, 3, 3], 1.0, r), Tensor::randn(vec![5, 4, 1, 1], 1.0, r));
    run("conv1x1", vec![x, k], r, &|g, x| {
        let y = g.conv1x1(x[0], x[1])?;
        project(g, y, 12)
    })?;
    run("pixel_shuffle", vec![Tensor::randn(vec![8, 2, 3], 1.0, r)], r, &|g, x| {
        let y = g.pixel_shuffle(x[0], 2)?;
        project(g, y, 13)
    })?;
    let fc = vec![
        Tensor::randn(vec![3], 1.0, r),
        Tensor::randn(vec![4, 3], 1.0, r),
        Tensor::randn(vec![4], 1.0, r),
    ];
    run("fully_connected", fc, r, &|g, x| {
        let y = g.fully_connected(x[0], x[1], x[2])?;
        project(g, y, 14)
    })?;
    run("relu", vec![away_from_zero(vec![3, 4], r)], r, &|g, x| {
        let y = g.relu(x[0])?;
        project(g, y, 15)
    })?;
    run("softplus", vec![Tensor::randn(vec![3, 4], 2.0, r)], r, &|g, x| {
        let y = g.softplus(x[0])?;
        project(g, y, 16)
    })?;
    let pair = |r: &mut ChaCha8Rng| vec![Tensor::randn(vec![2, 3], 1.0, r), Tensor::randn(vec![2, 3], 1.0, r)];
    let ab = pair(r);
    run("add", ab, r, &|g, x| {
        let y = g.add(x[0], x[1])?;
        project(g, y, 17)
    })?;
    let ab = pair(r);
    run("sub", ab, r, &|g, x| {
        let y = g.sub(x[0], x[1])?;
        project(g, y, 18)
    })?;
    let ab = pair(r);
    run("mul", ab, r, &|g, x| {
        let y = g.mul(x[0], x[1])?;
        project(g, y, 19)
    })?;
    let sb = vec![Tensor::randn(vec![2, 3], 1.0, r), Tensor::scalar(0.7)];
    run("scale_by", sb, r, &|g, x| {
        let y = g.scale_by(x[0], x[1])?;
        project(g, y, 20)
    })?;
    run("scale", vec![Tensor::randn(vec![5], 1.0, r)], r, &|g, x| {
        let y = g.scale(x[0], -1.7)?;
        project(g, y, 21)
    })?;
    run("index", vec![Tensor::randn(vec![6], 1.0, r)], r, &|g, x| {
        let a = g.index(x[0], 4)?;
        let b = g.index(x[0], 1)?;
        let p = g.mul(a, b)?;
        g.sum(p)
    })?;
    run("fill", vec![Tensor::scalar(0.3)], r, &|g, x| {
        let y = g.fill(x[0], &[2, 3, 3])?;
        project(g, y, 22)
    })?;
    let cc = vec![Tensor::randn(vec![1, 3, 3], 1.0, r), Tensor::randn(vec![2, 3, 3], 1.0, r)];
    run("concat_channels", cc, r, &|g, x| {
        let y = g.concat_channels(x[0], x[1])?;
        project(g, y, 23)
    })?;
    run("sum", vec![Tensor::randn(vec![7], 1.0, r)], r, &|g, x| {
        let s = g.sum(x[0])?;
        g.mul(s, s)
    })?;
    run("sum_squares", vec![Tensor::randn(vec![3, 3], 1.0, r)], r, &|g, x| g.sum_squares(x[0]))?;

    let op = SamplingOperator::<f64>::gaussian(4, 0.5, 3)?;
    let opm = op.clone();
    run("block measurement", vec![Tensor::randn(vec![1, 8, 12], 1.0, r)], r, &move |g, x| {
        let b = opm.bind(g);
        let y = b.measure(g, x[0])?;
        project(g, y, 24)
    })?;
    let opt = op.clone();
    run("transpose initialization", vec![Tensor::randn(vec![op.m(), 2, 3], 1.0, r)], r, &move |g, x| {
        let b = opt.bind(g);
        let y = b.init_transpose(g, x[0])?;
        project(g, y, 25)
    })?;
    Ok(out)
}

/// End-to-end check of a network on a 16×16 image: the loss `‖H(Φx) − x‖²`
/// against at least 50 elements spread over every parameter tensor that
/// influences it.
pub fn model_check(name: &str, config: NetConfig, seed: u64) -> Result<GradCheck> {
    let model = Model::<f64>::new(config)?;
    let ratio = model.config.ratios[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::rand_uniform(vec![1, 16, 16], 0.0, 1.0, &mut rng);
    let op = &model.operators[0];
    let y = op.measure(&x)?;
    let params: Vec<Tensor<f64>> = model.parameters().into_iter().cloned().collect();
    let build = |g: &mut Graph<f64>, ids: &[NodeId]| -> Result<NodeId> {
        let bound = model.bind_ids(ids);
        let bop = op.bind(g);
        let yn = g.constant(y.clone());
        let trace = reconstruct_graph(g, &model, &bound, &bop, yn, ratio, ReconstructOptions::default())?;
        let xt = g.constant(x.clone());
        let d = g.sub(*trace.last().expect("trace holds X̂₀"), xt)?;
        g.sum_squares(d)
    };
    let active: Vec<usize> = (0..params.len()).filter(|&i| model.parameter_active()[i]).collect();
    let per = 50usize.div_ceil(active.len()).max(2);
    let mut probes = Vec::new();
    for &i in &active {
        probes.extend((0..per).map(|_| (i, rng.gen_range(0..params[i].len()))));
    }
    if probes.len() < 50 {
        return Err(Error::InvalidArgument(format!("only {} parameters probed", probes.len())));
    }
    check_probes(name, &params, &probes, MODEL_TOLERANCE, &build)
}

/// Every check: operations at [`OP_TOLERANCE`], then the network with all
/// strategies on and with all of them off, at [`MODEL_TOLERANCE`].
pub fn run_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut all = op_checks(seed)?;
    let base = NetConfig::tiny(2, 4, 8, &[0.5]);
    all.push(model_check("network, all strategies on", base.clone(), seed)?);
    all.push(model_check(
        "network, dus and cbs off",
        NetConfig {
            dus_rho: false,
            dus_sigma: false,
            cbs: false,
            ..base
        },
        seed,
    )?);
    Ok(all)
}
