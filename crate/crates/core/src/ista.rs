//! Classical ISTA with a pixel-domain ℓ1 prior.
//!
//! Minimizes `½‖𝒜X − Y‖₂² + λ‖X‖₁` by alternating a gradient step on the
//! data term with soft thresholding, starting from `X̂₀ = 𝒜ᵀY`.

use crate::error::{Error, Result};
use crate::sampling::SamplingOperator;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Objective growth over its initial value that counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IstaConfig {
    /// Gradient step size ρ.
    pub rho: f64,
    /// ℓ1 weight λ.
    pub lambda: f64,
    pub max_iters: usize,
    /// Relative objective change below which iteration stops.
    pub tol: f64,
}

impl IstaConfig {
    /// `ρ = 0.9 / L` with `L` from 50 rounds of power iteration on `ΦᵀΦ`.
    pub fn for_operator<T: Scalar>(op: &SamplingOperator<T>, lambda: f64) -> Self {
        Self {
            rho: 0.9 / op.lipschitz_estimate(50),
            lambda,
            max_iters: 200,
            tol: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {}", self.rho)));
        }
        if !(self.lambda >= 0.0) || !(self.tol >= 0.0) {
            return Err(Error::InvalidArgument("λ and tol must be nonnegative".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// `½‖𝒜X − Y‖₂² + λ‖X‖₁`.
pub fn objective<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, op: &SamplingOperator<T>, lambda: f64) -> Result<T> {
    let residual = op.measure(x)?.sub(y)?;
    Ok(T::lit(0.5) * residual.sq_norm() + T::lit(lambda) * x.l1_norm())
}

/// `X − ρ·𝒜ᵀ(𝒜X − Y)`.
pub fn gradient_step<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, op: &SamplingOperator<T>, rho: f64) -> Result<Tensor<T>> {
    if !(rho >= 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be nonnegative, got {rho}")));
    }
    let back = op.init_transpose(&op.measure(x)?.sub(y)?)?;
    let mut out = x.clone();
    out.axpy(T::lit(-rho), &back)?;
    Ok(out)
}

/// Element-wise `sign(r)·max(|r| − τ, 0)`.
pub fn soft_threshold<T: Scalar>(r: &Tensor<T>, tau: f64) -> Result<Tensor<T>> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be nonnegative, got {tau}")));
    }
    let tau = T::lit(tau);
    Ok(r.map(|v| v.signum() * (v.abs() - tau).max(T::zero())))
}

#[derive(Clone, Debug)]
pub struct IstaResult<T> {
    pub image: Tensor<T>,
    /// Objective after each completed iteration.
    pub trace: Vec<T>,
}

pub fn run_ista<T: Scalar>(y: &Tensor<T>, op: &SamplingOperator<T>, cfg: &IstaConfig) -> Result<IstaResult<T>> {
    cfg.validate()?;
    let mut x = op.init_transpose(y)?;
    let initial = objective(&x, y, op, cfg.lambda)?.to_f64_lossless();
    let mut prev = initial;
    let mut trace = Vec::with_capacity(cfg.max_iters);
    for it in 0..cfg.max_iters {
        let r = gradient_step(&x, y, op, cfg.rho)?;
        x = soft_threshold(&r, cfg.lambda * cfg.rho)?;
        let f = objective(&x, y, op, cfg.lambda)?;
        let fv = f.to_f64_lossless();
        if !fv.is_finite() || fv > DIVERGENCE_FACTOR * initial.max(f64::MIN_POSITIVE) {
            return Err(Error::Divergence {
                iteration: it + 1,
                initial,
                current: fv,
            });
        }
        trace.push(f);
        let change = (prev - fv).abs() / prev.abs().max(f64::MIN_POSITIVE);
        prev = fv;
        if change < cfg.tol {
            break;
        }
    }
    Ok(IstaResult { image: x, trace })
}
