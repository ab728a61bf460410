//! Block-based Gaussian sensing realized as whole-image convolutions.
//!
//! Sampling a `B×B` block `x` is `y = Φ·vec(x)` with row-major `vec`. Over a
//! whole image this is a stride-`B` convolution with `M` kernels of size
//! `B×B`; the transpose is a 1×1 convolution with `N = B²` kernels followed by
//! a pixel shuffle of factor `B`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::kernels::{self, ConvSpec};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Number of measurements kept per block: `round(γ·N)` clamped to `[1, N]`.
pub fn measurement_count(block_size: usize, ratio: f64) -> usize {
    let n = block_size * block_size;
    ((ratio * n as f64).round() as usize).clamp(1, n)
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "CS ratio must lie in (0, 1], got {ratio}"
        )));
    }
    Ok(())
}

/// The fixed sensing matrix of one CS ratio together with its convolution
/// kernels. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingOperator<T> {
    block_size: usize,
    ratio: f64,
    seed: u64,
    orthonormal: bool,
    phi: Tensor<T>,
    w_phi: Tensor<T>,
    w_phi_t: Tensor<T>,
}

impl<T: Scalar> SamplingOperator<T> {
    /// Gaussian `Φ` with i.i.d. `N(0, 1/N)` entries drawn from `seed`.
    pub fn gaussian(block_size: usize, ratio: f64, seed: u64) -> Result<Self> {
        if block_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "block size must be at least 2, got {block_size}"
            )));
        }
        check_ratio(ratio)?;
        let n = block_size * block_size;
        let m = measurement_count(block_size, ratio);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = Tensor::randn(vec![m, n], 1.0 / (n as f64).sqrt(), &mut rng);
        Self::from_matrix(block_size, ratio, seed, phi)
    }

    /// Wraps an explicit `M×B²` matrix.
    pub fn from_matrix(block_size: usize, ratio: f64, seed: u64, phi: Tensor<T>) -> Result<Self> {
        check_ratio(ratio)?;
        let n = block_size * block_size;
        let m = match phi.shape()[..] {
            [m, cols] if cols == n && m <= n => m,
            _ => {
                return Err(Error::dim(
                    "sampling operator",
                    format!("Φ has shape {:?}, expected M×{n} with M ≤ {n}", phi.shape()),
                ))
            }
        };
        let w_phi = phi.clone().reshape(vec![m, 1, block_size, block_size])?;
        let mut t = vec![T::zero(); m * n];
        for r in 0..m {
            for c in 0..n {
                t[c * m + r] = phi.data()[r * n + c];
            }
        }
        let w_phi_t = Tensor::new(vec![n, m, 1, 1], t)?;
        Ok(Self {
            block_size,
            ratio,
            seed,
            orthonormal: false,
            phi,
            w_phi,
            w_phi_t,
        })
    }

    /// Same operator with Gram–Schmidt applied to the rows of `Φ`, so that
    /// `ΦΦᵀ = I`.
    pub fn orthonormalized(&self) -> Result<Self> {
        let (m, n) = (self.m(), self.n());
        let mut rows: Vec<Vec<f64>> = (0..m)
            .map(|r| {
                self.phi.data()[r * n..(r + 1) * n]
                    .iter()
                    .map(|v| v.to_f64_lossless())
                    .collect()
            })
            .collect();
        for i in 0..m {
            for j in 0..i {
                let d: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                let (head, tail) = rows.split_at_mut(i);
                for (a, b) in tail[0].iter_mut().zip(&head[j]) {
                    *a -= d * b;
                }
            }
            let norm = rows[i].iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(Error::InvalidArgument("Φ rows are linearly dependent".into()));
            }
            rows[i].iter_mut().for_each(|a| *a /= norm);
        }
        let data = rows.into_iter().flatten().map(T::lit).collect();
        let mut op = Self::from_matrix(self.block_size, self.ratio, self.seed, Tensor::new(vec![m, n], data)?)?;
        op.orthonormal = true;
        Ok(op)
    }

    pub(crate) fn mark_orthonormal(&mut self, orthonormal: bool) {
        self.orthonormal = orthonormal;
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_orthonormal(&self) -> bool {
        self.orthonormal
    }

    pub fn m(&self) -> usize {
        self.phi.shape()[0]
    }

    pub fn n(&self) -> usize {
        self.block_size * self.block_size
    }

    pub fn phi(&self) -> &Tensor<T> {
        &self.phi
    }

    /// `M×1×B×B` sampling kernels.
    pub fn w_phi(&self) -> &Tensor<T> {
        &self.w_phi
    }

    /// `N×M×1×1` transpose kernels.
    pub fn w_phi_t(&self) -> &Tensor<T> {
        &self.w_phi_t
    }

    fn check_image(&self, x: &Tensor<T>) -> Result<()> {
        let (c, h, w) = x.dims3()?;
        let b = self.block_size;
        if c != 1 || h % b != 0 || w % b != 0 {
            return Err(Error::dim(
                "measure",
                format!("image {c}×{h}×{w} must be 1×H×W with H, W multiples of {b}"),
            ));
        }
        Ok(())
    }

    fn check_measurements(&self, y: &Tensor<T>) -> Result<()> {
        let (c, _, _) = y.dims3()?;
        if c != self.m() {
            return Err(Error::dim(
                "init_transpose",
                format!("measurements have {c} channels, operator has M = {}", self.m()),
            ));
        }
        Ok(())
    }

    fn sampling_spec(&self) -> ConvSpec {
        ConvSpec::new(self.block_size, 0)
    }

    /// `𝒜(X)`: `M×(H/B)×(W/B)` measurements of a `1×H×W` image.
    pub fn measure(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_image(x)?;
        kernels::conv2d(x, &self.w_phi, None, self.sampling_spec())
    }

    /// `𝒜ᵀ(Y)`: the blockwise `Φᵀy` image.
    pub fn init_transpose(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_measurements(y)?;
        kernels::pixel_shuffle(&kernels::conv1x1(y, &self.w_phi_t)?, self.block_size)
    }

    /// `𝒜ᵀ𝒜(X)`.
    pub fn gram(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.init_transpose(&self.measure(x)?)
    }

    /// Largest eigenvalue of `ΦᵀΦ` by power iteration from a seeded start.
    pub fn lipschitz_estimate(&self, iterations: usize) -> f64 {
        let (m, n) = (self.m(), self.n());
        let phi: Vec<f64> = self.phi.data().iter().map(|v| v.to_f64_lossless()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut v = Tensor::<f64>::randn(vec![n], 1.0, &mut rng).into_data();
        let mut lambda = 0.0;
        for _ in 0..iterations.max(1) {
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.iter_mut().for_each(|a| *a /= norm);
            let u: Vec<f64> = (0..m)
                .map(|r| phi[r * n..(r + 1) * n].iter().zip(&v).map(|(a, b)| a * b).sum())
                .collect();
            let mut w = vec![0.0; n];
            for (r, &ur) in u.iter().enumerate() {
                for (wc, &p) in w.iter_mut().zip(&phi[r * n..(r + 1) * n]) {
                    *wc += p * ur;
                }
            }
            lambda = w.iter().zip(&v).map(|(a, b)| a * b).sum();
            v = w;
        }
        lambda
    }

    /// Registers the sampling kernels as constants of `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> BoundOperator {
        BoundOperator {
            w_phi: g.constant(self.w_phi.clone()),
            w_phi_t: g.constant(self.w_phi_t.clone()),
            block_size: self.block_size,
        }
    }
}

/// A [`SamplingOperator`] whose kernels live in a particular graph.
#[derive(Clone, Copy, Debug)]
pub struct BoundOperator {
    w_phi: NodeId,
    w_phi_t: NodeId,
    block_size: usize,
}

impl BoundOperator {
    pub fn measure<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        let (c, h, w) = g.value(x)?.dims3()?;
        let b = self.block_size;
        if c != 1 || h % b != 0 || w % b != 0 {
            return Err(Error::dim(
                "measure",
                format!("image {c}×{h}×{w} must be 1×H×W with H, W multiples of {b}"),
            ));
        }
        g.conv2d(x, self.w_phi, None, ConvSpec::new(b, 0))
    }

    pub fn init_transpose<T: Scalar>(&self, g: &mut Graph<T>, y: NodeId) -> Result<NodeId> {
        let up = g.conv1x1(y, self.w_phi_t)?;
        g.pixel_shuffle(up, self.block_size)
    }
}

/// One independent operator per ratio, seeded `master_seed + index`.
pub fn make_ratio_set<T: Scalar>(
    block_size: usize,
    ratios: &[f64],
    master_seed: u64,
) -> Result<Vec<SamplingOperator<T>>> {
    if ratios.is_empty() {
        return Err(Error::InvalidArgument("ratio list is empty".into()));
    }
    ratios
        .iter()
        .enumerate()
        .map(|(i, &r)| SamplingOperator::gaussian(block_size, r, master_seed.wrapping_add(i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_op() -> SamplingOperator<f64> {
        let mut eye = Tensor::zeros(vec![4, 4]);
        for i in 0..4 {
            eye.data_mut()[i * 4 + i] = 1.0;
        }
        SamplingOperator::from_matrix(2, 1.0, 0, eye).unwrap()
    }

    #[test]
    fn measurement_counts() {
        assert_eq!(measurement_count(16, 0.25), 64);
        assert_eq!(measurement_count(33, 0.1), 109);
        assert_eq!(measurement_count(4, 0.001), 1);
        let op = SamplingOperator::<f64>::gaussian(16, 0.25, 1).unwrap();
        assert_eq!((op.m(), op.n()), (64, 256));
    }

    #[test]
    fn rejects_bad_ratio_and_block() {
        assert!(SamplingOperator::<f64>::gaussian(8, 0.0, 1).is_err());
        assert!(SamplingOperator::<f64>::gaussian(8, 1.5, 1).is_err());
        assert!(SamplingOperator::<f64>::gaussian(8, f64::NAN, 1).is_err());
        assert!(SamplingOperator::<f64>::gaussian(1, 0.5, 1).is_err());
    }

    #[test]
    fn deterministic_for_seed() {
        let a = SamplingOperator::<f64>::gaussian(8, 0.3, 42).unwrap();
        let b = SamplingOperator::<f64>::gaussian(8, 0.3, 42).unwrap();
        assert_eq!(a.phi().data(), b.phi().data());
        let c = SamplingOperator::<f64>::gaussian(8, 0.3, 43).unwrap();
        assert_ne!(a.phi().data()[0], c.phi().data()[0]);
    }

    #[test]
    fn kernel_reshapes_match_phi() {
        let op = SamplingOperator::<f64>::gaussian(4, 0.5, 9).unwrap();
        let (m, n) = (op.m(), op.n());
        for r in 0..m {
            assert_eq!(&op.w_phi().data()[r * n..(r + 1) * n], &op.phi().data()[r * n..(r + 1) * n]);
        }
        for c in 0..n {
            for r in 0..m {
                assert_eq!(op.w_phi_t().data()[c * m + r], op.phi().data()[r * n + c]);
            }
        }
    }

    #[test]
    fn identity_measures_pixels_in_row_major_order() {
        let op = identity_op();
        let x = Tensor::new(vec![1, 2, 4], (1..=8).map(f64::from).collect()).unwrap();
        let y = op.measure(&x).unwrap();
        assert_eq!(y.shape(), [4, 1, 2]);
        // block (0,0) = [1,2,5,6], block (0,1) = [3,4,7,8]
        let ch = |c: usize| [y.at3(c, 0, 0), y.at3(c, 0, 1)];
        assert_eq!([ch(0), ch(1), ch(2), ch(3)], [[1.0, 3.0], [2.0, 4.0], [5.0, 7.0], [6.0, 8.0]]);
        assert_eq!(op.init_transpose(&y).unwrap(), x);
    }

    #[test]
    fn rejects_non_multiple_image_and_wrong_channels() {
        let op = SamplingOperator::<f64>::gaussian(4, 0.5, 1).unwrap();
        assert!(op.measure(&Tensor::zeros(vec![1, 6, 8])).is_err());
        assert!(op.init_transpose(&Tensor::zeros(vec![3, 1, 1])).is_err());
    }

    #[test]
    fn orthonormal_rows() {
        let op = SamplingOperator::<f64>::gaussian(4, 0.5, 2).unwrap().orthonormalized().unwrap();
        let (m, n) = (op.m(), op.n());
        let p = op.phi().data();
        for i in 0..m {
            for j in 0..m {
                let d: f64 = (0..n).map(|k| p[i * n + k] * p[j * n + k]).sum();
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        assert!((op.lipschitz_estimate(50) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ratio_set_counts_and_seeds() {
        let ops = make_ratio_set::<f64>(16, &[0.1, 0.2, 0.3, 0.4, 0.5], 7).unwrap();
        let ms: Vec<_> = ops.iter().map(|o| o.m()).collect();
        assert_eq!(ms, [26, 51, 77, 102, 128]);
        let single = make_ratio_set::<f64>(16, &[0.3], 7).unwrap();
        assert_eq!(single[0], SamplingOperator::gaussian(16, 0.3, 7).unwrap());
        let other = make_ratio_set::<f64>(16, &[0.3], 8).unwrap();
        assert_ne!(single[0].phi().data()[0], other[0].phi().data()[0]);
        assert!(make_ratio_set::<f64>(16, &[], 7).is_err());
    }
}
