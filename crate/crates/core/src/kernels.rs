//! Forward and adjoint kernels for the differentiable operations.
//!
//! These work on plain tensors and are shared by the autodiff graph and the
//! gradient-free code paths (classical ISTA, sampling). Convolution is
//! cross-correlation with zero padding.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Stride, padding and optional tile isolation of a 2-D convolution.
///
/// With `tile: Some(b)` the input is treated as a grid of independent
/// `b×b` tiles: taps that would cross a tile boundary read zero, exactly as if
/// every tile were convolved on its own. Tiling requires stride 1 and a
/// size-preserving padding (`2·padding == k − 1`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub tile: Option<usize>,
}

impl ConvSpec {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride,
            padding,
            tile: None,
        }
    }

    /// 3×3, stride 1, padding 1 convolution, optionally tile-isolated.
    pub fn same3(tile: Option<usize>) -> Self {
        Self {
            stride: 1,
            padding: 1,
            tile,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Geom {
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    k: usize,
    stride: usize,
    pad: usize,
    tile: Option<usize>,
}

fn ceil_div(a: isize, s: isize) -> isize {
    (a + s - 1).div_euclid(s)
}

impl Geom {
    fn new<T: Scalar>(input: &Tensor<T>, kernels: &Tensor<T>, spec: ConvSpec) -> Result<Self> {
        let (c_in, h, w) = input.dims3()?;
        let (c_out, kc, kh, kw) = match kernels.shape()[..] {
            [a, b, c, d] => (a, b, c, d),
            _ => {
                return Err(Error::dim(
                    "conv2d",
                    format!("kernels must be C_out×C_in×k×k, got {:?}", kernels.shape()),
                ))
            }
        };
        if kh != kw {
            return Err(Error::dim("conv2d", format!("non-square kernel {kh}×{kw}")));
        }
        if kc != c_in {
            return Err(Error::dim(
                "conv2d",
                format!("input has {c_in} channels, kernels expect {kc}"),
            ));
        }
        if spec.stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
        }
        let k = kh;
        if h + 2 * spec.padding < k || w + 2 * spec.padding < k {
            return Err(Error::dim(
                "conv2d",
                format!(
                    "{h}×{w} input with padding {} is smaller than kernel {k}",
                    spec.padding
                ),
            ));
        }
        let oh = (h + 2 * spec.padding - k) / spec.stride + 1;
        let ow = (w + 2 * spec.padding - k) / spec.stride + 1;
        if let Some(b) = spec.tile {
            if b == 0 || spec.stride != 1 || 2 * spec.padding + 1 != k {
                return Err(Error::InvalidArgument(
                    "tile isolation needs stride 1 and size-preserving padding".into(),
                ));
            }
            if h % b != 0 || w % b != 0 {
                return Err(Error::dim(
                    "conv2d",
                    format!("{h}×{w} input is not a whole number of {b}×{b} tiles"),
                ));
            }
        }
        Ok(Self {
            c_in,
            c_out,
            h,
            w,
            oh,
            ow,
            k,
            stride: spec.stride,
            pad: spec.padding,
            tile: spec.tile,
        })
    }

    /// Column segments as `(out_lo, out_hi, in_lo, in_hi)`.
    fn x_segments(&self) -> Vec<(usize, usize, usize, usize)> {
        match self.tile {
            None => vec![(0, self.ow, 0, self.w)],
            Some(b) => (0..self.w / b)
                .map(|t| (t * b, t * b + b, t * b, t * b + b))
                .collect(),
        }
    }

    fn y_bounds(&self, oy: usize) -> (usize, usize) {
        match self.tile {
            None => (0, self.h),
            Some(b) => {
                let t = oy / b;
                (t * b, t * b + b)
            }
        }
    }

    /// Visits every maximal run of output pixels that tap input through kernel
    /// offset `(ky, kx)`. The callback gets `(oy, iy, ox0, ix0, len)`; element
    /// `j` of the run pairs output column `ox0 + j` with input column
    /// `ix0 + j·stride`.
    #[inline]
    fn runs(
        &self,
        segs: &[(usize, usize, usize, usize)],
        ky: usize,
        kx: usize,
        mut f: impl FnMut(usize, usize, usize, usize, usize),
    ) {
        let s = self.stride as isize;
        let pad = self.pad as isize;
        for oy in 0..self.oh {
            let (ylo, yhi) = self.y_bounds(oy);
            let iy = oy as isize * s + ky as isize - pad;
            if iy < ylo as isize || iy >= yhi as isize {
                continue;
            }
            for &(sx0, sx1, xlo, xhi) in segs {
                let lo = ceil_div(xlo as isize + pad - kx as isize, s).max(sx0 as isize);
                let hi = ceil_div(xhi as isize + pad - kx as isize, s).min(sx1 as isize);
                if hi <= lo {
                    continue;
                }
                let ix0 = lo * s + kx as isize - pad;
                f(oy, iy as usize, lo as usize, ix0 as usize, (hi - lo) as usize);
            }
        }
    }
}

/// Output extents `(H', W')` of a convolution.
pub fn conv2d_output_size<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    spec: ConvSpec,
) -> Result<(usize, usize)> {
    let g = Geom::new(input, kernels, spec)?;
    Ok((g.oh, g.ow))
}

fn check_bias<T: Scalar>(bias: Option<&Tensor<T>>, c_out: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(Error::dim(
                "conv2d",
                format!("bias shape {:?}, expected [{c_out}]", b.shape()),
            ));
        }
    }
    Ok(())
}

/// Dense row-major `C ← A·B` (or `C += A·B` when `accumulate`), with `A`
/// stored `m×k` (`k×m` if `ta`) and `B` stored `k×n` (`n×k` if `tb`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() == m * k && b.len() == k * n && c.len() == m * n, "matmul extents");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: extents were checked above and `c` is a distinct `&mut`.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// Unfolds the input into a `(C_in·k·k) × (H'·W')` patch matrix; taps that
/// fall in the padding or outside the pixel's tile are zero.
fn im2col<T: Scalar>(g: &Geom, x: &[T]) -> Vec<T> {
    let segs = g.x_segments();
    let (hw, ohw, kk) = (g.h * g.w, g.oh * g.ow, g.k * g.k);
    let mut cols = vec![T::zero(); g.c_in * kk * ohw];
    for ci in 0..g.c_in {
        let src = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &mut cols[(ci * kk + ky * g.k + kx) * ohw..][..ohw];
                g.runs(&segs, ky, kx, |oy, iy, ox0, ix0, len| {
                    let dst = &mut row[oy * g.ow + ox0..][..len];
                    let srow = &src[iy * g.w..(iy + 1) * g.w];
                    if g.stride == 1 {
                        dst.copy_from_slice(&srow[ix0..ix0 + len]);
                    } else {
                        for (j, d) in dst.iter_mut().enumerate() {
                            *d = srow[ix0 + j * g.stride];
                        }
                    }
                });
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds a patch matrix back onto the input grid.
fn col2im<T: Scalar>(g: &Geom, cols: &[T]) -> Vec<T> {
    let segs = g.x_segments();
    let (hw, ohw, kk) = (g.h * g.w, g.oh * g.ow, g.k * g.k);
    let mut out = vec![T::zero(); g.c_in * hw];
    for ci in 0..g.c_in {
        let dst = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &cols[(ci * kk + ky * g.k + kx) * ohw..][..ohw];
                g.runs(&segs, ky, kx, |oy, iy, ox0, ix0, len| {
                    let src = &row[oy * g.ow + ox0..][..len];
                    let drow = &mut dst[iy * g.w..(iy + 1) * g.w];
                    if g.stride == 1 {
                        for (d, &v) in drow[ix0..ix0 + len].iter_mut().zip(src) {
                            *d += v;
                        }
                    } else {
                        for (j, &v) in src.iter().enumerate() {
                            drow[ix0 + j * g.stride] += v;
                        }
                    }
                });
            }
        }
    }
    out
}

/// Cross-correlation of the zero-padded input with `kernels`, plus bias.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let g = Geom::new(input, kernels, spec)?;
    check_bias(bias, g.c_out)?;
    let ohw = g.oh * g.ow;
    let p = g.c_in * g.k * g.k;
    let mut out = vec![T::zero(); g.c_out * ohw];
    if let Some(b) = bias {
        for (plane, &bv) in out.chunks_mut(ohw.max(1)).zip(b.data()) {
            plane.fill(bv);
        }
    }
    let cols = im2col(&g, input.data());
    matmul(g.c_out, p, ohw, kernels.data(), false, &cols, false, &mut out, bias.is_some());
    Tensor::new(vec![g.c_out, g.oh, g.ow], out)
}

/// Adjoint of [`conv2d`] with respect to its input: maps an output-shaped
/// gradient back onto the input grid.
pub fn conv2d_backward_input<T: Scalar>(
    grad_out: &Tensor<T>,
    input_shape: &[usize],
    kernels: &Tensor<T>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let probe = Tensor::<T>::zeros(input_shape.to_vec());
    let g = Geom::new(&probe, kernels, spec)?;
    if grad_out.shape() != [g.c_out, g.oh, g.ow] {
        return Err(Error::dim(
            "conv2d backward",
            format!("gradient shape {:?}", grad_out.shape()),
        ));
    }
    let ohw = g.oh * g.ow;
    let p = g.c_in * g.k * g.k;
    let mut gcols = vec![T::zero(); p * ohw];
    matmul(p, g.c_out, ohw, kernels.data(), true, grad_out.data(), false, &mut gcols, false);
    Tensor::new(input_shape.to_vec(), col2im(&g, &gcols))
}

/// Gradient of [`conv2d`] with respect to its kernels.
pub fn conv2d_backward_kernels<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    kernel_shape: &[usize],
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let probe = Tensor::<T>::zeros(kernel_shape.to_vec());
    let g = Geom::new(input, &probe, spec)?;
    if grad_out.shape() != [g.c_out, g.oh, g.ow] {
        return Err(Error::dim(
            "conv2d backward",
            format!("gradient shape {:?}", grad_out.shape()),
        ));
    }
    let ohw = g.oh * g.ow;
    let p = g.c_in * g.k * g.k;
    let cols = im2col(&g, input.data());
    let mut gk = vec![T::zero(); g.c_out * p];
    matmul(g.c_out, ohw, p, grad_out.data(), false, &cols, true, &mut gk, false);
    Tensor::new(kernel_shape.to_vec(), gk)
}

/// Gradient of a per-channel bias: the sum of each output-gradient plane.
pub fn conv2d_backward_bias<T: Scalar>(grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = grad_out.dims3()?;
    let d = grad_out.data();
    let sums = (0..c).map(|i| d[i * h * w..(i + 1) * h * w].iter().copied().sum()).collect();
    Tensor::new(vec![c], sums)
}

/// 1×1 convolution: a per-pixel linear map across channels.
pub fn conv1x1<T: Scalar>(input: &Tensor<T>, kernels: &Tensor<T>) -> Result<Tensor<T>> {
    match kernels.shape()[..] {
        [_, _, 1, 1] => conv2d(input, kernels, None, ConvSpec::new(1, 0)),
        _ => Err(Error::dim(
            "conv1x1",
            format!("kernel must be C_out×C_in×1×1, got {:?}", kernels.shape()),
        )),
    }
}

fn check_shuffle<T: Scalar>(input: &Tensor<T>, r: usize) -> Result<(usize, usize, usize)> {
    let (c, h, w) = input.dims3()?;
    if r == 0 {
        return Err(Error::InvalidArgument("shuffle factor must be positive".into()));
    }
    if c % (r * r) != 0 {
        return Err(Error::dim(
            "pixel_shuffle",
            format!("{c} channels not divisible by r² = {}", r * r),
        ));
    }
    Ok((c, h, w))
}

/// Rearranges `r²·C×H×W` into `C×rH×rW`:
/// `out[c][y][x] = in[c·r² + (y mod r)·r + (x mod r)][y / r][x / r]`.
pub fn pixel_shuffle<T: Scalar>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (c, h, w) = check_shuffle(input, r)?;
    let oc = c / (r * r);
    let (oh, ow) = (h * r, w * r);
    let src = input.data();
    let mut out = vec![T::zero(); c * h * w];
    for co in 0..oc {
        for y in 0..oh {
            for x in 0..ow {
                let ci = co * r * r + (y % r) * r + (x % r);
                out[(co * oh + y) * ow + x] = src[(ci * h + y / r) * w + x / r];
            }
        }
    }
    Tensor::new(vec![oc, oh, ow], out)
}

/// Inverse of [`pixel_shuffle`]: `C×rH×rW` back to `r²·C×H×W`.
pub fn pixel_unshuffle<T: Scalar>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (c, h, w) = input.dims3()?;
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(Error::dim(
            "pixel_unshuffle",
            format!("{h}×{w} not divisible by factor {r}"),
        ));
    }
    let (ih, iw) = (h / r, w / r);
    let oc = c * r * r;
    let src = input.data();
    let mut out = vec![T::zero(); c * h * w];
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let co = ci * r * r + (y % r) * r + (x % r);
                out[(co * ih + y / r) * iw + x / r] = src[(ci * h + y) * w + x];
            }
        }
    }
    Tensor::new(vec![oc, ih, iw], out)
}

/// Affine map `W·x + b` with `W` of shape `m×n`.
pub fn fully_connected<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (m, n) = fc_dims(input, weights, bias)?;
    let x = input.data();
    let wd = weights.data();
    let out = (0..m)
        .map(|i| {
            let row = &wd[i * n..(i + 1) * n];
            bias.data()[i] + row.iter().zip(x).map(|(&a, &b)| a * b).sum::<T>()
        })
        .collect();
    Tensor::new(vec![m], out)
}

pub(crate) fn fc_dims<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize)> {
    let (m, n) = match weights.shape()[..] {
        [m, n] => (m, n),
        _ => {
            return Err(Error::dim(
                "fully_connected",
                format!("weights must be m×n, got {:?}", weights.shape()),
            ))
        }
    };
    if input.len() != n || input.shape().len() != 1 {
        return Err(Error::dim(
            "fully_connected",
            format!("input shape {:?}, weights expect [{n}]", input.shape()),
        ));
    }
    if bias.shape() != [m] {
        return Err(Error::dim(
            "fully_connected",
            format!("bias shape {:?}, expected [{m}]", bias.shape()),
        ));
    }
    Ok((m, n))
}

pub fn relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// `ln(1 + eˣ)` as `max(x, 0) + ln(1 + e^{−|x|})`.
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Derivative of softplus: the logistic sigmoid.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    /// Quadruple loop over the padded input, written independently of the
    /// run-based kernels above.
    fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (ci_n, h, w) = x.dims3().unwrap();
        let (co_n, ks) = (k.shape()[0], k.shape()[2]);
        let oh = (h + 2 * pad - ks) / stride + 1;
        let ow = (w + 2 * pad - ks) / stride + 1;
        let mut out = Tensor::zeros(vec![co_n, oh, ow]);
        for co in 0..co_n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..ci_n {
                        for ky in 0..ks {
                            for kx in 0..ks {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += x.at3(ci, iy as usize, ix as usize)
                                        * k.data()[((co * ci_n + ci) * ks + ky) * ks + kx];
                                }
                            }
                        }
                    }
                    out.data_mut()[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_scalar_product() {
        let out = conv2d(&t(&[1, 1, 1], &[2.0]), &t(&[1, 1, 1, 1], &[3.0]), None, ConvSpec::new(1, 0)).unwrap();
        assert_eq!(out.shape(), [1, 1, 1]);
        assert_eq!(out.data(), [6.0]);
    }

    #[test]
    fn conv_block_sum() {
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let k = t(&[1, 1, 2, 2], &[1.0; 4]);
        let out = conv2d(&x, &k, None, ConvSpec::new(2, 0)).unwrap();
        assert_eq!(out.data(), [10.0]);
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(stride, pad, ks, h) in &[(1, 1, 3, 8), (2, 0, 2, 8), (3, 1, 3, 10), (1, 0, 1, 5), (4, 0, 4, 16)] {
            let x = Tensor::<f64>::randn(vec![2, h, h], 1.0, &mut rng);
            let k = Tensor::<f64>::randn(vec![4, 2, ks, ks], 1.0, &mut rng);
            let fast = conv2d(&x, &k, None, ConvSpec::new(stride, pad)).unwrap();
            let slow = naive_conv(&x, &k, stride, pad);
            assert!(fast.max_abs_diff(&slow).unwrap() <= 1e-12, "stride {stride} pad {pad}");
        }
    }

    #[test]
    fn conv_bias_added_per_channel() {
        let x = Tensor::<f64>::zeros(vec![1, 3, 3]);
        let k = Tensor::<f64>::zeros(vec![2, 1, 3, 3]);
        let b = t(&[2], &[0.5, -1.0]);
        let out = conv2d(&x, &k, Some(&b), ConvSpec::same3(None)).unwrap();
        assert!(out.data()[..9].iter().all(|&v| v == 0.5));
        assert!(out.data()[9..].iter().all(|&v| v == -1.0));
    }

    #[test]
    fn conv_rejects_bad_arguments() {
        let x = Tensor::<f64>::zeros(vec![2, 4, 4]);
        let k = Tensor::<f64>::zeros(vec![1, 3, 3, 3]);
        assert!(matches!(conv2d(&x, &k, None, ConvSpec::new(1, 1)), Err(Error::Dimension { .. })));
        let k = Tensor::<f64>::zeros(vec![1, 2, 3, 3]);
        assert!(conv2d(&x, &k, None, ConvSpec::new(0, 1)).is_err());
        let k = Tensor::<f64>::zeros(vec![1, 2, 7, 7]);
        assert!(conv2d(&x, &k, None, ConvSpec::new(1, 1)).is_err());
    }

    #[test]
    fn tiled_conv_equals_per_tile_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::randn(vec![2, 8, 12], 1.0, &mut rng);
        let k = Tensor::<f64>::randn(vec![3, 2, 3, 3], 1.0, &mut rng);
        let tiled = conv2d(&x, &k, None, ConvSpec::same3(Some(4))).unwrap();
        for ty in 0..2 {
            for tx in 0..3 {
                let mut tile = Tensor::<f64>::zeros(vec![2, 4, 4]);
                for c in 0..2 {
                    for y in 0..4 {
                        for xx in 0..4 {
                            tile.data_mut()[(c * 4 + y) * 4 + xx] = x.at3(c, ty * 4 + y, tx * 4 + xx);
                        }
                    }
                }
                let alone = conv2d(&tile, &k, None, ConvSpec::same3(None)).unwrap();
                for c in 0..3 {
                    for y in 0..4 {
                        for xx in 0..4 {
                            assert_eq!(alone.at3(c, y, xx), tiled.at3(c, ty * 4 + y, tx * 4 + xx));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn conv1x1_is_dot_product() {
        let out = conv1x1(&t(&[2, 1, 1], &[2.0, 3.0]), &t(&[1, 2, 1, 1], &[5.0, 7.0])).unwrap();
        assert_eq!(out.data(), [31.0]);
        let x = t(&[1, 2, 2], &[1.0, -2.0, 3.5, 4.0]);
        assert_eq!(conv1x1(&x, &t(&[1, 1, 1, 1], &[1.0])).unwrap(), x);
        assert!(conv1x1(&x, &t(&[1, 1, 3, 3], &[0.0; 9])).is_err());
    }

    #[test]
    fn conv1x1_matches_matrix_vector_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::randn(vec![16, 4, 4], 1.0, &mut rng);
        let k = Tensor::<f64>::randn(vec![9, 16, 1, 1], 1.0, &mut rng);
        let out = conv1x1(&x, &k).unwrap();
        for co in 0..9 {
            for p in 0..16 {
                let want: f64 = (0..16).map(|ci| k.data()[co * 16 + ci] * x.data()[ci * 16 + p]).sum();
                assert!((out.data()[co * 16 + p] - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn pixel_shuffle_index_formula() {
        let out = pixel_shuffle(&t(&[4, 1, 1], &[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        assert_eq!(out.shape(), [1, 2, 2]);
        assert_eq!(out.data(), [1.0, 2.0, 3.0, 4.0]);
        let x = t(&[2, 1, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(pixel_shuffle(&x, 1).unwrap(), x);
        assert!(matches!(pixel_shuffle(&x, 2), Err(Error::Dimension { .. })));
    }

    #[test]
    fn fully_connected_examples() {
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let out = fully_connected(&t(&[2], &[3.0, 5.0]), &eye, &t(&[2], &[0.0, 0.0])).unwrap();
        assert_eq!(out.data(), [3.0, 5.0]);
        let out = fully_connected(&t(&[2], &[1.0, 1.0]), &t(&[1, 2], &[1.0, 1.0]), &t(&[1], &[-2.0])).unwrap();
        assert_eq!(out.data(), [0.0]);
        assert!(fully_connected(&t(&[3], &[1.0; 3]), &eye, &t(&[2], &[0.0; 2])).is_err());
    }

    #[test]
    fn activation_values() {
        assert_eq!([-1.0, 0.0, 2.0].map(relu::<f64>), [0.0, 0.0, 2.0]);
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(800.0f64), 800.0);
        assert!(softplus(-800.0f64) >= 0.0);
    }
}
