//! Binary portable graymap (P5) I/O and block padding.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn format_err(offset: usize, detail: impl Into<String>) -> Error {
    Error::Format {
        what: "graymap",
        offset: offset as u64,
        detail: detail.into(),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        let mut v: usize = 0;
        while let Some(&b) = self.bytes.get(self.pos).filter(|b| b.is_ascii_digit()) {
            v = v
                .checked_mul(10)
                .and_then(|v| v.checked_add((b - b'0') as usize))
                .ok_or_else(|| format_err(start, format!("{what} overflows")))?;
            self.pos += 1;
        }
        if self.pos == start {
            return Err(format_err(start, format!("expected {what}")));
        }
        Ok(v)
    }
}

/// Decodes a binary graymap into a `1×H×W` plane scaled to `[0, 1]` by the
/// file's maxval.
pub fn decode_pgm<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    if !bytes.starts_with(b"P5") {
        return Err(format_err(0, "missing P5 magic"));
    }
    let mut c = Cursor { bytes, pos: 2 };
    let w = c.number("width")?;
    let h = c.number("height")?;
    let maxval_at = c.pos;
    let maxval = c.number("maxval")?;
    if w == 0 || h == 0 {
        return Err(format_err(maxval_at, format!("empty image {w}×{h}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format_err(maxval_at, format!("maxval {maxval} outside 1..=65535")));
    }
    match bytes.get(c.pos) {
        Some(b) if b.is_ascii_whitespace() => c.pos += 1,
        _ => return Err(format_err(c.pos, "expected a single whitespace before the raster")),
    }
    let depth = if maxval < 256 { 1 } else { 2 };
    let len = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(depth))
        .ok_or_else(|| format_err(maxval_at, format!("dimensions {w}×{h} overflow")))?;
    let payload = &bytes[c.pos..];
    if payload.len() < len {
        return Err(format_err(
            bytes.len(),
            format!("raster truncated: {} of {len} bytes", payload.len()),
        ));
    }
    let scale = T::lit(maxval as f64);
    let data = if depth == 1 {
        payload[..len].iter().map(|&b| T::lit(b as f64) / scale).collect()
    } else {
        payload[..len]
            .chunks_exact(2)
            .map(|p| T::lit(u16::from_be_bytes([p[0], p[1]]) as f64) / scale)
            .collect()
    };
    Tensor::new(vec![1, h, w], data)
}

/// Maps an intensity to a byte: clamp to `[0, 1]`, scale by 255, round half
/// away from zero. NaN maps to 0.
pub fn quantize<T: Scalar>(v: T) -> u8 {
    let v = v.to_f64_lossless();
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a `1×H×W` plane as an 8-bit binary graymap.
pub fn encode_pgm<T: Scalar>(img: &Tensor<T>) -> Result<Vec<u8>> {
    let (c, h, w) = img.dims3()?;
    if c != 1 {
        return Err(Error::dim("graymap", format!("expected one channel, got {c}")));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

/// The image as [`encode_pgm`] followed by [`decode_pgm`] would return it.
pub fn quantized<T: Scalar>(img: &Tensor<T>) -> Tensor<T> {
    img.map(|v| T::lit(quantize(v) as f64) / T::lit(255.0))
}

pub fn read_pgm<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

pub fn write_pgm<T: Scalar>(path: &Path, img: &Tensor<T>) -> Result<()> {
    std::fs::write(path, encode_pgm(img)?).map_err(|e| Error::io(path, e))
}

/// Mirror index for position `i ≥ 0` over an axis of length `n`, without
/// repeating the edge sample (`… 2 1 | 0 1 2 … n−1 | n−2 …`).
pub fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Extends a `1×H×W` plane on the right and bottom to `out_h×out_w` by
/// reflection.
pub fn reflect_extend<T: Scalar>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = img.dims3()?;
    if c != 1 || out_h < h || out_w < w {
        return Err(Error::dim(
            "reflect_extend",
            format!("cannot extend {:?} to {out_h}×{out_w}", img.shape()),
        ));
    }
    let src = img.data();
    let mut data = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let row = &src[reflect_index(y, h) * w..][..w];
        data.extend((0..out_w).map(|x| row[reflect_index(x, w)]));
    }
    Tensor::new(vec![1, out_h, out_w], data)
}

/// Reflect-pads to the next multiples of `b`; returns the original size too.
pub fn pad_to_blocks<T: Scalar>(img: &Tensor<T>, b: usize) -> Result<(Tensor<T>, (usize, usize))> {
    if b < 2 {
        return Err(Error::InvalidArgument(format!("block size must be at least 2, got {b}")));
    }
    let (_, h, w) = img.dims3()?;
    Ok((reflect_extend(img, h.div_ceil(b) * b, w.div_ceil(b) * b)?, (h, w)))
}

/// Top-left `h×w` window of a `1×H×W` plane.
pub fn crop_back<T: Scalar>(img: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let (c, ph, pw) = img.dims3()?;
    if c != 1 || h > ph || w > pw {
        return Err(Error::dim("crop", format!("cannot crop {:?} to {h}×{w}", img.shape())));
    }
    let data = img.data().chunks(pw).take(h).flat_map(|r| r[..w].iter().copied()).collect();
    Tensor::new(vec![1, h, w], data)
}

/// `size×size` window whose top-left corner is `(y, x)`.
pub fn window<T: Scalar>(img: &Tensor<T>, y: usize, x: usize, size: usize) -> Result<Tensor<T>> {
    let (c, h, w) = img.dims3()?;
    if c != 1 || y + size > h || x + size > w {
        return Err(Error::dim("window", format!("{size}×{size} at ({y}, {x}) leaves {:?}", img.shape())));
    }
    let data = (y..y + size).flat_map(|r| img.data()[r * w + x..][..size].iter().copied()).collect();
    Tensor::new(vec![1, size, size], data)
}
