//! Frame ingestion: binary PPM decoding, bilinear resizing and tensorisation.

use thiserror::Error;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Working resolution of the shipped network configs.
pub const FRAME_SIZE: usize = 416;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PpmError {
    #[error("bad magic: expected P6")]
    BadMagic,
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("unsupported maxval {0}, only 255 is accepted")]
    UnsupportedMaxval(u32),
    #[error("truncated pixel data: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
}

/// Decoded RGB raster, row-major, 8 bits per channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl ImageBuffer {
    /// `pixels` holds `width·height` RGB triples.
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Option<Self> {
        (width >= 1 && height >= 1 && pixels.len() == width * height * 3).then_some(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let o = (y * self.width + x) * 3;
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&c) = self.bytes.get(self.pos) {
            if c == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, field: &str) -> Result<u32, PpmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PpmError::BadHeader(format!("missing {field}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PpmError::BadHeader(format!("{field} out of range")))
    }
}

/// Decodes a binary P6 PPM with maxval 255.
pub fn decode_ppm(bytes: &[u8]) -> Result<ImageBuffer, PpmError> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(PpmError::BadMagic);
    }
    let mut r = HeaderReader { bytes, pos: 2 };
    let width = r.number("width")? as usize;
    let height = r.number("height")? as usize;
    let maxval = r.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(PpmError::BadHeader(format!("degenerate size {width}x{height}")));
    }
    if maxval != 255 {
        return Err(PpmError::UnsupportedMaxval(maxval));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(r.pos) {
        Some(c) if c.is_ascii_whitespace() => r.pos += 1,
        _ => return Err(PpmError::BadHeader("missing separator after maxval".into())),
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| PpmError::BadHeader("image too large".into()))?;
    let raster = &bytes[r.pos..];
    if raster.len() < expected {
        return Err(PpmError::Truncated {
            expected,
            got: raster.len(),
        });
    }
    Ok(ImageBuffer {
        width,
        height,
        pixels: raster[..expected].to_vec(),
    })
}

pub fn encode_ppm(img: &ImageBuffer) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Bilinear resize with half-pixel centers: `src = (dst + 0.5)·scale − 0.5`,
/// clamped to the source rectangle, rounded to the nearest integer.
pub fn resize_bilinear(img: &ImageBuffer, out_w: usize, out_h: usize) -> ImageBuffer {
    assert!(out_w >= 1 && out_h >= 1, "output size must be positive");
    if out_w == img.width && out_h == img.height {
        return img.clone();
    }
    let taps = |dst_len: usize, src_len: usize| -> Vec<(usize, usize, f64)> {
        let scale = src_len as f64 / dst_len as f64;
        let max = (src_len - 1) as f64;
        (0..dst_len)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(src_len - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = taps(out_w, img.width);
    let ys = taps(out_h, img.height);
    let mut pixels = Vec::with_capacity(out_w * out_h * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let (p00, p01) = (img.get(x0, y0), img.get(x1, y0));
            let (p10, p11) = (img.get(x0, y1), img.get(x1, y1));
            for c in 0..3 {
                let top = p00[c] as f64 * (1.0 - fx) + p01[c] as f64 * fx;
                let bottom = p10[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                pixels.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    ImageBuffer {
        width: out_w,
        height: out_h,
        pixels,
    }
}

/// Channel-first `[3,H,W]` tensor with values scaled to `[0,1]`.
pub fn to_input_tensor<T: Scalar>(img: &ImageBuffer) -> Tensor<T> {
    let plane = img.width * img.height;
    let mut data = vec![T::ZERO; 3 * plane];
    let inv = 1.0 / 255.0;
    for (p, rgb) in img.pixels.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + p] = T::from_f64(rgb[c] as f64 * inv);
        }
    }
    Tensor::from_vec(&[3, img.height, img.width], data).expect("buffer dimensions are positive")
}
