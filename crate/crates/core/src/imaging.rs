//! Bilinear demosaic and the lossless RGB8 raster used as the signed image payload.

use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::sensor::RawFrame;

pub const RASTER_MAGIC: &[u8; 4] = b"RGB8";
pub const RASTER_HEADER_LEN: usize = 12;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImagingError {
    #[error("demosaic needs even dimensions, got {0}x{1}")]
    OddDimensions(u32, u32),
    #[error("sample buffer does not match {0}x{1}")]
    SampleCount(u32, u32),
    #[error("raster: {0}")]
    Raster(#[from] DecodeError),
}

#[derive(Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    /// RGB triples, row-major
    pub pixels: Vec<u8>,
}

impl std::fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RgbImage({}x{})", self.width, self.height)
    }
}

impl RgbImage {
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// `RGB8` ‖ u32 width ‖ u32 height ‖ rows.
    pub fn to_raster(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(RASTER_HEADER_LEN + self.pixels.len());
        w.raw(RASTER_MAGIC).u32(self.width).u32(self.height).raw(&self.pixels);
        w.finish()
    }

    pub fn from_raster(bytes: &[u8]) -> Result<Self, ImagingError> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != RASTER_MAGIC {
            return Err(DecodeError::BadMagic.into());
        }
        let width = r.u32()?;
        let height = r.u32()?;
        let len = (width as usize)
            .checked_mul(height as usize)
            .and_then(|n| n.checked_mul(3))
            .ok_or(DecodeError::InvalidValue("raster dimensions"))?;
        let pixels = r.take(len)?.to_vec();
        r.expect_end()?;
        Ok(Self {
            width,
            height,
            pixels,
        })
    }
}

/// Reflect-101 border: -1 -> 1, n -> n-2.
#[inline]
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    j.clamp(0, n - 1) as usize
}

/// Bilinear demosaic. Each missing channel is the rounded mean of the
/// same-colour samples in the 3x3 neighbourhood (mirrored at the borders);
/// the 10-bit result is reduced to 8 bits with `>> 2`.
pub fn demosaic(frame: &RawFrame) -> Result<RgbImage, ImagingError> {
    let (w, h) = (frame.width as usize, frame.height as usize);
    if w == 0 || h == 0 || w % 2 != 0 || h % 2 != 0 {
        return Err(ImagingError::OddDimensions(frame.width, frame.height));
    }
    if frame.samples.len() != w * h {
        return Err(ImagingError::SampleCount(frame.width, frame.height));
    }
    let order = frame.bayer_order;
    let s = &frame.samples;
    let mut pixels = vec![0u8; w * h * 3];

    let cols: Vec<[usize; 3]> = (0..w as isize)
        .map(|x| [mirror(x - 1, w), x as usize, mirror(x + 1, w)])
        .collect();

    for y in 0..h {
        let rows = [mirror(y as isize - 1, h), y, mirror(y as isize + 1, h)];
        for x in 0..w {
            let own = order.channel_at(x, y) as usize;
            let mut sum = [0u32; 3];
            let mut count = [0u32; 3];
            for &ny in &rows {
                let base = ny * w;
                for &nx in &cols[x] {
                    let c = order.channel_at(nx, ny) as usize;
                    sum[c] += s[base + nx] as u32;
                    count[c] += 1;
                }
            }
            let out = &mut pixels[(y * w + x) * 3..(y * w + x) * 3 + 3];
            for c in 0..3 {
                let v = if c == own {
                    s[y * w + x] as u32
                } else {
                    (sum[c] + count[c] / 2) / count[c]
                };
                out[c] = (v >> 2) as u8;
            }
        }
    }
    Ok(RgbImage {
        width: frame.width,
        height: frame.height,
        pixels,
    })
}
