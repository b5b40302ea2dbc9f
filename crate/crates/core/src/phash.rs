//! 64-bit DCT perceptual hash.
//!
//! The image is resized to 32x32 with bilinear sampling, transformed with a
//! 2-D DCT-II, and the top-left 8x8 block of coefficients is thresholded
//! against the median of its 63 AC coefficients. Bit `i` (least significant
//! first) corresponds to coefficient `i` of the block in row-major order.

use std::f64::consts::PI;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

const SIZE: usize = 32;
const BLOCK: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum PhashError {
    #[error("image is empty")]
    EmptyImage,
    #[error("pixel buffer has {got} values, expected {width}x{height}")]
    BadBuffer { width: usize, height: usize, got: usize },
    #[error("could not decode image: {0}")]
    Decode(String),
}

/// Row-major grayscale pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, PhashError> {
        if width == 0 || height == 0 {
            return Err(PhashError::EmptyImage);
        }
        if pixels.len() != width * height {
            return Err(PhashError::BadBuffer {
                width,
                height,
                got: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_u8(width: usize, height: usize, pixels: &[u8]) -> Result<Self, PhashError> {
        Self::new(width, height, pixels.iter().map(|&p| p as f64).collect())
    }

    /// Decodes a PNG or JPEG into luma.
    pub fn decode(bytes: &[u8]) -> Result<Self, PhashError> {
        let img = image::load_from_memory(bytes)
            .map_err(|e| PhashError::Decode(e.to_string()))?
            .into_luma8();
        let (w, h) = img.dimensions();
        Self::from_u8(w as usize, h as usize, img.as_raw())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.at(x, y)
    }

    /// Bilinear resize using pixel-center alignment with edge clamping.
    pub fn resize_bilinear(&self, new_w: usize, new_h: usize) -> GrayImage {
        let sx = self.width as f64 / new_w as f64;
        let sy = self.height as f64 / new_h as f64;
        let mut out = Vec::with_capacity(new_w * new_h);
        for y in 0..new_h {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f64;
            for x in 0..new_w {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f64;
                let top = self.at(x0, y0) * (1.0 - wx) + self.at(x1, y0) * wx;
                let bottom = self.at(x0, y1) * (1.0 - wx) + self.at(x1, y1) * wx;
                out.push(top * (1.0 - wy) + bottom * wy);
            }
        }
        GrayImage {
            width: new_w,
            height: new_h,
            pixels: out,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PerceptualHash(pub u64);

impl PerceptualHash {
    pub fn hamming(self, other: PerceptualHash) -> u32 {
        (self.0 ^ other.0).count_ones()
    }

    pub fn bit(self, i: usize) -> bool {
        (self.0 >> i) & 1 == 1
    }

    pub fn to_hex(self) -> String {
        format!("{:016x}", self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 16 {
            return None;
        }
        u64::from_str_radix(s, 16).ok().map(PerceptualHash)
    }
}

impl fmt::Display for PerceptualHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for PerceptualHash {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PerceptualHash {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PerceptualHash::from_hex(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid 64-bit hex hash {s:?}")))
    }
}

/// Orthonormal DCT-II basis, `table[u][x]`.
fn dct_table() -> &'static [[f64; SIZE]; SIZE] {
    static TABLE: OnceLock<[[f64; SIZE]; SIZE]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [[0.0; SIZE]; SIZE];
        let n = SIZE as f64;
        for (u, row) in t.iter_mut().enumerate() {
            let scale = if u == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            for (x, c) in row.iter_mut().enumerate() {
                *c = scale * (PI * (2.0 * x as f64 + 1.0) * u as f64 / (2.0 * n)).cos();
            }
        }
        t
    })
}

/// Top-left `BLOCK x BLOCK` coefficients of the 2-D DCT-II of a 32x32 grid.
fn dct_block(img: &GrayImage) -> [f64; BLOCK * BLOCK] {
    let t = dct_table();
    // rows first: tmp[y][u] = sum_x img[y][x] * t[u][x]
    let mut tmp = [[0.0f64; BLOCK]; SIZE];
    for (y, row) in tmp.iter_mut().enumerate() {
        for (u, out) in row.iter_mut().enumerate() {
            *out = (0..SIZE).map(|x| img.at(x, y) * t[u][x]).sum();
        }
    }
    let mut block = [0.0f64; BLOCK * BLOCK];
    for v in 0..BLOCK {
        for u in 0..BLOCK {
            block[v * BLOCK + u] = (0..SIZE).map(|y| tmp[y][u] * t[v][y]).sum();
        }
    }
    // Snap rounding noise so flat regions produce exact zeros.
    for c in &mut block {
        if c.abs() < 1e-9 {
            *c = 0.0;
        }
    }
    block
}

pub fn phash64(image: &GrayImage) -> PerceptualHash {
    let small = image.resize_bilinear(SIZE, SIZE);
    let block = dct_block(&small);
    let mut ac: Vec<f64> = block[1..].to_vec();
    ac.sort_by(|a, b| a.total_cmp(b));
    // 63 values: the median is the middle one.
    let median = ac[ac.len() / 2];
    let bits = block
        .iter()
        .enumerate()
        .filter(|(_, c)| **c > median)
        .fold(0u64, |acc, (i, _)| acc | (1u64 << i));
    PerceptualHash(bits)
}

/// Decodes an encoded image and hashes it.
pub fn phash_bytes(bytes: &[u8]) -> Result<PerceptualHash, PhashError> {
    Ok(phash64(&GrayImage::decode(bytes)?))
}
