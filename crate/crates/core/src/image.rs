//! Raster types and the low-level image operations everything else builds on.
//!
//! Grayscale intensities are stored as `f32` in `[0, 1]`; 8-bit values only
//! appear at the PNG boundary and in [`RgbImage`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rec.601 luma weights.
const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// Smallest pyramid level side accepted by [`build_pyramid`].
pub const MIN_PYRAMID_SIDE: usize = 16;

/// Rectangular region of interest, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Roi {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Roi {
    pub fn new(x0: usize, y0: usize, width: usize, height: usize) -> Self {
        Roi {
            x0,
            y0,
            width,
            height,
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Roi::new(0, 0, width, height)
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.width > 0
            && self.height > 0
            && self.x0 + self.width <= width
            && self.y0 + self.height <= height
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 as f64
            && y >= self.y0 as f64
            && x < (self.x0 + self.width) as f64
            && y < (self.y0 + self.height) as f64
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn check(&self, width: usize, height: usize) -> Result<()> {
        if self.fits(width, height) {
            Ok(())
        } else {
            Err(Error::RoiOutOfBounds {
                roi: self.to_string(),
                width,
                height,
            })
        }
    }
}

impl fmt::Display for Roi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x0, self.y0, self.width, self.height)
    }
}

impl FromStr for Roi {
    type Err = String;

    /// Parses `X,Y,W,H`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("invalid roi '{s}': {e}"))?;
        match parts.as_slice() {
            &[x0, y0, w, h] if w > 0 && h > 0 => Ok(Roi::new(x0, y0, w, h)),
            _ => Err(format!("roi must be X,Y,W,H with W,H > 0, got '{s}'")),
        }
    }
}

/// 8-bit interleaved RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::InvalidParams(format!(
                "rgb buffer of {} bytes does not describe a {width}x{height} image",
                data.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        RgbImage {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn crop(&self, roi: &Roi) -> Result<RgbImage> {
        roi.check(self.width, self.height)?;
        let mut data = Vec::with_capacity(roi.area() * 3);
        for y in roi.y0..roi.y0 + roi.height {
            let start = (y * self.width + roi.x0) * 3;
            data.extend_from_slice(&self.data[start..start + roi.width * 3]);
        }
        Ok(RgbImage {
            width: roi.width,
            height: roi.height,
            data,
        })
    }

    /// Multiplies every channel by `gain`, rounding and saturating at 255.
    pub fn brightened(&self, gain: f64) -> Result<RgbImage> {
        check_gain(gain)?;
        let data = self
            .data
            .iter()
            .map(|&v| (v as f64 * gain).round().min(255.0) as u8)
            .collect();
        Ok(RgbImage {
            width: self.width,
            height: self.height,
            data,
        })
    }

    pub fn to_grayscale(&self) -> GrayImage {
        let data = self
            .data
            .chunks_exact(3)
            .map(|px| {
                let luma = LUMA[0] * px[0] as f32 + LUMA[1] * px[1] as f32 + LUMA[2] * px[2] as f32;
                (luma / 255.0).clamp(0.0, 1.0)
            })
            .collect();
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Single-channel image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::InvalidParams(format!(
                "buffer of {} values does not describe a {width}x{height} image",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParams(format!(
                "intensity {bad} outside [0, 1]"
            )));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    /// Builds an image from a per-pixel function; values are clamped to `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        GrayImage {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        GrayImage {
            width,
            height,
            data: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    pub fn from_luma8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height {
            return Err(Error::InvalidParams(format!(
                "luma buffer of {} bytes does not describe a {width}x{height} image",
                bytes.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            data: bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        })
    }

    pub fn to_luma8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    /// Replicates the intensity into three 8-bit channels.
    pub fn to_rgb(&self) -> RgbImage {
        let data = self
            .to_luma8()
            .into_iter()
            .flat_map(|v| [v, v, v])
            .collect();
        RgbImage {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    pub fn crop(&self, roi: &Roi) -> Result<GrayImage> {
        roi.check(self.width, self.height)?;
        let mut data = Vec::with_capacity(roi.area());
        for y in roi.y0..roi.y0 + roi.height {
            let start = y * self.width + roi.x0;
            data.extend_from_slice(&self.data[start..start + roi.width]);
        }
        Ok(GrayImage {
            width: roi.width,
            height: roi.height,
            data,
        })
    }

    pub fn brightened(&self, gain: f64) -> Result<GrayImage> {
        check_gain(gain)?;
        let gain = gain as f32;
        Ok(GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| (v * gain).min(1.0)).collect(),
        })
    }

    /// Whether `(x, y)` lies in the closed sampling domain `[0, w-1] x [0, h-1]`.
    #[inline]
    pub fn in_domain(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }

    /// Bilinear interpolation of the four pixels around `(x, y)`.
    pub fn sample(&self, x: f64, y: f64) -> Result<f32> {
        if !self.in_domain(x, y) {
            return Err(Error::OutOfBounds {
                x,
                y,
                width: self.width,
                height: self.height,
            });
        }
        Ok(self.sample_unchecked(x, y))
    }

    /// Bilinear sample without the domain check. Callers guarantee
    /// [`GrayImage::in_domain`].
    #[inline]
    pub(crate) fn sample_unchecked(&self, x: f64, y: f64) -> f32 {
        bilinear(&self.data, self.width, self.height, x, y)
    }

    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        GrayImage {
            width,
            height,
            data,
        }
    }
}

#[inline]
fn bilinear(data: &[f32], width: usize, height: usize, x: f64, y: f64) -> f32 {
    let x0 = (x.floor() as usize).min(width - 1);
    let y0 = (y.floor() as usize).min(height - 1);
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = (x - x0 as f64) as f32;
    let fy = (y - y0 as f64) as f32;
    let top = data[y0 * width + x0] * (1.0 - fx) + data[y0 * width + x1] * fx;
    let bottom = data[y1 * width + x0] * (1.0 - fx) + data[y1 * width + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

fn check_gain(gain: f64) -> Result<()> {
    if gain > 0.0 && gain.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidGain(gain))
    }
}

/// Real-valued raster without a range constraint (gradients, responses).
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Field {
    pub fn zeros(width: usize, height: usize) -> Self {
        Field {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub(crate) fn sample_unchecked(&self, x: f64, y: f64) -> f32 {
        bilinear(&self.data, self.width, self.height, x, y)
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }
}

/// Converts RGB to grayscale with Rec.601 weights.
pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    img.to_grayscale()
}

/// Per-pixel `|a - b|`.
pub fn absolute_difference(a: &GrayImage, b: &GrayImage) -> Result<GrayImage> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(a.width, a.height, b.width, b.height));
    }
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(p, q)| (p - q).abs())
        .collect();
    Ok(GrayImage::from_raw(a.width, a.height, data))
}

/// Sobel derivatives scaled by 1/8, so a ramp of slope `s` gives gradient `s`.
/// Borders replicate the edge pixels.
pub fn gradient(img: &GrayImage) -> Result<(Field, Field)> {
    if img.width < 3 || img.height < 3 {
        return Err(Error::ImageTooSmall {
            width: img.width,
            height: img.height,
            min: 3,
        });
    }
    let (w, h) = (img.width, img.height);
    let mut gx = Field::zeros(w, h);
    let mut gy = Field::zeros(w, h);
    for y in 0..h {
        let yi = y as isize;
        for x in 0..w {
            let xi = x as isize;
            let p = |dx: isize, dy: isize| img.get_clamped(xi + dx, yi + dy);
            let dx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let dy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            gx.data[y * w + x] = dx / 8.0;
            gy.data[y * w + x] = dy / 8.0;
        }
    }
    Ok((gx, gy))
}

/// Gaussian pyramid; level 0 is full resolution.
#[derive(Debug, Clone)]
pub struct Pyramid {
    levels: Vec<GrayImage>,
}

impl Pyramid {
    pub fn levels(&self) -> &[GrayImage] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &GrayImage {
        &self.levels[k]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn base(&self) -> &GrayImage {
        &self.levels[0]
    }
}

/// Builds `levels` pyramid levels with a 5-tap binomial blur before each
/// 2x decimation.
pub fn build_pyramid(img: &GrayImage, levels: usize) -> Result<Pyramid> {
    if levels == 0 {
        return Err(Error::InvalidParams("pyramid needs at least one level".into()));
    }
    let (mut w, mut h) = (img.width, img.height);
    for _ in 1..levels {
        w /= 2;
        h /= 2;
    }
    if levels > 1 && w.min(h) < MIN_PYRAMID_SIDE {
        return Err(Error::TooManyLevels {
            levels,
            width: img.width,
            height: img.height,
        });
    }
    let mut out = Vec::with_capacity(levels);
    out.push(img.clone());
    for _ in 1..levels {
        let next = downsample(out.last().expect("non-empty"));
        out.push(next);
    }
    Ok(Pyramid { levels: out })
}

fn downsample(img: &GrayImage) -> GrayImage {
    const TAPS: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let (w, h) = (img.width, img.height);
    let (nw, nh) = (w / 2, h / 2);
    // Horizontal pass only at the even columns that survive decimation.
    let mut tmp = vec![0.0f32; nw * h];
    for y in 0..h {
        for nx in 0..nw {
            let cx = (2 * nx) as isize;
            let mut acc = 0.0;
            for (k, t) in TAPS.iter().enumerate() {
                acc += t * img.get_clamped(cx + k as isize - 2, y as isize);
            }
            tmp[y * nw + nx] = acc;
        }
    }
    let mut data = vec![0.0f32; nw * nh];
    for ny in 0..nh {
        let cy = (2 * ny) as isize;
        for nx in 0..nw {
            let mut acc = 0.0;
            for (k, t) in TAPS.iter().enumerate() {
                let yy = (cy + k as isize - 2).clamp(0, h as isize - 1) as usize;
                acc += t * tmp[yy * nw + nx];
            }
            data[ny * nw + nx] = acc.clamp(0.0, 1.0);
        }
    }
    GrayImage::from_raw(nw, nh, data)
}
