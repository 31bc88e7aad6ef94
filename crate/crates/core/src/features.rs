//! Minimum-eigenvalue ("good features to track") corner detection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{gradient, Field, GrayImage};

/// A detected corner at pixel precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub x: f64,
    pub y: f64,
    /// Smaller eigenvalue of the structure tensor at this pixel.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    pub max_features: usize,
    /// Fraction of the strongest response a candidate must reach.
    pub quality_level: f64,
    /// Minimum Euclidean distance between accepted features, in pixels.
    pub min_distance: f64,
    /// Side of the square structure-tensor window; odd, at least 3.
    pub block_size: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            max_features: 2000,
            quality_level: 0.01,
            min_distance: 3.0,
            block_size: 5,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_features == 0 {
            return Err(Error::InvalidParams("max_features must be at least 1".into()));
        }
        if !(self.quality_level > 0.0 && self.quality_level <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "quality_level must lie in (0, 1], got {}",
                self.quality_level
            )));
        }
        if !(self.min_distance >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "min_distance must be non-negative, got {}",
                self.min_distance
            )));
        }
        check_block(self.block_size)
    }
}

fn check_block(block_size: usize) -> Result<()> {
    if block_size < 3 || block_size.is_multiple_of(2) {
        return Err(Error::InvalidParams(format!(
            "block_size must be odd and at least 3, got {block_size}"
        )));
    }
    Ok(())
}

/// Per-pixel smaller eigenvalue of the box-windowed structure tensor.
pub fn corner_response(img: &GrayImage, block_size: usize) -> Result<Field> {
    check_block(block_size)?;
    if img.width() < block_size || img.height() < block_size {
        return Err(Error::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            min: block_size,
        });
    }
    let (gx, gy) = gradient(img)?;
    let (w, h) = (img.width(), img.height());
    let xx: Vec<f32> = gx.data.iter().map(|v| v * v).collect();
    let xy: Vec<f32> = gx.data.iter().zip(&gy.data).map(|(a, b)| a * b).collect();
    let yy: Vec<f32> = gy.data.iter().map(|v| v * v).collect();
    let sxx = box_sum(&xx, w, h, block_size / 2);
    let sxy = box_sum(&xy, w, h, block_size / 2);
    let syy = box_sum(&yy, w, h, block_size / 2);

    let data = (0..w * h)
        .map(|i| min_eigenvalue(sxx[i], sxy[i], syy[i]) as f32)
        .collect();
    Ok(Field {
        width: w,
        height: h,
        data,
    })
}

/// Smaller eigenvalue of the symmetric matrix `[[a, b], [b, c]]`.
#[inline]
pub(crate) fn min_eigenvalue(a: f64, b: f64, c: f64) -> f64 {
    let half_trace = 0.5 * (a + c);
    let half_diff = 0.5 * (a - c);
    (half_trace - half_diff.hypot(b)).max(0.0)
}

/// Sum over a `(2r+1)^2` window, replicating edge pixels.
fn box_sum(src: &[f32], w: usize, h: usize, r: usize) -> Vec<f64> {
    let r = r as isize;
    let mut horiz = vec![0.0f64; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0f64;
            for dx in -r..=r {
                let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                acc += row[xx] as f64;
            }
            horiz[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f64; w * h];
    for y in 0..h {
        for dy in -r..=r {
            let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
            let (dst, src) = (&mut out[y * w..(y + 1) * w], &horiz[yy * w..(yy + 1) * w]);
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    out
}

/// Detects up to `max_features` corners, strongest first, no two closer
/// than `min_distance`. Equal scores are ordered by `(y, x)`.
pub fn detect_features(img: &GrayImage, params: &DetectorParams) -> Result<Vec<Feature>> {
    params.validate()?;
    let response = corner_response(img, params.block_size)?;
    let max = response.max();
    if !(max > 0.0) {
        return Ok(Vec::new());
    }
    let threshold = (params.quality_level * max as f64) as f32;
    let w = response.width;
    let mut candidates: Vec<(f32, usize)> = response
        .data
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= threshold && s > 0.0)
        .map(|(i, &s)| (s, i))
        .collect();
    // Row-major index order is exactly (y, x) lexicographic order.
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut grid = SpacingGrid::new(w, response.height, params.min_distance);
    let mut out = Vec::new();
    for (score, idx) in candidates {
        if out.len() >= params.max_features {
            break;
        }
        let (x, y) = ((idx % w) as f64, (idx / w) as f64);
        if grid.try_insert(x, y) {
            out.push(Feature {
                x,
                y,
                score: score as f64,
            });
        }
    }
    Ok(out)
}

/// Bucketed point set answering "is anything closer than `min_distance`?".
struct SpacingGrid {
    cell: f64,
    cols: usize,
    rows: usize,
    cells: Vec<Vec<(f64, f64)>>,
    min_distance: f64,
}

impl SpacingGrid {
    fn new(width: usize, height: usize, min_distance: f64) -> Self {
        let cell = min_distance.max(1.0);
        let cols = (width as f64 / cell).ceil() as usize + 1;
        let rows = (height as f64 / cell).ceil() as usize + 1;
        SpacingGrid {
            cell,
            cols,
            rows,
            cells: vec![Vec::new(); cols * rows],
            min_distance,
        }
    }

    fn try_insert(&mut self, x: f64, y: f64) -> bool {
        let cx = (x / self.cell) as usize;
        let cy = (y / self.cell) as usize;
        if self.min_distance > 0.0 {
            let min_sq = self.min_distance * self.min_distance;
            for ny in cy.saturating_sub(1)..=(cy + 1).min(self.rows - 1) {
                for nx in cx.saturating_sub(1)..=(cx + 1).min(self.cols - 1) {
                    let near = self.cells[ny * self.cols + nx]
                        .iter()
                        .any(|&(px, py)| (px - x).powi(2) + (py - y).powi(2) < min_sq);
                    if near {
                        return false;
                    }
                }
            }
        }
        self.cells[cy * self.cols + cx].push((x, y));
        true
    }
}

/// Copies the `side x side` patch centred on the feature's nearest pixel.
pub fn extract_patch(img: &GrayImage, feature: &Feature, side: usize) -> Result<GrayImage> {
    let err = || Error::PatchOutOfBounds {
        x: feature.x,
        y: feature.y,
        side,
    };
    if side.is_multiple_of(2) {
        return Err(Error::InvalidParams(format!("patch side must be odd, got {side}")));
    }
    let half = (side / 2) as i64;
    let (cx, cy) = (feature.x.round() as i64, feature.y.round() as i64);
    if cx - half < 0
        || cy - half < 0
        || cx + half >= img.width() as i64
        || cy + half >= img.height() as i64
    {
        return Err(err());
    }
    img.crop(&crate::image::Roi::new(
        (cx - half) as usize,
        (cy - half) as usize,
        side,
        side,
    ))
}
