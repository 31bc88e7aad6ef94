//! Synthetic frame pairs with exactly known camera motion and moving blocks.
//!
//! The scene is a procedural texture defined on the continuous plane, so
//! both frames are rendered by point evaluation with no resampling. In the
//! second frame each block's content is translated by its delta, the background optionally jitters by a smooth
//! random field, and the whole scene is then observed through the camera
//! homography (`frame_b(H p) = scene_b(p)`).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::image::{GrayImage, Roi};
use crate::io::save_gray;
use crate::motion::MotionField;
use crate::stabilize::Homography;

/// Cell sizes (px) and weights of the value-noise octaves.
const OCTAVES: [(f64, f64); 3] = [(23.0, 0.5), (11.0, 0.3), (5.0, 0.2)];
const CONTRAST: f64 = 1.6;
const JITTER_CELL: f64 = 32.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    /// Footprint in frame A.
    pub rect: Roi,
    /// Scene-space translation between the two frames, in pixels.
    pub delta: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub texture_seed: u64,
    /// Simulated hand-held camera motion, frame A to frame B.
    #[serde(default = "Homography::identity")]
    pub camera_h: Homography,
    #[serde(default)]
    pub blocks: Vec<Block>,
    /// Standard deviation of additive Gaussian noise on frame B.
    #[serde(default)]
    pub noise_sigma: f64,
    /// Approximate per-axis standard deviation (px) of smooth background
    /// displacement; 0 keeps the background rigid.
    #[serde(default)]
    pub jitter_sigma: f64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParams("scene must have positive size".into()));
        }
        if !(self.noise_sigma >= 0.0) || !(self.jitter_sigma >= 0.0) {
            return Err(Error::InvalidParams("noise and jitter sigmas must be non-negative".into()));
        }
        let (w, h) = (self.width as f64, self.height as f64);
        for (index, b) in self.blocks.iter().enumerate() {
            let r = &b.rect;
            let moved_inside = r.x0 as f64 + b.delta.x >= 0.0
                && r.y0 as f64 + b.delta.y >= 0.0
                && (r.x0 + r.width) as f64 + b.delta.x <= w
                && (r.y0 + r.height) as f64 + b.delta.y <= h;
            if !r.fits(self.width, self.height) || !moved_inside {
                return Err(Error::BlockOutOfBounds { index });
            }
        }
        Ok(())
    }
}

/// What actually happened between the two generated frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub width: usize,
    pub height: usize,
    pub camera_h: Homography,
    pub blocks: Vec<Block>,
}

impl GroundTruth {
    /// Index of the topmost block covering frame-A position `p`.
    pub fn block_at(&self, p: Point) -> Option<usize> {
        self.blocks.iter().rposition(|b| b.rect.contains(p.x, p.y))
    }

    /// Per-pixel membership: 0 for background, `k + 1` for block `k`.
    pub fn mask(&self) -> Vec<u8> {
        let mut m = vec![0u8; self.width * self.height];
        for (k, b) in self.blocks.iter().enumerate() {
            let r = &b.rect;
            for y in r.y0..r.y0 + r.height {
                m[y * self.width + r.x0..y * self.width + r.x0 + r.width].fill((k + 1).min(255) as u8);
            }
        }
        m
    }

    /// Residual a feature of block `k` at frame-A position `p` should show
    /// after camera compensation: `H(p + delta) - H(p)`.
    pub fn expected_residual(&self, k: usize, p: Point) -> Result<Point> {
        let delta = self.blocks[k].delta;
        Ok(self.camera_h.apply(p + delta)? - self.camera_h.apply(p)?)
    }

    pub fn mask_image(&self) -> GrayImage {
        let m = self.mask();
        GrayImage::from_fn(self.width, self.height, |x, y| if m[y * self.width + x] > 0 { 1.0 } else { 0.0 })
    }
}

/// Integer hash to `[0, 1)`.
fn lattice(seed: u64, octave: u64, ix: i64, iy: i64) -> f64 {
    let mut z = seed
        ^ octave.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (ix as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (iy as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn value_noise(seed: u64, octave: u64, x: f64, y: f64, cell: f64) -> f64 {
    let (gx, gy) = (x / cell, y / cell);
    let (ix, iy) = (gx.floor(), gy.floor());
    let (fx, fy) = (fade(gx - ix), fade(gy - iy));
    let (ix, iy) = (ix as i64, iy as i64);
    let v00 = lattice(seed, octave, ix, iy);
    let v10 = lattice(seed, octave, ix + 1, iy);
    let v01 = lattice(seed, octave, ix, iy + 1);
    let v11 = lattice(seed, octave, ix + 1, iy + 1);
    let top = v00 + (v10 - v00) * fx;
    let bottom = v01 + (v11 - v01) * fx;
    top + (bottom - top) * fy
}

/// Band-limited texture in `[0, 1]` defined on the whole plane.
fn texture(seed: u64, x: f64, y: f64) -> f64 {
    let total: f64 = OCTAVES.iter().map(|o| o.1).sum();
    let v = OCTAVES
        .iter()
        .enumerate()
        .map(|(k, &(cell, weight))| weight * value_noise(seed, k as u64, x, y, cell))
        .sum::<f64>()
        / total;
    (0.5 + CONTRAST * (v - 0.5)).clamp(0.0, 1.0)
}

/// Smooth zero-mean displacement with roughly `sigma` px per axis.
fn jitter(seed: u64, sigma: f64, p: Point) -> Point {
    if sigma == 0.0 {
        return Point::ZERO;
    }
    // Uniform lattice values have standard deviation 1/sqrt(12); rescale.
    let k = sigma * 12f64.sqrt();
    Point::new(
        k * (value_noise(seed ^ 0x5EED_0001, 7, p.x, p.y, JITTER_CELL) - 0.5),
        k * (value_noise(seed ^ 0x5EED_0002, 8, p.x, p.y, JITTER_CELL) - 0.5),
    )
}

fn scene_b(spec: &SceneSpec, p: Point) -> f64 {
    for b in spec.blocks.iter().rev() {
        let q = p - b.delta;
        if b.rect.contains(q.x, q.y) {
            return texture(spec.texture_seed, q.x, q.y);
        }
    }
    let q = p - jitter(spec.texture_seed, spec.jitter_sigma, p);
    texture(spec.texture_seed, q.x, q.y)
}

/// Renders both frames and the ground truth. Same spec, same bits.
pub fn generate_pair(spec: &SceneSpec) -> Result<(GrayImage, GrayImage, GroundTruth)> {
    spec.validate()?;
    let frame_a = GrayImage::from_fn(spec.width, spec.height, |x, y| {
        texture(spec.texture_seed, x as f64, y as f64) as f32
    });

    let inv = spec.camera_h.inverse()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.texture_seed ^ 0x0015_E5EE_D000_0000);
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidParams(e.to_string()))?;
    let frame_b = GrayImage::from_fn(spec.width, spec.height, |x, y| {
        let q = Point::new(x as f64, y as f64);
        let v = match inv.apply(q) {
            Ok(p) => scene_b(spec, p),
            Err(_) => 0.0,
        };
        let n = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        (v + n) as f32
    });

    let truth = GroundTruth {
        width: spec.width,
        height: spec.height,
        camera_h: spec.camera_h,
        blocks: spec.blocks.clone(),
    };
    Ok((frame_a, frame_b, truth))
}

/// Near-identity camera motion of a hand-held device: small zoom, roll,
/// translation and perspective.
pub fn random_camera_motion(rng: &mut impl Rng, width: usize, height: usize) -> Homography {
    let scale = rng.random_range(0.985..1.015);
    let angle = rng.random_range(-0.6f64..0.6).to_radians();
    let tx = rng.random_range(-4.0..4.0);
    let ty = rng.random_range(-4.0..4.0);
    let g = rng.random_range(-1.5e-5..1.5e-5);
    let h = rng.random_range(-1.5e-5..1.5e-5);
    // Rotate and zoom about the image centre.
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    let center = Homography::translation(-cx, -cy);
    let similarity = Homography::similarity(scale, angle, cx + tx, cy + ty);
    let affine = similarity.compose(&center).expect("invertible");
    persp_about_center(g, h, cx, cy).compose(&affine).expect("invertible")
}

fn persp_about_center(g: f64, h: f64, cx: f64, cy: f64) -> Homography {
    let to_center = Homography::translation(-cx, -cy);
    let back = Homography::translation(cx, cy);
    let persp = Homography::from_row_major([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, g, h, 1.0]).expect("invertible");
    back.compose(&persp.compose(&to_center).expect("invertible")).expect("invertible")
}

/// A scene whose single block covers `coverage` of the frame and falls by
/// `magnitude` px in a random mostly-downward direction.
pub fn random_block_scene(
    seed: u64,
    width: usize,
    height: usize,
    coverage: f64,
    magnitude: f64,
    with_camera: bool,
) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let camera_h = if with_camera {
        random_camera_motion(&mut rng, width, height)
    } else {
        Homography::identity()
    };
    let aspect = rng.random_range(0.6..1.6);
    let area = coverage * (width * height) as f64;
    let bw = ((area * aspect).sqrt().round() as usize).clamp(8, width / 2);
    let bh = ((area / bw as f64).round() as usize).clamp(8, height - 2 * magnitude.ceil() as usize - 8);
    let angle = rng.random_range(60.0f64..120.0).to_radians();
    let delta = Point::new(angle.cos() * magnitude, angle.sin() * magnitude);
    let margin = magnitude.ceil() as usize + 24;
    let x0 = rng.random_range(margin..(width - bw - margin).max(margin + 1));
    let y0 = rng.random_range(margin..(height - bh - margin).max(margin + 1));
    SceneSpec {
        width,
        height,
        texture_seed: rng.random(),
        camera_h,
        blocks: vec![Block {
            rect: Roi::new(x0, y0, bw, bh),
            delta,
        }],
        noise_sigma: 0.003,
        jitter_sigma: 0.0,
    }
}

/// How well a thresholded field matches the scene's true block motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthScore {
    pub surviving: usize,
    pub true_positives: usize,
    /// Tracked features whose origin lies on a block.
    pub block_resident: usize,
    /// `None` when nothing survived.
    pub precision: Option<f64>,
    /// `None` when no tracked feature lies on a block.
    pub recall: Option<f64>,
    /// Mean residual error of surviving vectors on each block.
    pub block_delta_error: Vec<Option<f64>>,
}

/// Scores `filtered` against the truth. A surviving vector is a true
/// positive when its origin is on block `k` and its residual is within
/// `tol` px of that block's expected residual; recall is measured against
/// the block-resident vectors of `unfiltered`.
pub fn score_against_truth(
    filtered: &MotionField,
    unfiltered: &MotionField,
    truth: &GroundTruth,
    tol: f64,
) -> Result<TruthScore> {
    for v in filtered.vectors.iter().chain(&unfiltered.vectors) {
        let o = v.origin;
        if o.x < 0.0 || o.y < 0.0 || o.x >= truth.width as f64 || o.y >= truth.height as f64 {
            return Err(Error::SceneMismatch(format!(
                "origin ({}, {}) outside {}x{} scene",
                o.x, o.y, truth.width, truth.height
            )));
        }
    }
    let mut tp = 0;
    let mut errors: Vec<(f64, usize)> = vec![(0.0, 0); truth.blocks.len()];
    for v in &filtered.vectors {
        if let Some(k) = truth.block_at(v.origin) {
            let err = v.residual_delta.distance(truth.expected_residual(k, v.origin)?);
            errors[k].0 += err;
            errors[k].1 += 1;
            if err <= tol {
                tp += 1;
            }
        }
    }
    let block_resident = unfiltered
        .vectors
        .iter()
        .filter(|v| truth.block_at(v.origin).is_some())
        .count();
    let surviving = filtered.len();
    Ok(TruthScore {
        surviving,
        true_positives: tp,
        block_resident,
        precision: (surviving > 0).then(|| tp as f64 / surviving as f64),
        recall: (block_resident > 0).then(|| tp as f64 / block_resident as f64),
        block_delta_error: errors
            .into_iter()
            .map(|(sum, n)| (n > 0).then(|| sum / n as f64))
            .collect(),
    })
}

/// Writes `frame_000001.png`, `frame_000002.png`, `truth.json`, `spec.json`
/// and `mask.png` into `dir`.
pub fn export_scene(spec: &SceneSpec, dir: &Path) -> Result<GroundTruth> {
    let (a, b, truth) = generate_pair(spec)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_gray(&a, &dir.join("frame_000001.png"))?;
    save_gray(&b, &dir.join("frame_000002.png"))?;
    save_gray(&truth.mask_image(), &dir.join("mask.png"))?;
    let write_json = |name: &str, value: serde_json::Value| -> Result<()> {
        let path = dir.join(name);
        let text = serde_json::to_string_pretty(&value)?;
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    };
    write_json("truth.json", serde_json::to_value(&truth)?)?;
    write_json("spec.json", serde_json::to_value(spec)?)?;
    Ok(truth)
}
