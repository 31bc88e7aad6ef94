//! Pyramidal Lucas-Kanade sparse tracking with forward-backward validation.
//!
//! Each feature is aligned coarse-to-fine. At every level the spatial
//! gradient matrix `G` is accumulated once from the template frame and the
//! displacement is refined by Gauss-Newton steps `G d = e` until the step
//! norm drops below `epsilon`.

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::features::{min_eigenvalue, Feature};
use crate::geometry::Point;
use crate::image::{gradient, Field, Pyramid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackParams {
    /// Side of the square alignment window; odd, at least 3.
    pub window: usize,
    pub pyramid_levels: usize,
    pub max_iterations: usize,
    /// Convergence threshold on the per-iteration step norm, in pixels.
    pub epsilon: f64,
    /// Largest accepted forward-backward error, in pixels.
    pub fb_threshold: f64,
    /// Floor on `lambda_min(G) / window^2`; weaker windows are reported lost.
    pub min_eig_threshold: f64,
    /// Run the forward-backward check after tracking.
    pub forward_backward: bool,
}

impl Default for TrackParams {
    fn default() -> Self {
        TrackParams {
            window: 15,
            pyramid_levels: 3,
            max_iterations: 30,
            epsilon: 0.01,
            fb_threshold: 1.0,
            min_eig_threshold: 1e-4,
            forward_backward: true,
        }
    }
}

impl TrackParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.window < 3 || self.window.is_multiple_of(2) {
            return bad(format!("window must be odd and at least 3, got {}", self.window));
        }
        if self.pyramid_levels == 0 {
            return bad("pyramid_levels must be at least 1".into());
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1".into());
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.fb_threshold > 0.0) {
            return bad(format!("fb_threshold must be positive, got {}", self.fb_threshold));
        }
        if !(self.min_eig_threshold >= 0.0) {
            return bad(format!(
                "min_eig_threshold must be non-negative, got {}",
                self.min_eig_threshold
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Tracked,
    /// The window left the image or the gradient matrix was ill-conditioned.
    Lost,
    /// Tracked forward, but tracking back did not return near the origin.
    RejectedFb,
}

/// A feature and where it was found in the second frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub p1: Point,
    pub p2: Point,
    /// Forward-backward error in pixels; zero until validated, infinite
    /// (serialized as `null`) when the backward track was lost.
    #[serde(serialize_with = "finite_or_null", deserialize_with = "null_as_inf")]
    pub fb_error: f64,
    pub status: TrackStatus,
}

impl MatchedPair {
    pub fn is_tracked(&self) -> bool {
        self.status == TrackStatus::Tracked
    }

    pub fn displacement(&self) -> Point {
        self.p2 - self.p1
    }
}

fn finite_or_null<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn null_as_inf<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

/// Per-level spatial gradients of a template pyramid.
struct Gradients {
    gx: Vec<Field>,
    gy: Vec<Field>,
}

impl Gradients {
    fn of(pyr: &Pyramid, levels: usize) -> Result<Self> {
        let mut gx = Vec::with_capacity(levels);
        let mut gy = Vec::with_capacity(levels);
        for level in &pyr.levels()[..levels] {
            let (x, y) = gradient(level)?;
            gx.push(x);
            gy.push(y);
        }
        Ok(Gradients { gx, gy })
    }
}

fn check_pyramids(a: &Pyramid, b: &Pyramid, params: &TrackParams) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::PyramidMismatch(format!(
            "level counts differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < params.pyramid_levels {
        return Err(Error::PyramidMismatch(format!(
            "pyramids have {} levels, tracker needs {}",
            a.len(),
            params.pyramid_levels
        )));
    }
    let (la, lb) = (a.base(), b.base());
    if la.width() != lb.width() || la.height() != lb.height() {
        return Err(Error::PyramidMismatch(format!(
            "base sizes differ: {}x{} vs {}x{}",
            la.width(),
            la.height(),
            lb.width(),
            lb.height()
        )));
    }
    Ok(())
}

/// Tracks each feature from `a` into `b`. Output order follows `feats`.
pub fn track_features(
    a: &Pyramid,
    b: &Pyramid,
    feats: &[Feature],
    params: &TrackParams,
) -> Result<Vec<MatchedPair>> {
    params.validate()?;
    check_pyramids(a, b, params)?;
    let grads = Gradients::of(a, params.pyramid_levels)?;
    Ok(feats
        .par_iter()
        .map(|f| {
            let p1 = Point::new(f.x, f.y);
            match track_point(a, &grads, b, p1, params) {
                Some(p2) => MatchedPair {
                    p1,
                    p2,
                    fb_error: 0.0,
                    status: TrackStatus::Tracked,
                },
                None => MatchedPair {
                    p1,
                    p2: p1,
                    fb_error: 0.0,
                    status: TrackStatus::Lost,
                },
            }
        })
        .collect())
}

/// Re-tracks every tracked pair from `b` back to `a` and rejects pairs whose
/// round trip misses the origin by more than `fb_threshold`.
pub fn forward_backward_filter(
    a: &Pyramid,
    b: &Pyramid,
    pairs: &[MatchedPair],
    params: &TrackParams,
) -> Result<Vec<MatchedPair>> {
    params.validate()?;
    check_pyramids(a, b, params)?;
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let grads = Gradients::of(b, params.pyramid_levels)?;
    Ok(pairs
        .par_iter()
        .map(|pair| {
            if !pair.is_tracked() {
                return *pair;
            }
            let back = track_point(b, &grads, a, pair.p2, params);
            let fb_error = back.map_or(f64::INFINITY, |q| q.distance(pair.p1));
            let status = if fb_error <= params.fb_threshold {
                TrackStatus::Tracked
            } else {
                TrackStatus::RejectedFb
            };
            MatchedPair {
                fb_error,
                status,
                ..*pair
            }
        })
        .collect())
}

/// Coarse-to-fine alignment of one point; `None` when lost.
fn track_point(
    a: &Pyramid,
    grads: &Gradients,
    b: &Pyramid,
    p1: Point,
    params: &TrackParams,
) -> Option<Point> {
    let r = (params.window / 2) as i32;
    let n = params.window * params.window;
    let mut template = vec![0.0f32; n];
    let mut ix = vec![0.0f32; n];
    let mut iy = vec![0.0f32; n];

    let mut guess = Point::ZERO;
    let mut d = Point::ZERO;
    for level in (0..params.pyramid_levels).rev() {
        let scale = (1u32 << level) as f64;
        let u = p1 * (1.0 / scale);
        let img_a = a.level(level);
        let img_b = b.level(level);
        if !window_inside(img_a.width(), img_a.height(), u, r) {
            return None;
        }

        let (mut gxx, mut gxy, mut gyy) = (0.0f64, 0.0f64, 0.0f64);
        let mut k = 0;
        for j in -r..=r {
            for i in -r..=r {
                let (sx, sy) = (u.x + i as f64, u.y + j as f64);
                let (dx, dy) = (
                    grads.gx[level].sample_unchecked(sx, sy),
                    grads.gy[level].sample_unchecked(sx, sy),
                );
                template[k] = img_a.sample_unchecked(sx, sy);
                ix[k] = dx;
                iy[k] = dy;
                gxx += (dx * dx) as f64;
                gxy += (dx * dy) as f64;
                gyy += (dy * dy) as f64;
                k += 1;
            }
        }
        if min_eigenvalue(gxx, gxy, gyy) / (n as f64) < params.min_eig_threshold {
            return None;
        }
        let det = gxx * gyy - gxy * gxy;
        if !(det > f64::EPSILON) {
            return None;
        }

        d = guess;
        for _ in 0..params.max_iterations {
            let v = u + d;
            if !window_inside(img_b.width(), img_b.height(), v, r) {
                return None;
            }
            let (mut ex, mut ey) = (0.0f64, 0.0f64);
            let mut k = 0;
            for j in -r..=r {
                for i in -r..=r {
                    let diff = template[k] - img_b.sample_unchecked(v.x + i as f64, v.y + j as f64);
                    ex += (ix[k] * diff) as f64;
                    ey += (iy[k] * diff) as f64;
                    k += 1;
                }
            }
            let step = Point::new((gyy * ex - gxy * ey) / det, (gxx * ey - gxy * ex) / det);
            d = d + step;
            if step.norm() < params.epsilon {
                break;
            }
        }
        guess = d * 2.0;
    }

    let p2 = p1 + d;
    let base = b.base();
    window_inside(base.width(), base.height(), p2, r).then_some(p2)
}

#[inline]
fn window_inside(width: usize, height: usize, c: Point, r: i32) -> bool {
    let r = r as f64;
    c.x - r >= 0.0
        && c.y - r >= 0.0
        && c.x + r <= (width - 1) as f64
        && c.y + r <= (height - 1) as f64
}
