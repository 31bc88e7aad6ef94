//! Arrow overlays and difference images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::image::{absolute_difference, GrayImage, RgbImage};
use crate::motion::{MotionField, MotionVector};

/// Half-angle between the shaft and each arrowhead barb.
const HEAD_ANGLE: f64 = 0.45;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArrowStyle {
    /// Multiplier applied to every residual before drawing.
    pub scale: f64,
    pub color: [u8; 3],
    pub head_length: f64,
    pub line_width: usize,
}

impl Default for ArrowStyle {
    fn default() -> Self {
        ArrowStyle {
            scale: 10.0,
            color: [255, 0, 0],
            head_length: 6.0,
            line_width: 1,
        }
    }
}

impl ArrowStyle {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidParams(format!("arrow scale must be positive, got {}", self.scale)));
        }
        if !(self.head_length >= 0.0) {
            return Err(Error::InvalidParams("arrow head_length must be non-negative".into()));
        }
        if self.line_width == 0 {
            return Err(Error::InvalidParams("arrow line_width must be at least 1".into()));
        }
        Ok(())
    }
}

/// Endpoints of one drawn arrow, in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrowGeometry {
    pub tail: Point,
    /// `scale * residual`; `tip = tail + offset`.
    pub offset: Point,
    pub tip: Point,
    pub barbs: [Point; 2],
}

pub fn arrow_geometry(v: &MotionVector, style: &ArrowStyle) -> ArrowGeometry {
    let tail = v.origin;
    let offset = v.residual_delta * style.scale;
    let tip = tail + offset;
    let shaft = offset;
    let len = shaft.norm();
    let barbs = if len > 0.0 {
        let back = shaft * (-1.0 / len);
        let head = style.head_length.min(len);
        let rot = |a: f64| {
            let (s, c) = a.sin_cos();
            tip + Point::new(back.x * c - back.y * s, back.x * s + back.y * c) * head
        };
        [rot(HEAD_ANGLE), rot(-HEAD_ANGLE)]
    } else {
        [tip, tip]
    };
    ArrowGeometry {
        tail,
        offset,
        tip,
        barbs,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub frame_a: usize,
    pub frame_b: usize,
    pub ts: Option<f64>,
    pub scale: f64,
    pub brightness_gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlayImage {
    pub image: RgbImage,
    pub provenance: Provenance,
}

/// Draws one arrow per vector over the brightened base frame. Segments are
/// clipped to the raster.
pub fn render_arrows(
    base: &GrayImage,
    field: &MotionField,
    style: &ArrowStyle,
    brightness_gain: f64,
) -> Result<OverlayImage> {
    style.validate()?;
    let mut image = base.brightened(brightness_gain)?.to_rgb();
    for v in &field.vectors {
        let g = arrow_geometry(v, style);
        draw_segment(&mut image, g.tail, g.tip, style);
        if g.tip != g.tail {
            for barb in g.barbs {
                draw_segment(&mut image, g.tip, barb, style);
            }
        }
    }
    Ok(OverlayImage {
        image,
        provenance: Provenance {
            frame_a: field.frame_a,
            frame_b: field.frame_b,
            ts: field.ts,
            scale: style.scale,
            brightness_gain,
        },
    })
}

/// Liang-Barsky clip of `p -> q` against `[0, w-1] x [0, h-1]`.
fn clip(p: Point, q: Point, w: usize, h: usize) -> Option<(Point, Point)> {
    let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);
    let d = q - p;
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for (den, num) in [(-d.x, p.x), (d.x, xmax - p.x), (-d.y, p.y), (d.y, ymax - p.y)] {
        if den == 0.0 {
            if num < 0.0 {
                return None;
            }
        } else {
            let t = num / den;
            if den < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
        }
    }
    (t0 <= t1).then(|| (p + d * t0, p + d * t1))
}

fn draw_segment(img: &mut RgbImage, p: Point, q: Point, style: &ArrowStyle) {
    let (w, h) = (img.width(), img.height());
    let Some((p, q)) = clip(p, q, w, h) else { return };
    let (mut x0, mut y0) = (p.x.round() as i64, p.y.round() as i64);
    let (x1, y1) = (q.x.round() as i64, q.y.round() as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let lo = -((style.line_width as i64 - 1) / 2);
    let hi = style.line_width as i64 / 2;
    loop {
        for by in lo..=hi {
            for bx in lo..=hi {
                let (x, y) = (x0 + bx, y0 + by);
                if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                    img.put(x as usize, y as usize, style.color);
                }
            }
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// `|a - b|`, stretched so the largest difference is full white.
pub fn render_difference(a: &GrayImage, b_adjusted: &GrayImage) -> Result<GrayImage> {
    let diff = absolute_difference(a, b_adjusted)?;
    let max = diff.data().iter().copied().fold(0.0f32, f32::max);
    if max <= 0.0 {
        return Ok(diff);
    }
    Ok(GrayImage::from_fn(diff.width(), diff.height(), |x, y| diff.get(x, y) / max))
}

/// Fraction of field origins that fall on the brightest `quantile` of the
/// difference image, after dilating that bright set by `radius` pixels.
/// `None` for an empty field.
pub fn spatial_agreement(
    field: &MotionField,
    diff: &GrayImage,
    quantile: f64,
    radius: usize,
) -> Result<Option<f64>> {
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(Error::InvalidParams(format!("quantile must lie in (0, 1], got {quantile}")));
    }
    if field.is_empty() {
        return Ok(None);
    }
    let (w, h) = (diff.width(), diff.height());
    let mut cells = Vec::with_capacity(field.len());
    for v in &field.vectors {
        let (x, y) = (v.origin.x.round(), v.origin.y.round());
        if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
            return Err(Error::SceneMismatch(format!(
                "origin ({}, {}) outside {w}x{h} difference image",
                v.origin.x, v.origin.y
            )));
        }
        cells.push((x as usize, y as usize));
    }

    let mut values = diff.data().to_vec();
    let k = ((quantile * values.len() as f64).ceil() as usize).clamp(1, values.len());
    let (_, kth, _) = values.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    let threshold = *kth;
    let bright: Vec<bool> = diff.data().iter().map(|&v| v >= threshold && v > 0.0).collect();
    let mask = dilate(&bright, w, h, radius);
    let hits = cells.iter().filter(|&&(x, y)| mask[y * w + x]).count();
    Ok(Some(hits as f64 / cells.len() as f64))
}

/// Square (Chebyshev) dilation, separable.
fn dilate(mask: &[bool], w: usize, h: usize, r: usize) -> Vec<bool> {
    if r == 0 {
        return mask.to_vec();
    }
    let mut horiz = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            horiz[y * w + x] = mask[y * w + lo..=y * w + hi].iter().any(|&b| b);
        }
    }
    let mut out = vec![false; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            out[y * w + x] = (lo..=hi).any(|yy| horiz[yy * w + x]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vector(x: f64, y: f64, rx: f64, ry: f64) -> MotionVector {
        let r = Point::new(rx, ry);
        MotionVector {
            origin: Point::new(x, y),
            raw_delta: r,
            camera_delta: Point::ZERO,
            residual_delta: r,
            magnitude: r.norm(),
        }
    }

    #[test]
    fn empty_field_is_brightened_base() {
        let base = GrayImage::filled(20, 10, 0.4);
        let o = render_arrows(&base, &MotionField::new(1, 2, vec![]), &ArrowStyle::default(), 1.5).unwrap();
        assert_eq!(o.image, base.brightened(1.5).unwrap().to_rgb());
        assert_eq!(o.provenance.scale, 10.0);
    }

    #[test]
    fn tip_offset_is_scaled_residual() {
        let g = arrow_geometry(&vector(5.0, 5.0, 1.0, 2.0), &ArrowStyle::default());
        assert_eq!(g.offset, Point::new(10.0, 20.0));
        assert_eq!(g.tip, Point::new(15.0, 25.0));
    }

    #[test]
    fn arrow_pixels_drawn() {
        let base = GrayImage::filled(40, 40, 0.0);
        let field = MotionField::new(1, 2, vec![vector(5.0, 20.0, 2.0, 0.0)]);
        let o = render_arrows(&base, &field, &ArrowStyle::default(), 1.0).unwrap();
        for x in 5..=25 {
            assert_eq!(o.image.get(x, 20), [255, 0, 0]);
        }
        assert_eq!(o.image.get(30, 20), [0, 0, 0]);
    }

    #[test]
    fn clipped_near_border() {
        let base = GrayImage::filled(30, 30, 0.2);
        let field = MotionField::new(1, 2, vec![vector(28.0, 15.0, 50.0, 3.0), vector(1.0, 1.0, -9.0, -9.0)]);
        let style = ArrowStyle { line_width: 3, scale: 100.0, ..Default::default() };
        let o = render_arrows(&base, &field, &style, 1.0).unwrap();
        assert_eq!((o.image.width(), o.image.height()), (30, 30));
        assert_eq!(o.image.get(29, 15), [255, 0, 0]);
    }

    #[test]
    fn difference_rendering() {
        let a = GrayImage::from_fn(8, 8, |x, y| (x + y) as f32 / 20.0);
        assert!(render_difference(&a, &a).unwrap().data().iter().all(|&v| v == 0.0));
        let mut data = a.data().to_vec();
        data[9] = (data[9] + 0.5).min(1.0);
        let b = GrayImage::new(8, 8, data).unwrap();
        let d = render_difference(&a, &b).unwrap();
        assert_eq!(d.data()[9], 1.0);
        assert_eq!(d.data().iter().filter(|&&v| v > 0.0).count(), 1);
        assert!(render_difference(&a, &GrayImage::filled(7, 8, 0.0)).is_err());
    }

    #[test]
    fn agreement_cases() {
        let mut diff = GrayImage::filled(100, 100, 0.0);
        diff = GrayImage::from_fn(100, 100, |x, y| if (40..50).contains(&x) && (40..50).contains(&y) { 1.0 } else { diff.get(x, y) });
        let on = MotionField::new(1, 2, vec![vector(42.0, 44.0, 1.0, 0.0), vector(49.0, 40.0, 0.0, 1.0)]);
        assert_eq!(spatial_agreement(&on, &diff, 0.01, 0).unwrap(), Some(1.0));
        let mixed = MotionField::new(1, 2, vec![vector(42.0, 44.0, 1.0, 0.0), vector(5.0, 5.0, 0.0, 1.0)]);
        assert_eq!(spatial_agreement(&mixed, &diff, 0.01, 3).unwrap(), Some(0.5));
        let near = MotionField::new(1, 2, vec![vector(53.0, 45.0, 1.0, 0.0)]);
        assert_eq!(spatial_agreement(&near, &diff, 0.01, 0).unwrap(), Some(0.0));
        assert_eq!(spatial_agreement(&near, &diff, 0.01, 7).unwrap(), Some(1.0));
        assert_eq!(spatial_agreement(&MotionField::new(1, 2, vec![]), &diff, 0.05, 7).unwrap(), None);
        let outside = MotionField::new(1, 2, vec![vector(150.0, 5.0, 1.0, 0.0)]);
        assert!(spatial_agreement(&outside, &diff, 0.05, 7).is_err());
    }

    proptest! {
        #[test]
        fn never_writes_outside(x in -50.0f64..80.0, y in -50.0f64..80.0, rx in -20.0f64..20.0,
                                ry in -20.0f64..20.0, scale in 0.1f64..200.0, lw in 1usize..5) {
            let base = GrayImage::filled(31, 23, 0.3);
            let field = MotionField::new(1, 2, vec![vector(x, y, rx, ry)]);
            let style = ArrowStyle { scale, line_width: lw, ..Default::default() };
            let o = render_arrows(&base, &field, &style, 1.2).unwrap();
            prop_assert_eq!(o.image.data().len(), 31 * 23 * 3);
        }

        #[test]
        fn doubling_scale_doubles_tip_offset(rx in -20.0f64..20.0, ry in -20.0f64..20.0, s in 0.1f64..50.0) {
            let v = vector(10.0, 10.0, rx, ry);
            let g1 = arrow_geometry(&v, &ArrowStyle { scale: s, ..Default::default() });
            let g2 = arrow_geometry(&v, &ArrowStyle { scale: 2.0 * s, ..Default::default() });
            prop_assert_eq!(g2.offset, g1.offset * 2.0);
        }

        #[test]
        fn difference_zero_iff_equal(vals in proptest::collection::vec(0.0f32..=1.0, 16), k in 0usize..16, bump in 0.01f32..0.5) {
            let a = GrayImage::new(4, 4, vals.clone()).unwrap();
            prop_assert!(render_difference(&a, &a).unwrap().data().iter().all(|&v| v == 0.0));
            let mut other = vals;
            other[k] = if other[k] > 0.5 { other[k] - bump } else { other[k] + bump };
            let b = GrayImage::new(4, 4, other).unwrap();
            prop_assert!(render_difference(&a, &b).unwrap().data().iter().any(|&v| v > 0.0));
        }
    }
}
