//! Residual motion after camera compensation, and cutoff filtering.
//!
//! For a tracked pair the raw displacement `a = p2 - p1` splits into the
//! camera part `c = H(p1) - p1` and the scene part `b = a - c`. Only `b`
//! indicates that something in the scene moved.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::klt::MatchedPair;
use crate::stabilize::Homography;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionVector {
    /// Feature position in frame A.
    pub origin: Point,
    /// Displacement before stabilization.
    #[serde(rename = "raw")]
    pub raw_delta: Point,
    /// Displacement predicted by the camera homography.
    #[serde(rename = "camera")]
    pub camera_delta: Point,
    /// `raw - camera`.
    #[serde(rename = "residual")]
    pub residual_delta: Point,
    pub magnitude: f64,
}

/// Residual vectors for a frame pair, possibly cut at a threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionField {
    pub frame_a: usize,
    pub frame_b: usize,
    /// Cutoff applied, if any; every kept magnitude is at least this.
    pub ts: Option<f64>,
    pub vectors: Vec<MotionVector>,
}

impl MotionField {
    pub fn new(frame_a: usize, frame_b: usize, vectors: Vec<MotionVector>) -> Self {
        MotionField {
            frame_a,
            frame_b,
            ts: None,
            vectors,
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Result of [`residual_displacements`].
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub vectors: Vec<MotionVector>,
    /// Tracked pairs skipped because `H` is undefined at their origin.
    pub dropped: usize,
}

/// Decomposes every tracked pair's motion into camera and residual parts.
/// Non-tracked pairs are ignored; input order is preserved.
pub fn residual_displacements(pairs: &[MatchedPair], h: &Homography) -> Residuals {
    let mut vectors = Vec::with_capacity(pairs.len());
    let mut dropped = 0;
    for pair in pairs.iter().filter(|p| p.is_tracked()) {
        let Ok(predicted) = h.apply(pair.p1) else {
            dropped += 1;
            continue;
        };
        let raw_delta = pair.p2 - pair.p1;
        let camera_delta = predicted - pair.p1;
        let residual_delta = raw_delta - camera_delta;
        vectors.push(MotionVector {
            origin: pair.p1,
            raw_delta,
            camera_delta,
            residual_delta,
            magnitude: residual_delta.norm(),
        });
    }
    Residuals { vectors, dropped }
}

fn check_ts(ts: f64) -> Result<()> {
    if ts >= 0.0 {
        Ok(())
    } else {
        Err(Error::NegativeThreshold(ts))
    }
}

/// Keeps the vectors whose residual magnitude is at least `ts` pixels.
pub fn filter_by_threshold(field: &MotionField, ts: f64) -> Result<MotionField> {
    check_ts(ts)?;
    Ok(MotionField {
        frame_a: field.frame_a,
        frame_b: field.frame_b,
        ts: Some(ts),
        vectors: field
            .vectors
            .iter()
            .filter(|v| v.magnitude >= ts)
            .copied()
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub ts: f64,
    pub surviving_count: usize,
    pub field: MotionField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweepResult {
    pub entries: Vec<SweepEntry>,
}

/// Range of consecutive sweep thresholds that all keep the same non-empty
/// set of features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub ts_min: f64,
    pub ts_max: f64,
    pub surviving_count: usize,
}

impl ThresholdSweepResult {
    pub fn counts(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.surviving_count).collect()
    }

    /// The widest plateau; ties go to the lower thresholds.
    pub fn plateau(&self) -> Option<Plateau> {
        let origins = |e: &SweepEntry| -> Vec<(u64, u64)> {
            e.field
                .vectors
                .iter()
                .map(|v| (v.origin.x.to_bits(), v.origin.y.to_bits()))
                .collect()
        };
        let mut best: Option<(usize, usize)> = None;
        let mut start = 0;
        while start < self.entries.len() {
            let set = origins(&self.entries[start]);
            let mut end = start;
            while end + 1 < self.entries.len() && origins(&self.entries[end + 1]) == set {
                end += 1;
            }
            if !set.is_empty() {
                let width = self.entries[end].ts - self.entries[start].ts;
                let better = match best {
                    None => true,
                    Some((s, e)) => width > self.entries[e].ts - self.entries[s].ts,
                };
                if better {
                    best = Some((start, end));
                }
            }
            start = end + 1;
        }
        best.map(|(s, e)| Plateau {
            ts_min: self.entries[s].ts,
            ts_max: self.entries[e].ts,
            surviving_count: self.entries[s].surviving_count,
        })
    }
}

/// Applies every threshold in `ts_values` (ascending) to the same field.
pub fn threshold_sweep(field: &MotionField, ts_values: &[f64]) -> Result<ThresholdSweepResult> {
    if ts_values.iter().any(|t| !(*t >= 0.0)) || ts_values.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::UnsortedThresholds);
    }
    let entries = ts_values
        .iter()
        .map(|&ts| {
            let filtered = filter_by_threshold(field, ts)?;
            Ok(SweepEntry {
                ts,
                surviving_count: filtered.len(),
                field: filtered,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ThresholdSweepResult { entries })
}

/// `start:step:stop` inclusive grid, e.g. `0:0.5:10`.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidParams(format!("threshold grid must be START:STEP:STOP, got '{spec}'"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    let [start, step, stop] = parts.as_slice() else {
        return Err(bad());
    };
    if !(*step > 0.0) || stop < start || *start < 0.0 {
        return Err(bad());
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| start + k as f64 * step).collect())
}

/// Default sweep grid: 0 to 10 px in 0.5 px steps.
pub fn default_grid() -> Vec<f64> {
    (0..=20).map(|k| k as f64 * 0.5).collect()
}

/// Summary numbers for a field; `None` where undefined (empty field).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldStatistics {
    pub count: usize,
    pub mean_magnitude: Option<f64>,
    pub median_magnitude: Option<f64>,
    pub max_magnitude: Option<f64>,
    /// Direction of the mean residual vector, degrees, image axes (y down).
    pub mean_direction_deg: Option<f64>,
}

pub fn field_statistics(field: &MotionField) -> FieldStatistics {
    let n = field.vectors.len();
    if n == 0 {
        return FieldStatistics {
            count: 0,
            mean_magnitude: None,
            median_magnitude: None,
            max_magnitude: None,
            mean_direction_deg: None,
        };
    }
    let mut mags: Vec<f64> = field.vectors.iter().map(|v| v.magnitude).collect();
    mags.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        mags[n / 2]
    } else {
        0.5 * (mags[n / 2 - 1] + mags[n / 2])
    };
    let sum = field
        .vectors
        .iter()
        .fold(Point::ZERO, |acc, v| acc + v.residual_delta);
    let direction = (sum.norm() > 0.0).then(|| sum.y.atan2(sum.x).to_degrees());
    FieldStatistics {
        count: n,
        mean_magnitude: Some(mags.iter().sum::<f64>() / n as f64),
        median_magnitude: Some(median),
        max_magnitude: mags.last().copied(),
        mean_direction_deg: direction,
    }
}
