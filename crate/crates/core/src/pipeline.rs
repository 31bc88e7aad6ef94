//! End-to-end analysis of a frame pair: frame stores, parameters, the
//! detect/track/stabilize/threshold flow, rendering and persisted runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{detect_features, DetectorParams};
use crate::image::{build_pyramid, GrayImage, Roi, RgbImage};
use crate::io::{encode_gray, encode_rgb, load_rgb, png_dimensions};
use crate::klt::{forward_backward_filter, track_features, MatchedPair, TrackParams};
use crate::motion::{
    field_statistics, filter_by_threshold, residual_displacements, threshold_sweep, FieldStatistics,
    MotionField, Plateau, ThresholdSweepResult,
};
use crate::stabilize::{stabilize_pair, Homography, RobustFitParams, StabilizedPair};
use crate::viz::{render_arrows, render_difference, spatial_agreement, ArrowStyle};

pub const DEFAULT_FPS: f64 = 29.97;
pub const RESULT_FILE: &str = "result.json";
pub const OVERLAY_FILE: &str = "overlay.png";
pub const DIFFERENCE_FILE: &str = "difference.png";
pub const SWEEP_FILE: &str = "sweep.json";
pub const TIMING_FILE: &str = "timing.json";
/// Fraction of brightest difference pixels used for the agreement score.
pub const AGREEMENT_QUANTILE: f64 = 0.05;

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

/// Seconds since the start of the clip for 1-based frame `index`.
pub fn frame_timestamp(index: usize, fps: f64) -> Result<f64> {
    if index == 0 {
        return Err(Error::InvalidIndex { index, count: 0 });
    }
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::InvalidParams(format!("fps must be positive, got {fps}")));
    }
    Ok(index as f64 / fps)
}

fn parse_frame_name(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".png")?;
    if digits.len() != 6 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// A directory of `frame_%06d.png` files numbered contiguously from 1, all
/// with the same dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStore {
    dir: PathBuf,
    frame_count: usize,
    fps: f64,
    width: usize,
    height: usize,
}

impl FrameStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut indices = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            if let Some(k) = entry.file_name().to_str().and_then(parse_frame_name) {
                indices.push(k);
            }
        }
        if indices.is_empty() {
            return Err(Error::NoFrames(dir));
        }
        indices.sort_unstable();
        for (expected, &k) in (1..).zip(&indices) {
            if k != expected {
                return Err(Error::NonContiguousFrames { dir, missing: expected });
            }
        }
        let frame_count = indices.len();
        let (width, height) = png_dimensions(&dir.join(frame_file_name(1)))?;
        for index in 2..=frame_count {
            let (w, h) = png_dimensions(&dir.join(frame_file_name(index)))?;
            if (w, h) != (width, height) {
                return Err(Error::InconsistentDimensions {
                    index,
                    width: w,
                    height: h,
                    expected_width: width,
                    expected_height: height,
                });
            }
        }
        Ok(FrameStore {
            dir,
            frame_count,
            fps: DEFAULT_FPS,
            width,
            height,
        })
    }

    pub fn with_fps(mut self, fps: f64) -> Result<Self> {
        frame_timestamp(1, fps)?;
        self.fps = fps;
        Ok(self)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn path(&self, index: usize) -> Result<PathBuf> {
        if index == 0 || index > self.frame_count {
            return Err(Error::InvalidIndex {
                index,
                count: self.frame_count,
            });
        }
        Ok(self.dir.join(frame_file_name(index)))
    }

    pub fn load(&self, index: usize) -> Result<RgbImage> {
        load_rgb(&self.path(index)?)
    }

    pub fn timestamp(&self, index: usize) -> Result<f64> {
        self.path(index)?;
        frame_timestamp(index, self.fps)
    }

    /// SHA-256 of the frame file, hex encoded.
    pub fn content_hash(&self, index: usize) -> Result<String> {
        let path = self.path(index)?;
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }
}

/// Produces a frame store from a directory of frames or a video file. Video
/// is decoded by the program named in `VIDEO_DECODER`, invoked as
/// `$VIDEO_DECODER <input> <out_dir> frame_%06d.png`.
pub fn ingest_frames(source: &Path, out: &Path) -> Result<FrameStore> {
    if source.is_dir() {
        return FrameStore::open(source);
    }
    let decoder = std::env::var_os("VIDEO_DECODER")
        .filter(|d| !d.is_empty())
        .ok_or_else(|| Error::DecoderUnavailable("VIDEO_DECODER is not set".into()))?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let status = Command::new(&decoder)
        .arg(source)
        .arg(out)
        .arg("frame_%06d.png")
        .status()
        .map_err(|e| Error::DecoderUnavailable(format!("{}: {e}", decoder.to_string_lossy())))?;
    if !status.success() {
        return Err(Error::DecoderUnavailable(format!(
            "{} exited with {status}",
            decoder.to_string_lossy()
        )));
    }
    FrameStore::open(out)
}

/// Every knob of one analysis run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisParams {
    /// `None` analyzes the full frame.
    pub roi: Option<Roi>,
    pub detector: DetectorParams,
    pub tracker: TrackParams,
    pub robust_fit: RobustFitParams,
    /// Cutoff threshold on residual magnitude, in pixels.
    pub ts: f64,
    pub arrow: ArrowStyle,
    pub brightness_gain: f64,
    pub seed: u64,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        AnalysisParams {
            roi: None,
            detector: DetectorParams::default(),
            tracker: TrackParams::default(),
            robust_fit: RobustFitParams::default(),
            ts: 3.5,
            arrow: ArrowStyle::default(),
            brightness_gain: 1.8,
            seed: 0,
        }
    }
}

impl AnalysisParams {
    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.tracker.validate()?;
        self.robust_fit.validate()?;
        self.arrow.validate()?;
        if !(self.ts >= 0.0) {
            return Err(Error::NegativeThreshold(self.ts));
        }
        if !(self.brightness_gain > 0.0) {
            return Err(Error::InvalidGain(self.brightness_gain));
        }
        Ok(())
    }

    /// Hash of everything that influences matches, `H` and the unfiltered
    /// field. Threshold and rendering settings are excluded.
    pub fn upstream_key(&self, frame_a: usize, frame_b: usize) -> String {
        let upstream = serde_json::json!({
            "frames": [frame_a, frame_b],
            "roi": self.roi,
            "detector": self.detector,
            "tracker": self.tracker,
            "robust_fit": self.robust_fit,
            "seed": self.seed,
        });
        hex::encode(Sha256::digest(upstream.to_string().as_bytes()))
    }
}

/// Everything upstream of the threshold: computed once per pair and reused
/// for any number of thresholds and renderings.
#[derive(Debug, Clone)]
pub struct PreparedPair {
    pub frame_a: usize,
    pub frame_b: usize,
    pub roi: Roi,
    pub detected: usize,
    pub pairs: Vec<MatchedPair>,
    pub stabilized: StabilizedPair,
    /// Every tracked feature's decomposed motion, before thresholding.
    pub field: MotionField,
    /// Tracked pairs skipped because `H` was undefined at their origin.
    pub dropped: usize,
}

impl PreparedPair {
    pub fn tracked(&self) -> usize {
        self.pairs.iter().filter(|p| p.is_tracked()).count()
    }
}

/// Detect on `a`, track into `b`, reject by forward-backward error,
/// stabilize and decompose. `a` and `b` are already cropped.
pub fn prepare_frames(
    a: &GrayImage,
    b: &GrayImage,
    frame_a: usize,
    frame_b: usize,
    roi: Roi,
    params: &AnalysisParams,
) -> Result<PreparedPair> {
    params.validate()?;
    if frame_a == frame_b {
        return Err(Error::InvalidPair(frame_a, frame_b));
    }
    let features = detect_features(a, &params.detector)?;
    let pa = build_pyramid(a, params.tracker.pyramid_levels)?;
    let pb = build_pyramid(b, params.tracker.pyramid_levels)?;
    let mut pairs = track_features(&pa, &pb, &features, &params.tracker)?;
    if params.tracker.forward_backward {
        pairs = forward_backward_filter(&pa, &pb, &pairs, &params.tracker)?;
    }
    let tracked = pairs.iter().filter(|p| p.is_tracked()).count();
    let stabilized = stabilize_pair(a, b, &pairs, &params.robust_fit, params.seed).map_err(|e| match e {
        Error::NoConsensus { .. } | Error::InsufficientPairs(_) | Error::DegenerateConfiguration => {
            Error::StabilizationFailed {
                source: Box::new(e),
                detected: features.len(),
                tracked,
            }
        }
        other => other,
    })?;
    let residuals = residual_displacements(&pairs, &stabilized.homography);
    Ok(PreparedPair {
        frame_a,
        frame_b,
        roi,
        detected: features.len(),
        pairs,
        stabilized,
        field: MotionField::new(frame_a, frame_b, residuals.vectors),
        dropped: residuals.dropped,
    })
}

fn load_cropped(store: &FrameStore, index: usize, roi: &Roi) -> Result<GrayImage> {
    Ok(store.load(index)?.crop(roi)?.to_grayscale())
}

fn resolve_roi(store: &FrameStore, params: &AnalysisParams) -> Result<Roi> {
    let (w, h) = store.dimensions();
    let roi = params.roi.unwrap_or(Roi::full(w, h));
    roi.check(w, h)?;
    Ok(roi)
}

fn check_pair(store: &FrameStore, i: usize, j: usize) -> Result<()> {
    store.path(i)?;
    store.path(j)?;
    if i == j {
        return Err(Error::InvalidPair(i, j));
    }
    Ok(())
}

/// [`prepare_frames`] on frames `i` and `j` of `store`.
pub fn prepare_pair(store: &FrameStore, i: usize, j: usize, params: &AnalysisParams) -> Result<PreparedPair> {
    check_pair(store, i, j)?;
    params.validate()?;
    let roi = resolve_roi(store, params)?;
    let a = load_cropped(store, i, &roi)?;
    let b = load_cropped(store, j, &roi)?;
    prepare_frames(&a, &b, i, j, roi, params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    pub index: usize,
    pub timestamp: f64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub overlay: String,
    pub difference: String,
}

/// The persisted record of one analysis. Contains nothing that varies
/// between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub run_id: String,
    pub params: AnalysisParams,
    pub fps: f64,
    pub frame_a: FrameRef,
    pub frame_b: FrameRef,
    /// Analysis window in frame coordinates; field origins are relative to it.
    pub roi: Roi,
    pub detected_count: usize,
    pub matched_count: usize,
    pub homography: Homography,
    pub inlier_count: usize,
    pub unfiltered: MotionField,
    pub filtered: MotionField,
    pub statistics: FieldStatistics,
    /// Fraction of surviving vectors on bright areas of the difference image.
    pub agreement: Option<f64>,
    pub artifacts: Artifacts,
}

/// A finished run: the result, where it was written and how long it took.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub result: AnalysisResult,
    pub run_dir: PathBuf,
    pub duration: Duration,
}

/// Rendered outputs of one threshold applied to a prepared pair.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub filtered: MotionField,
    pub overlay: RgbImage,
    pub difference: GrayImage,
    pub agreement: Option<f64>,
}

/// Threshold, arrows, difference image and agreement for `prepared`.
pub fn render_prepared(prepared: &PreparedPair, params: &AnalysisParams) -> Result<Rendered> {
    let filtered = filter_by_threshold(&prepared.field, params.ts)?;
    let reference = &prepared.stabilized.reference;
    let overlay = render_arrows(reference, &filtered, &params.arrow, params.brightness_gain)?.image;
    let difference = render_difference(reference, &prepared.stabilized.adjusted)?;
    let radius = params.tracker.window / 2;
    let agreement = spatial_agreement(&filtered, &difference, AGREEMENT_QUANTILE, radius)?;
    Ok(Rendered {
        filtered,
        overlay,
        difference,
        agreement,
    })
}

fn frame_ref(store: &FrameStore, index: usize) -> Result<FrameRef> {
    Ok(FrameRef {
        index,
        timestamp: store.timestamp(index)?,
        sha256: store.content_hash(index)?,
    })
}

fn run_id(kind: &str, params: &AnalysisParams, a: &FrameRef, b: &FrameRef, extra: &str) -> Result<String> {
    let mut hasher = Sha256::new();
    for part in [kind, &serde_json::to_string(params)?, &a.sha256, &b.sha256, extra] {
        hasher.update(part.as_bytes());
        hasher.update([0]);
    }
    hasher.update(format!("{}:{}", a.index, b.index).as_bytes());
    Ok(hex::encode(hasher.finalize()))
}

/// Builds the result for an already prepared pair and writes its run
/// directory under `out_root`.
pub fn finish_analysis(
    store: &FrameStore,
    prepared: &PreparedPair,
    params: &AnalysisParams,
    out_root: &Path,
) -> Result<(AnalysisResult, PathBuf)> {
    let frame_a = frame_ref(store, prepared.frame_a)?;
    let frame_b = frame_ref(store, prepared.frame_b)?;
    let rendered = render_prepared(prepared, params)?;
    let result = AnalysisResult {
        run_id: run_id("analyze", params, &frame_a, &frame_b, "")?,
        params: params.clone(),
        fps: store.fps(),
        frame_a,
        frame_b,
        roi: prepared.roi,
        detected_count: prepared.detected,
        matched_count: prepared.tracked(),
        homography: prepared.stabilized.homography,
        inlier_count: prepared.stabilized.inlier_count(),
        statistics: field_statistics(&rendered.filtered),
        unfiltered: prepared.field.clone(),
        filtered: rendered.filtered,
        agreement: rendered.agreement,
        artifacts: Artifacts {
            overlay: OVERLAY_FILE.into(),
            difference: DIFFERENCE_FILE.into(),
        },
    };
    let mut files = BTreeMap::new();
    files.insert(RESULT_FILE.to_string(), result_json(&result)?.into_bytes());
    files.insert(OVERLAY_FILE.to_string(), encode_rgb(&rendered.overlay));
    files.insert(DIFFERENCE_FILE.to_string(), encode_gray(&rendered.difference));
    let run_dir = persist_run(out_root, &result.run_id, &files)?;
    Ok((result, run_dir))
}

/// Canonical serialized form of a result, as written to `result.json`.
pub fn result_json(result: &AnalysisResult) -> Result<String> {
    let mut text = serde_json::to_string_pretty(result)?;
    text.push('\n');
    Ok(text)
}

/// Runs the full flow on frames `i` and `j` and persists the run under
/// `out_root/<run_id>/`.
pub fn analyze_pair(
    store: &FrameStore,
    i: usize,
    j: usize,
    params: &AnalysisParams,
    out_root: &Path,
) -> Result<Analysis> {
    let start = Instant::now();
    let prepared = prepare_pair(store, i, j, params)?;
    let (result, run_dir) = finish_analysis(store, &prepared, params, out_root)?;
    let duration = start.elapsed();
    let timing = serde_json::json!({ "duration_seconds": duration.as_secs_f64() });
    let path = run_dir.join(TIMING_FILE);
    std::fs::write(&path, timing.to_string()).map_err(|e| Error::io(path, e))?;
    Ok(Analysis {
        result,
        run_dir,
        duration,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOverlay {
    pub ts: f64,
    pub surviving_count: usize,
    pub overlay: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub run_id: String,
    pub params: AnalysisParams,
    pub fps: f64,
    pub frame_a: FrameRef,
    pub frame_b: FrameRef,
    pub roi: Roi,
    pub homography: Homography,
    pub sweep: ThresholdSweepResult,
    pub plateau: Option<Plateau>,
    pub overlays: Vec<SweepOverlay>,
}

/// Canonical serialized form of a sweep, as written to `sweep.json`.
pub fn sweep_json(report: &SweepReport) -> Result<String> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    Ok(text)
}

fn overlay_name(k: usize, ts: f64) -> String {
    format!("overlay_{k:03}_ts{ts}.png")
}

/// Sweeps `ts_values` over a prepared pair, rendering one overlay per
/// threshold into `out_root/<run_id>/`.
pub fn sweep_prepared(
    store: &FrameStore,
    prepared: &PreparedPair,
    params: &AnalysisParams,
    ts_values: &[f64],
    out_root: &Path,
) -> Result<(SweepReport, PathBuf)> {
    let sweep = threshold_sweep(&prepared.field, ts_values)?;
    let frame_a = frame_ref(store, prepared.frame_a)?;
    let frame_b = frame_ref(store, prepared.frame_b)?;
    let grid = serde_json::to_string(ts_values)?;
    let mut files = BTreeMap::new();
    let mut overlays = Vec::with_capacity(sweep.entries.len());
    for (k, entry) in sweep.entries.iter().enumerate() {
        let name = overlay_name(k, entry.ts);
        let image = render_arrows(
            &prepared.stabilized.reference,
            &entry.field,
            &params.arrow,
            params.brightness_gain,
        )?
        .image;
        files.insert(name.clone(), encode_rgb(&image));
        overlays.push(SweepOverlay {
            ts: entry.ts,
            surviving_count: entry.surviving_count,
            overlay: name,
        });
    }
    let report = SweepReport {
        run_id: run_id("sweep", params, &frame_a, &frame_b, &grid)?,
        params: params.clone(),
        fps: store.fps(),
        frame_a,
        frame_b,
        roi: prepared.roi,
        homography: prepared.stabilized.homography,
        plateau: sweep.plateau(),
        sweep,
        overlays,
    };
    files.insert(SWEEP_FILE.to_string(), sweep_json(&report)?.into_bytes());
    let run_dir = persist_run(out_root, &report.run_id, &files)?;
    Ok((report, run_dir))
}

/// Detection, tracking and `H` computed once, then every threshold of
/// `ts_values` applied.
pub fn run_sweep(
    store: &FrameStore,
    i: usize,
    j: usize,
    params: &AnalysisParams,
    ts_values: &[f64],
    out_root: &Path,
) -> Result<(SweepReport, PathBuf)> {
    let prepared = prepare_pair(store, i, j, params)?;
    sweep_prepared(store, &prepared, params, ts_values, out_root)
}

static STAGING_COUNTER: AtomicUsize = AtomicUsize::new(0);

/// Writes `files` into `out_root/<run_id>/` via a staging directory and a
/// rename, so readers never see a partial run. An existing run directory
/// with the same id is kept as is.
pub fn persist_run(out_root: &Path, run_id: &str, files: &BTreeMap<String, Vec<u8>>) -> Result<PathBuf> {
    std::fs::create_dir_all(out_root).map_err(|e| Error::io(out_root, e))?;
    let final_dir = out_root.join(run_id);
    if final_dir.is_dir() {
        return Ok(final_dir);
    }
    let staging = out_root.join(format!(
        ".staging-{run_id}-{}-{}",
        std::process::id(),
        STAGING_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    std::fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    for (name, bytes) in files {
        let path = staging.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(path, e))?;
    }
    if let Err(e) = std::fs::rename(&staging, &final_dir) {
        let _ = std::fs::remove_dir_all(&staging);
        if !final_dir.is_dir() {
            return Err(Error::io(final_dir, e));
        }
    }
    Ok(final_dir)
}
