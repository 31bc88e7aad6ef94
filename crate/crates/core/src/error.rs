use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the analysis pipeline can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("region of interest {roi} exceeds image extent {width}x{height}")]
    RoiOutOfBounds {
        roi: String,
        width: usize,
        height: usize,
    },
    #[error("pyramid with {levels} levels would shrink {width}x{height} below 16 px")]
    TooManyLevels {
        levels: usize,
        width: usize,
        height: usize,
    },
    #[error("image {width}x{height} is smaller than the required {min}x{min}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },
    #[error("sample position ({x}, {y}) outside image {width}x{height}")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("brightness gain must be positive, got {0}")]
    InvalidGain(f64),
    #[error("patch of side {side} around ({x}, {y}) leaves the image")]
    PatchOutOfBounds { x: f64, y: f64, side: usize },
    #[error("pyramids are incompatible: {0}")]
    PyramidMismatch(String),
    #[error("projective denominator vanishes at ({x}, {y})")]
    DegeneratePoint { x: f64, y: f64 },
    #[error("homography is singular or has a vanishing (3,3) entry")]
    SingularHomography,
    #[error("need at least 4 tracked pairs, got {0}")]
    InsufficientPairs(usize),
    #[error("no non-collinear minimal sample could be drawn")]
    DegenerateConfiguration,
    #[error("best consensus has {found} inliers, need {required}")]
    NoConsensus { found: usize, required: usize },
    #[error("cutoff threshold must be non-negative, got {0}")]
    NegativeThreshold(f64),
    #[error("threshold values must be ascending and non-negative")]
    UnsortedThresholds,
    #[error("block {index} leaves the scene before or after its displacement")]
    BlockOutOfBounds { index: usize },
    #[error("motion field does not belong to this scene: {0}")]
    SceneMismatch(String),
    #[error("invalid frame index {index} (store has {count} frames)")]
    InvalidIndex { index: usize, count: usize },
    #[error("frame pair ({0}, {1}) is invalid: frames must differ")]
    InvalidPair(usize, usize),
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("no frames found in {0}")]
    NoFrames(PathBuf),
    #[error("frame sequence in {dir} is not contiguous: missing frame {missing}")]
    NonContiguousFrames { dir: PathBuf, missing: usize },
    #[error("frame {index} is {width}x{height}, expected {expected_width}x{expected_height}")]
    InconsistentDimensions {
        index: usize,
        width: usize,
        height: usize,
        expected_width: usize,
        expected_height: usize,
    },
    #[error("video decoder unavailable: {0}")]
    DecoderUnavailable(String),
    #[error(
        "stabilization failed: {source} ({tracked} tracked of {detected} detected pairs)"
    )]
    StabilizationFailed {
        #[source]
        source: Box<Error>,
        detected: usize,
        tracked: usize,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image codec error on {path}: {source}")]
    Codec {
        path: PathBuf,
        #[source]
        source: ::image::ImageError,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure category, used for process exit codes and HTTP statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad or inconsistent input data or parameters.
    Data,
    /// The analysis itself could not produce a result.
    Analysis,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NoConsensus { .. }
            | Error::DegenerateConfiguration
            | Error::InsufficientPairs(_)
            | Error::StabilizationFailed { .. }
            | Error::SingularHomography
            | Error::DegeneratePoint { .. } => ErrorKind::Analysis,
            _ => ErrorKind::Data,
        }
    }

    /// Stable machine-readable identifier.
    pub fn code(&self) -> &'static str {
        match self {
            Error::RoiOutOfBounds { .. } => "roi_out_of_bounds",
            Error::TooManyLevels { .. } => "too_many_levels",
            Error::ImageTooSmall { .. } => "image_too_small",
            Error::OutOfBounds { .. } => "out_of_bounds",
            Error::DimensionMismatch(..) => "dimension_mismatch",
            Error::InvalidGain(_) => "invalid_gain",
            Error::PatchOutOfBounds { .. } => "patch_out_of_bounds",
            Error::PyramidMismatch(_) => "pyramid_mismatch",
            Error::DegeneratePoint { .. } => "degenerate_point",
            Error::SingularHomography => "singular_homography",
            Error::InsufficientPairs(_) => "insufficient_pairs",
            Error::DegenerateConfiguration => "degenerate_configuration",
            Error::NoConsensus { .. } => "no_consensus",
            Error::NegativeThreshold(_) => "negative_threshold",
            Error::UnsortedThresholds => "unsorted_thresholds",
            Error::BlockOutOfBounds { .. } => "block_out_of_bounds",
            Error::SceneMismatch(_) => "scene_mismatch",
            Error::InvalidIndex { .. } => "invalid_index",
            Error::InvalidPair(..) => "invalid_pair",
            Error::InvalidParams(_) => "invalid_params",
            Error::NoFrames(_) => "no_frames",
            Error::NonContiguousFrames { .. } => "non_contiguous_frames",
            Error::InconsistentDimensions { .. } => "inconsistent_dimensions",
            Error::DecoderUnavailable(_) => "decoder_unavailable",
            Error::StabilizationFailed { .. } => "stabilization_failed",
            Error::Io { .. } => "io",
            Error::Codec { .. } => "codec",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
