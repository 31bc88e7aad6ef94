//! Camera-motion-compensated sparse motion analysis for frame pairs of
//! hand-held incident video.
//!
//! The pipeline detects minimum-eigenvalue corners in the earlier frame,
//! tracks them into the later frame with pyramidal Lucas-Kanade, fits a
//! robust homography to cancel the camera's own motion, and reports the
//! residual per-feature displacement. Residuals above a cutoff mark image
//! regions that genuinely moved.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod features;
pub mod geometry;
pub mod image;
pub mod io;
pub mod klt;
pub mod motion;
pub mod pipeline;
pub mod stabilize;
pub mod synth;
pub mod viz;

pub use error::{Error, ErrorKind, Result};
pub use geometry::Point;
