//! Sparse pyramidal Lucas-Kanade feature tracking.
//!
//! Tracking minimizes the Gaussian-weighted sum of squared intensity errors
//! between a template patch in the first image and a warped patch in the
//! second. Two solvers are provided: forward-additive, which re-linearizes
//! on the second image every iteration, and inverse-compositional, which
//! linearizes once on the template so the normal-equation matrix is
//! assembled a single time per track.

mod image;
mod lk;
mod pyramid;

pub use image::{gradient, read_pgm, write_pgm, Image};
pub use lk::{
    forward_backward_check, lk_forward_additive, lk_inverse_compositional, select_features,
    structure_tensor_score, track_pyramidal, write_tracks_csv, FbReport, LkSolver, TrackRecord,
    TrackResult, WarpParams,
};
pub use pyramid::{build_pyramid, Pyramid};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("sample position ({x:.2}, {y:.2}) is outside the image")]
    OutOfBounds { x: f64, y: f64 },
    #[error("pyramid with {levels} levels is too deep for a {width}x{height} image")]
    TooManyLevels { levels: usize, width: usize, height: usize },
    #[error("patch lacks 2D structure: normal-equation matrix is singular")]
    SingularHessian,
    #[error("affine warp increment is not invertible")]
    NonInvertibleIncrement,
    #[error("pyramids have different depths ({0} vs {1})")]
    MismatchedPyramids(usize, usize),
    #[error("bad image data: {0}")]
    BadImage(String),
    #[error("malformed PGM: {0}")]
    MalformedPgm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Tracker configuration. Defaults: 15x15 window with Gaussian weight
/// sigma = window/4, increment threshold 0.01 px, 30 iterations for
/// single-level solves, 4 pyramid levels with one iteration per coarse
/// level and 5 at the finest.
#[derive(Debug, Clone)]
pub struct LkConfig {
    /// Patch side length in pixels; must be odd.
    pub window: usize,
    /// Stop when the parameter increment norm falls below this (pixels).
    pub epsilon: f64,
    /// Iteration cap for single-level solves.
    pub max_iterations: usize,
    /// Pyramid depth used by [`track_pyramidal`].
    pub levels: usize,
    /// Iterations per coarse pyramid level.
    pub coarse_iterations: usize,
    /// Iterations at the finest pyramid level.
    pub final_iterations: usize,
    /// Smallest acceptable eigenvalue of the normal-equation matrix.
    pub min_eigenvalue: f64,
    /// Forward-backward round-trip acceptance radius (pixels).
    pub fb_threshold: f64,
    /// Solver used by the pyramidal driver.
    pub solver: LkSolver,
}

impl Default for LkConfig {
    fn default() -> Self {
        LkConfig {
            window: 15,
            epsilon: 0.01,
            max_iterations: 30,
            levels: 4,
            coarse_iterations: 1,
            final_iterations: 5,
            min_eigenvalue: 1e-12,
            fb_threshold: 0.5,
            solver: LkSolver::InverseCompositional,
        }
    }
}

impl LkConfig {
    /// Gaussian weight scale for the patch window.
    pub fn sigma(&self) -> f64 {
        self.window as f64 / 4.0
    }
}
