//! Outlier rejection and moving-object detection.
//!
//! Two complementary rejection schemes share the [`Correspondence`] input:
//! seeded hypothesize-and-verify ([`ransac`]) and deterministic iterative
//! trimming of the full set ([`masor`]). Both are generic over the fitted
//! model so the solver and residual can be swapped or mocked. On top of
//! them sit per-feature moving-object verdicts ([`positive_depth_check`],
//! [`positive_height_check`]), track-quality gating
//! ([`reliability_filter`]), and greedy multi-motion segmentation
//! ([`segment_motions_sequential`]).
//!
//! [`Correspondence`]: crate::egomotion::Correspondence

use std::fmt;

use thiserror::Error;

mod checks;
mod masor;
mod ransac;
mod segment;

pub use checks::{
    combined_verdict, positive_depth_check, positive_height_check, reliability_filter,
    write_verdict_csv, ReliabilityConfig, TrackQuality, VerdictRecord, DEFAULT_HEIGHT_MARGIN,
    VERDICT_HEADER,
};
pub use masor::{masor, masor_pose, MasorConfig, MasorCriterion, MasorOutcome, MasorStep};
pub use ransac::{ransac, RansacConfig, RansacOutcome};
pub use segment::{
    minimal_pose_solver, pose_reprojection_residual, segment_motions_sequential,
    write_segment_csv, MotionSegment, Segmentation, SegmentationConfig, SEGMENT_HEADER,
};

#[derive(Debug, Error)]
pub enum RobustError {
    /// No hypothesis reached the minimal support.
    #[error("no model hypothesis reached minimal support")]
    NoConsensus,
    /// Trimming would leave fewer features than the solver needs.
    #[error("trimming at iteration {iteration} fell below {min} features")]
    SetCollapsed { iteration: usize, min: usize },
    #[error("need at least {needed} correspondences, got {got}")]
    NotEnoughCorrespondences { needed: usize, got: usize },
    /// The injected solver returned no model (or a malformed one).
    #[error("model solver failed at iteration {iteration}")]
    SolverFailed { iteration: usize },
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-feature motion classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Consistent with the supplied camera motion.
    Static,
    /// Violates a rigidity constraint; the point itself must be moving.
    Moving,
    /// The test carries no signal here (no parallax, zero baseline, or a
    /// triangulation too ill-conditioned to trust).
    Undecided,
    /// The test's precondition fails for this image location (e.g. the
    /// height test above the horizon).
    NotApplicable,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Static => "static",
            Verdict::Moving => "moving",
            Verdict::Undecided => "undecided",
            Verdict::NotApplicable => "not_applicable",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
