//! Ego-motion and structure estimation from two-view correspondences.
//!
//! The module provides the estimation layer of the pipeline: discrete and
//! continuous eight-point solvers, essential-matrix decomposition with
//! positive-depth disambiguation, scale-ambiguous triangulation,
//! reprojection-error bundle adjustment, reduced prior motion models,
//! photometric (direct) pose refinement, and monocular scale recovery from
//! a known camera height. Pose and correspondence file formats live in
//! [`io`].
//!
//! All estimates of a frame pair (t, t+1) use the delta-pose convention of
//! [`crate::geometry`]: the recovered [`Pose`](crate::geometry::Pose) maps
//! frame-t coordinates into frame-(t+1) coordinates, and depths are frame-t
//! depths unless stated otherwise. Monocular translations and depths carry
//! a common unknown scale; solvers fix the gauge to a unit translation.

mod ba;
mod direct;
mod eight_point;
mod io;
mod models;
mod scale;
mod triangulate;

pub use ba::{bundle_adjust, BaMode, BaProblem, BaResult};
pub use direct::{direct_method_refine, DirectConfig, DirectResult};
pub use eight_point::{
    continuous_linear_solve, decompose_essential, eight_point_discrete, ContinuousMotion,
    EightPointConfig, EssentialMatrix,
};
pub use io::{
    chain_deltas, read_correspondence_csv, read_pose_file, write_correspondence_csv,
    write_pose_file,
};
pub use models::{estimate_circular_one_point, predict_flow, DepthSource, MotionModel};
pub use scale::{scale_from_ground_plane, PlaneFitConfig, ScaleEstimate};
pub use triangulate::{
    reprojection_error, triangulate_pair, triangulate_up_to_scale, DepthFlag, TriangulationResult,
};

use crate::geometry::{GeometryError, NormalizedPoint};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EgomotionError {
    #[error("need at least {needed} items, got {got}")]
    NotEnoughCorrespondences { needed: usize, got: usize },
    #[error("degenerate configuration: the stacked epipolar system has no unique null direction")]
    DegenerateConfiguration,
    #[error("insufficient parallax: median rotation-compensated displacement {median:.3e}")]
    InsufficientParallax { median: f64 },
    #[error("cheirality vote is ambiguous: no candidate puts a strict majority of points in front of both cameras")]
    AmbiguousCheirality,
    #[error("non-positive depth {0}")]
    NonPositiveDepth(f64),
    #[error("normal equations are rank deficient")]
    RankDeficientNormalEquations,
    #[error("iteration diverged: no acceptable step at damping {0:.3e}")]
    Diverged(f64),
    #[error("no correspondences supplied")]
    NoCorrespondences,
    #[error("plane fit is degenerate: {0}")]
    DegeneratePlane(String),
    #[error("no hypothesis reached the required consensus")]
    NoConsensus,
    #[error("invalid problem: {0}")]
    BadProblem(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// A tracked feature observed in two frames, in normalized coordinates,
/// with an optional externally measured depth in the earlier frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub id: u64,
    pub x_t: NormalizedPoint,
    pub x_next: NormalizedPoint,
    pub depth_t: Option<f64>,
    pub weight: f64,
}

impl Correspondence {
    pub fn new(id: u64, x_t: NormalizedPoint, x_next: NormalizedPoint) -> Self {
        Correspondence { id, x_t, x_next, depth_t: None, weight: 1.0 }
    }

    pub fn with_depth(mut self, depth: f64) -> Self {
        self.depth_t = Some(depth);
        self
    }
}
