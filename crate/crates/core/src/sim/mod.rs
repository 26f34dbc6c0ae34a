//! Synthetic-scene oracle: point-cloud scenes, camera trajectories,
//! independently moving bodies, correspondence rendering with controlled
//! noise, analytic textured-plane image rendering, and named presets.
//!
//! Everything here is deterministic given the seeds in the inputs, so
//! rendered data can serve as ground truth in tests.

mod config;
pub mod presets;
mod render;
mod texture;

pub use config::SimSpec;
pub use render::{render_correspondences, render_flow_field, FlowSample, SimFeature, TrackSet};
pub use texture::{render_image, render_shifted_pair, SinusoidTexture, TexturedPlane};

use thiserror::Error;

use crate::geometry::{GeometryError, Plane, Pose, Twist, Vec3};

#[derive(Debug, Error)]
pub enum SimError {
    /// No scene point projects in front of both cameras.
    #[error("no scene point is visible in both frames")]
    EmptyView,
    #[error("frame {frame} out of range for trajectory of length {len}")]
    FrameOutOfRange { frame: usize, len: usize },
    #[error("integration step must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("bad scene configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A rigid body moving independently of the camera. `points` are fixed in
/// the body frame; `poses` map body to world, one entry per camera frame.
#[derive(Debug, Clone)]
pub struct Mover {
    pub points: Vec<Vec3>,
    pub poses: Vec<Pose>,
}

/// World-frame scene contents. The world frame coincides with the first
/// camera frame in every preset; `ground` is the road plane when present.
#[derive(Debug, Clone)]
pub struct Scene {
    pub static_points: Vec<Vec3>,
    pub movers: Vec<Mover>,
    pub ground: Option<Plane>,
}

/// Per-frame camera poses, each mapping world to camera.
#[derive(Debug, Clone)]
pub struct Trajectory {
    poses: Vec<Pose>,
}

impl Trajectory {
    pub fn from_poses(poses: Vec<Pose>) -> Result<Self, SimError> {
        if poses.is_empty() {
            return Err(SimError::BadConfig("trajectory needs at least one pose".into()));
        }
        Ok(Trajectory { poses })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn pose(&self, frame: usize) -> &Pose {
        &self.poses[frame]
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    /// Relative motion from frame `k` to `k + 1`.
    pub fn delta(&self, k: usize) -> Pose {
        self.poses[k + 1].compose(&self.poses[k].inverse())
    }
}

/// Integrates per-step camera twists into a trajectory starting at the
/// identity: each step left-composes `(exp(w dt), nu dt)` onto the current
/// pose. The twist is the apparent scene velocity in the camera frame, so
/// the camera itself travels opposite to `nu`.
pub fn integrate_trajectory(twists: &[Twist], dt: f64) -> Result<Trajectory, SimError> {
    if dt <= 0.0 {
        return Err(SimError::NonPositiveDt(dt));
    }
    let mut poses = Vec::with_capacity(twists.len() + 1);
    poses.push(Pose::identity());
    for tw in twists {
        let delta = Pose::from_twist(tw, dt);
        let next = delta.compose(poses.last().expect("nonempty"));
        poses.push(next);
    }
    Ok(Trajectory { poses })
}

/// Measurement corruption applied to rendered correspondences, all in the
/// pixel frame of the second view: isotropic Gaussian noise of `sigma_px`,
/// then exactly `floor(outlier_fraction * n)` features displaced uniformly
/// within a `+/- outlier_box_px` box.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSpec {
    pub sigma_px: f64,
    pub outlier_fraction: f64,
    pub outlier_box_px: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none(seed: u64) -> Self {
        NoiseSpec { sigma_px: 0.0, outlier_fraction: 0.0, outlier_box_px: 20.0, seed }
    }
}

/// Ground-truth label attached to each rendered feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureLabel {
    Static,
    Mover(usize),
    PlantedOutlier,
}
