//! Scale-ambiguous two-view triangulation and the reprojection error.

use super::{Correspondence, EgomotionError};
use crate::geometry::{project, skew, Pose, Vec3, MIN_DEPTH};

/// Per-point outcome of [`triangulate_up_to_scale`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthFlag {
    /// Positive depth in both frames.
    Valid,
    /// Triangulated behind the camera in at least one frame; feeds the
    /// positive-depth moving-object check.
    NegativeDepth,
    /// The point lies (numerically) on the baseline through both camera
    /// centers, where depth carries no signal.
    Unobservable,
}

/// Depths for one frame pair under the gauge ‖ΔT‖ = 1 equivalent (γ = 1):
/// all values are in units of the supplied translation length.
#[derive(Debug, Clone)]
pub struct TriangulationResult {
    /// Frame-t depth per correspondence, least-squares solution of the
    /// per-point epipolar system; meaningless where the flag is
    /// [`DepthFlag::Unobservable`].
    pub depths: Vec<f64>,
    pub flags: Vec<DepthFlag>,
}

impl TriangulationResult {
    pub fn valid_count(&self) -> usize {
        self.flags.iter().filter(|f| **f == DepthFlag::Valid).count()
    }
}

/// Least-squares frame-t and frame-next depths of a single correspondence
/// under `delta`, from the stacked constraint
/// x̂_next·(ΔR·x̄_t·Z + ΔT) = 0 with the scale gauge fixed at γ = 1.
///
/// Returns `None` when the correspondence sits on the baseline (zero
/// parallax direction), where the system loses rank.
pub fn triangulate_pair(delta: &Pose, corr: &Correspondence) -> Option<(f64, f64)> {
    let cross = skew(&corr.x_next.homogeneous());
    let a: Vec3 = cross * (delta.rotation() * corr.x_t.homogeneous());
    let b: Vec3 = cross * delta.translation();
    let denom = a.norm_squared();
    if denom < 1e-18 {
        return None;
    }
    let z_t = -a.dot(&b) / denom;
    let z_next = (delta.rotation() * corr.x_t.homogeneous() * z_t + delta.translation()).z;
    Some((z_t, z_next))
}

/// Triangulates every correspondence under `delta`, keeping the common
/// monocular scale fixed at γ = 1: depths come out in units of ‖ΔT‖.
/// Scaling `delta`'s translation and the true scene depths by the same
/// factor leaves the per-unit-translation output unchanged.
///
/// Negative or baseline-degenerate points are flagged, not dropped, so the
/// caller can feed them to the cheirality checks.
pub fn triangulate_up_to_scale(
    delta: &Pose,
    corrs: &[Correspondence],
) -> Result<TriangulationResult, EgomotionError> {
    if corrs.len() < 2 {
        return Err(EgomotionError::NotEnoughCorrespondences { needed: 2, got: corrs.len() });
    }
    if delta.translation().norm() < 1e-12 {
        return Err(EgomotionError::InsufficientParallax { median: 0.0 });
    }
    let mut depths = Vec::with_capacity(corrs.len());
    let mut flags = Vec::with_capacity(corrs.len());
    for corr in corrs {
        match triangulate_pair(delta, corr) {
            Some((z_t, z_next)) => {
                depths.push(z_t);
                flags.push(if z_t > MIN_DEPTH && z_next > MIN_DEPTH {
                    DepthFlag::Valid
                } else {
                    DepthFlag::NegativeDepth
                });
            }
            None => {
                depths.push(f64::NAN);
                flags.push(DepthFlag::Unobservable);
            }
        }
    }
    Ok(TriangulationResult { depths, flags })
}

/// Euclidean distance, in normalized image coordinates, between the
/// measured next-frame point and the frame-t point carried through `delta`
/// at depth `z`: ‖x̃_next − π(ΔR·z·x̄_t + ΔT)‖.
///
/// Scaling the translation and the depth by a common factor γ leaves the
/// value unchanged (the monocular gauge). A point transformed behind the
/// camera is a cheirality event and errors with
/// [`EgomotionError::NonPositiveDepth`].
pub fn reprojection_error(
    delta: &Pose,
    corr: &Correspondence,
    z: f64,
) -> Result<f64, EgomotionError> {
    if z <= 0.0 {
        return Err(EgomotionError::NonPositiveDepth(z));
    }
    let moved = delta.transform(&corr.x_t.backproject(z));
    let reprojected = project(&moved).map_err(|_| EgomotionError::NonPositiveDepth(moved.z))?;
    let dx = corr.x_next.x - reprojected.x;
    let dy = corr.x_next.y - reprojected.y;
    Ok(dx.hypot(dy))
}
