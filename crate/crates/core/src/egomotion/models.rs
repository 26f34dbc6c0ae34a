//! Constrained prior motion models: reduced parameterizations of the
//! instantaneous motion for vehicles whose freedom is known in advance
//! (planar driving, straight roads, circular arcs), plus the one-point
//! heading estimator the circular model admits.

use std::f64::consts::{FRAC_PI_2, PI};

use super::{Correspondence, EgomotionError};
use crate::geometry::{continuous_flow, Flow2, NormalizedPoint, Plane, Twist, Vec3};

/// Reduced motion parameterizations. Each kind names the freedom it keeps;
/// everything else is pinned to zero, so nested kinds agree exactly where
/// their parameter spaces overlap.
#[derive(Debug, Clone, PartialEq)]
pub enum MotionModel {
    /// Unconstrained instantaneous motion (ω, ν).
    Full6 { omega: Vec3, nu: Vec3 },
    /// Same parameters as [`MotionModel::Full6`] with the rotation treated
    /// to first order (ΔR ≈ I + ω̂) when a finite pose is built; the
    /// instantaneous flow is identical.
    SmallRotation { omega: Vec3, nu: Vec3 },
    /// Planar driving: pitch ω₁, yaw ω₂, forward speed ν₃.
    ThreeParam { omega1: f64, omega2: f64, nu3: f64 },
    /// Straight-line driving along the optical axis.
    OneParamTranslational { nu3: f64 },
    /// Unit-speed arc of a circle: per-frame heading change θ about the
    /// camera X axis, the chord leaning θ/2. θ = 0 is straight motion.
    Circular { theta: f64 },
    /// Planar driving observed through a known road plane; depth comes
    /// from the plane, so flow needs no per-point range.
    GroundPlane { omega1: f64, omega2: f64, nu3: f64 },
}

impl MotionModel {
    /// The model's free parameters in declaration order.
    pub fn parameters(&self) -> Vec<f64> {
        match *self {
            MotionModel::Full6 { omega, nu } | MotionModel::SmallRotation { omega, nu } => {
                vec![omega.x, omega.y, omega.z, nu.x, nu.y, nu.z]
            }
            MotionModel::ThreeParam { omega1, omega2, nu3 }
            | MotionModel::GroundPlane { omega1, omega2, nu3 } => vec![omega1, omega2, nu3],
            MotionModel::OneParamTranslational { nu3 } => vec![nu3],
            MotionModel::Circular { theta } => vec![theta],
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().len()
    }

    /// The instantaneous motion the model encodes, with its fixed
    /// parameters zeroed. Flow prediction always goes through this
    /// specialization and the general flow equation.
    pub fn twist(&self) -> Twist {
        match *self {
            MotionModel::Full6 { omega, nu } | MotionModel::SmallRotation { omega, nu } => {
                Twist::new(omega, nu)
            }
            MotionModel::ThreeParam { omega1, omega2, nu3 }
            | MotionModel::GroundPlane { omega1, omega2, nu3 } => {
                Twist::new(Vec3::new(omega1, omega2, 0.0), Vec3::new(0.0, 0.0, nu3))
            }
            MotionModel::OneParamTranslational { nu3 } => {
                Twist::new(Vec3::zeros(), Vec3::new(0.0, 0.0, nu3))
            }
            MotionModel::Circular { theta } => {
                let (s, c) = ((theta / 2.0).sin(), (theta / 2.0).cos());
                Twist::new(Vec3::new(-theta, 0.0, 0.0), Vec3::new(0.0, -s, -c))
            }
        }
    }
}

/// Where the depth that scales translational flow comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DepthSource {
    /// Per-point depth.
    Depth(f64),
    /// A scene plane; depth at x̄ is d / nᵀx̄. Rays with nᵀx̄ ≤ 0 never
    /// meet the plane in front of the camera.
    Plane(Plane),
}

impl DepthSource {
    /// Depth along the ray through `x`; non-positive when the ray does not
    /// reach the source in front of the camera.
    pub fn depth_at(&self, x: &NormalizedPoint) -> f64 {
        match self {
            DepthSource::Depth(z) => *z,
            DepthSource::Plane(p) => p.distance() / p.normal().dot(&x.homogeneous()),
        }
    }
}

/// Image velocity at `x` under the model, with depth resolved from
/// `source`. Fails with `NonPositiveDepth` when the resolved depth is not
/// positive (for a plane source: the ray points at or above the horizon).
pub fn predict_flow(
    model: &MotionModel,
    x: &NormalizedPoint,
    source: &DepthSource,
) -> Result<Flow2, EgomotionError> {
    Ok(continuous_flow(&model.twist(), x, source.depth_at(x))?)
}

/// Per-frame heading change of the circular model from correspondences.
///
/// Each correspondence pins θ through the circular epipolar constraint
/// cos(θ/2)·(x′y − xy′) + sin(θ/2)·(x + x′) = 0, one point sufficing
/// because the model has one parameter; the estimates are aggregated by
/// median, which tolerates up to half the points being off-model.
/// Zero-weight correspondences are skipped.
pub fn estimate_circular_one_point(corrs: &[Correspondence]) -> Result<f64, EgomotionError> {
    let mut thetas: Vec<f64> = corrs
        .iter()
        .filter(|c| c.weight > 0.0)
        .map(|c| {
            let num = c.x_t.x * c.x_next.y - c.x_next.x * c.x_t.y;
            let den = c.x_t.x + c.x_next.x;
            // atan2 resolves the constraint only up to a half turn; fold
            // into (-π/2, π/2] so that straight motion at x < 0 reads as
            // zero rather than a full U-turn.
            let mut half = num.atan2(den);
            if half > FRAC_PI_2 {
                half -= PI;
            } else if half < -FRAC_PI_2 {
                half += PI;
            }
            2.0 * half
        })
        .collect();
    if thetas.is_empty() {
        return Err(EgomotionError::NoCorrespondences);
    }
    thetas.sort_by(f64::total_cmp);
    let n = thetas.len();
    Ok(if n % 2 == 1 { thetas[n / 2] } else { 0.5 * (thetas[n / 2 - 1] + thetas[n / 2]) })
}
