//! Rigid-body motion, perspective projection, and two-view epipolar
//! relations.
//!
//! Conventions used throughout the crate:
//! - Camera frames have the optical axis along +Z; a point is visible when
//!   its Z coordinate is positive.
//! - Normalized image coordinates are x = X/Z, y = Y/Z, with homogeneous
//!   lift x̄ = (x, y, 1).
//! - A [`Pose`] maps coordinates of its source frame into its target frame:
//!   X_target = R·X_source + T. For a frame pair (t, t+1) the "delta" pose
//!   maps frame-t coordinates into frame-(t+1) coordinates.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Frobenius tolerance for rotation-matrix orthonormality checks.
pub const ROTATION_TOL: f64 = 1e-9;

/// Relative tolerance for the depth-consistency check in
/// [`discrete_displacement`].
pub const DEPTH_CONSISTENCY_TOL: f64 = 1e-9;

/// Depths below this are treated as non-positive: projection is meaningless
/// at the optical center and 1/Z overflows.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("point has non-positive depth {0}")]
    NonPositiveDepth(f64),
    #[error("supplied next-frame depth {supplied} disagrees with propagated depth {propagated}")]
    InconsistentDepth { supplied: f64, propagated: f64 },
    #[error("rotation matrix is not orthonormal (deviation {0:.3e})")]
    InvalidRotation(f64),
    #[error("plane is degenerate: {0}")]
    DegeneratePlane(String),
}

/// Skew-symmetric (hat) matrix of `v`, so that `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues exponential map: the rotation by angle `‖omega_dt‖` about the
/// axis `omega_dt`. Falls back to the quadratic Taylor series near zero
/// where the closed form loses precision.
pub fn exp_rotation(omega_dt: &Vec3) -> Mat3 {
    let theta2 = omega_dt.norm_squared();
    let hat = skew(omega_dt);
    let (a, b) = if theta2 < 1e-12 {
        // sin(t)/t and (1-cos(t))/t^2 expanded to O(t^4).
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Mat3::identity() + hat * a + hat * hat * b
}

/// Rigid transformation X_target = R·X_source + T.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    rotation: Mat3,
    translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Pose { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    /// Builds a pose after checking that `rotation` is a proper rotation
    /// (orthonormal within [`ROTATION_TOL`], determinant +1).
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        let deviation = (rotation.transpose() * rotation - Mat3::identity()).norm();
        if deviation >= ROTATION_TOL || rotation.determinant() <= 0.0 {
            return Err(GeometryError::InvalidRotation(deviation));
        }
        Ok(Pose { rotation, translation })
    }

    /// Pose with rotation exp(ω̂·dt) and translation ν·dt, the one-step
    /// integration convention used by the simulator.
    pub fn from_twist(twist: &Twist, dt: f64) -> Self {
        Pose { rotation: exp_rotation(&(twist.omega * dt)), translation: twist.nu * dt }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// R·X + T.
    pub fn transform(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    /// The pose mapping target-frame coordinates back to the source frame.
    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Pose with the translation rescaled by `gamma` (the monocular scale
    /// gauge); rotation is unaffected.
    pub fn scaled_translation(&self, gamma: f64) -> Pose {
        Pose { rotation: self.rotation, translation: self.translation * gamma }
    }
}

/// Instantaneous rigid-body velocity: rotational part `omega` (rad/s) and
/// translational part `nu` (length/s), per Ẋ = ω̂·X + ν.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub omega: Vec3,
    pub nu: Vec3,
}

impl Twist {
    pub fn new(omega: Vec3, nu: Vec3) -> Self {
        Twist { omega, nu }
    }

    pub fn zero() -> Self {
        Twist { omega: Vec3::zeros(), nu: Vec3::zeros() }
    }
}

/// Point in normalized image coordinates (X/Z, Y/Z).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedPoint {
    pub x: f64,
    pub y: f64,
}

impl NormalizedPoint {
    pub fn new(x: f64, y: f64) -> Self {
        NormalizedPoint { x, y }
    }

    /// Homogeneous lift (x, y, 1).
    pub fn homogeneous(&self) -> Vec3 {
        Vec3::new(self.x, self.y, 1.0)
    }

    /// The camera-frame 3D point at depth `z` along this ray.
    pub fn backproject(&self, z: f64) -> Vec3 {
        Vec3::new(self.x * z, self.y * z, z)
    }
}

/// Point in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint {
    pub x: f64,
    pub y: f64,
}

impl PixelPoint {
    pub fn new(x: f64, y: f64) -> Self {
        PixelPoint { x, y }
    }
}

/// Optical-flow vector or two-frame displacement in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flow2 {
    pub u: f64,
    pub v: f64,
}

impl Flow2 {
    pub fn new(u: f64, v: f64) -> Self {
        Flow2 { u, v }
    }

    pub fn norm(&self) -> f64 {
        self.u.hypot(self.v)
    }
}

impl std::ops::Add for Flow2 {
    type Output = Flow2;
    fn add(self, rhs: Flow2) -> Flow2 {
        Flow2 { u: self.u + rhs.u, v: self.v + rhs.v }
    }
}

/// Plane nᵀ·X = d with unit normal and positive distance, expressed in the
/// camera frame. The camera origin lies on the side where nᵀ·X < d.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    n: Vec3,
    d: f64,
}

impl Plane {
    /// Normalizes `n` and validates `d > 0`.
    pub fn new(n: Vec3, d: f64) -> Result<Self, GeometryError> {
        let norm = n.norm();
        if norm < 1e-12 {
            return Err(GeometryError::DegeneratePlane("zero normal".into()));
        }
        if d <= 0.0 {
            return Err(GeometryError::DegeneratePlane(format!("non-positive distance {d}")));
        }
        Ok(Plane { n: n / norm, d })
    }

    pub fn normal(&self) -> &Vec3 {
        &self.n
    }

    pub fn distance(&self) -> f64 {
        self.d
    }

    /// Signed offset nᵀ·X − d; zero on the plane, negative on the camera
    /// side.
    pub fn signed_offset(&self, x: &Vec3) -> f64 {
        self.n.dot(x) - self.d
    }
}

/// Camera calibration. The pixel map is
/// `[f·s_x  f·s_theta  o_x; 0  f·s_y  o_y; 0 0 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub f: f64,
    pub s_x: f64,
    pub s_y: f64,
    pub s_theta: f64,
    pub o_x: f64,
    pub o_y: f64,
}

impl CameraIntrinsics {
    pub fn new(f: f64, s_x: f64, s_y: f64, s_theta: f64, o_x: f64, o_y: f64) -> Self {
        CameraIntrinsics { f, s_x, s_y, s_theta, o_x, o_y }
    }

    /// Square-pixel, zero-skew camera with focal length in pixels.
    pub fn simple(focal_px: f64, o_x: f64, o_y: f64) -> Self {
        CameraIntrinsics { f: focal_px, s_x: 1.0, s_y: 1.0, s_theta: 0.0, o_x, o_y }
    }

    pub fn k_matrix(&self) -> Mat3 {
        Mat3::new(
            self.f * self.s_x,
            self.f * self.s_theta,
            self.o_x,
            0.0,
            self.f * self.s_y,
            self.o_y,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn pixel_from_normalized(&self, x: &NormalizedPoint) -> PixelPoint {
        PixelPoint {
            x: self.f * self.s_x * x.x + self.f * self.s_theta * x.y + self.o_x,
            y: self.f * self.s_y * x.y + self.o_y,
        }
    }

    pub fn normalized_from_pixel(&self, p: &PixelPoint) -> NormalizedPoint {
        let y = (p.y - self.o_y) / (self.f * self.s_y);
        let x = (p.x - self.o_x - self.f * self.s_theta * y) / (self.f * self.s_x);
        NormalizedPoint { x, y }
    }
}

/// Normalized perspective projection (X/Z, Y/Z).
pub fn project(x: &Vec3) -> Result<NormalizedPoint, GeometryError> {
    if x.z < MIN_DEPTH {
        return Err(GeometryError::NonPositiveDepth(x.z));
    }
    Ok(NormalizedPoint { x: x.x / x.z, y: x.y / x.z })
}

/// Rotational component of the continuous flow at `x`; depth-independent.
pub fn rotational_flow(omega: &Vec3, x: &NormalizedPoint) -> Flow2 {
    let xb = x.homogeneous();
    let r = skew(omega) * xb;
    Flow2 { u: r.x - r.z * x.x, v: r.y - r.z * x.y }
}

/// Translational component of the continuous flow at `x`; scales as 1/Z.
pub fn translational_flow(nu: &Vec3, x: &NormalizedPoint, z: f64) -> Result<Flow2, GeometryError> {
    if z < MIN_DEPTH {
        return Err(GeometryError::NonPositiveDepth(z));
    }
    Ok(Flow2 { u: (nu.x - x.x * nu.z) / z, v: (nu.y - x.y * nu.z) / z })
}

/// Continuous optical flow induced at image point `x`, depth `z` by a
/// camera moving with `twist`: the derivative of x̄ = X/Z under
/// Ẋ = ω̂·X + ν, evaluated as the exact sum of its rotational and
/// translational components.
pub fn continuous_flow(
    twist: &Twist,
    x: &NormalizedPoint,
    z: f64,
) -> Result<Flow2, GeometryError> {
    let t = translational_flow(&twist.nu, x, z)?;
    let r = rotational_flow(&twist.omega, x);
    Ok(t + r)
}

/// Two-frame displacement of the image point `x` with depth `z_t` under
/// `delta`: Δx̄ = (z_t/z_next)·ΔR·x̄ + ΔT/z_next − x̄. `z_next` must agree
/// with the propagated depth within [`DEPTH_CONSISTENCY_TOL`] (relative).
pub fn discrete_displacement(
    delta: &Pose,
    x: &NormalizedPoint,
    z_t: f64,
    z_next: f64,
) -> Result<Flow2, GeometryError> {
    if z_t < MIN_DEPTH {
        return Err(GeometryError::NonPositiveDepth(z_t));
    }
    if z_next < MIN_DEPTH {
        return Err(GeometryError::NonPositiveDepth(z_next));
    }
    let moved = delta.transform(&x.backproject(z_t));
    if (moved.z - z_next).abs() > DEPTH_CONSISTENCY_TOL * moved.z.abs().max(1.0) {
        return Err(GeometryError::InconsistentDepth { supplied: z_next, propagated: moved.z });
    }
    let xb = x.homogeneous();
    let disp = (delta.rotation() * xb) * (z_t / z_next) + delta.translation() / z_next - xb;
    Ok(Flow2 { u: disp.x, v: disp.y })
}

/// Continuous epipolar residual ūᵀ·ν̂·x̄ + x̄ᵀ·ω̂·ν̂·x̄ with ū = (u, v, 0);
/// identically zero for flow generated by the same twist at any depth.
pub fn continuous_epipolar_residual(twist: &Twist, x: &NormalizedPoint, u: &Flow2) -> f64 {
    let xb = x.homogeneous();
    let ub = Vec3::new(u.u, u.v, 0.0);
    let nu_hat = skew(&twist.nu);
    ub.dot(&(nu_hat * xb)) + xb.dot(&(skew(&twist.omega) * nu_hat * xb))
}

/// Discrete epipolar residual x̄_nextᵀ·ΔT̂·ΔR·x̄_t; zero for exact
/// correspondences of static points.
pub fn discrete_epipolar_residual(
    delta: &Pose,
    x_t: &NormalizedPoint,
    x_next: &NormalizedPoint,
) -> f64 {
    let e = skew(delta.translation()) * delta.rotation();
    x_next.homogeneous().dot(&(e * x_t.homogeneous()))
}

/// Homography H = ΔR + ΔT·nᵀ/d induced by `plane` under `delta`: for any X
/// on the plane, H·x̄ is the moved point's homogeneous image up to scale.
pub fn plane_homography(plane: &Plane, delta: &Pose) -> Result<Mat3, GeometryError> {
    if plane.distance() <= 0.0 {
        return Err(GeometryError::DegeneratePlane("non-positive distance".into()));
    }
    Ok(delta.rotation() + delta.translation() * plane.normal().transpose() / plane.distance())
}
