//! Direct photometric pose refinement: instead of matching features and
//! minimizing geometric error, warp pixels from frame t into frame t+1
//! under the candidate pose and known depths and minimize the intensity
//! difference. Needs a good initialization and per-feature depth, but uses
//! image evidence that feature matching throws away.

use nalgebra::{Matrix1x6, Matrix2, Matrix2x3, Matrix6, Vector6};

use super::EgomotionError;
use crate::flow::{gradient, Image};
use crate::geometry::{
    exp_rotation, skew, CameraIntrinsics, PixelPoint, Pose, Vec3, MIN_DEPTH,
};

#[derive(Debug, Clone)]
pub struct DirectConfig {
    /// Initial Levenberg damping.
    pub damping: f64,
    pub max_iterations: usize,
    /// Relative objective decrease below which iteration stops.
    pub tolerance: f64,
}

impl Default for DirectConfig {
    fn default() -> Self {
        DirectConfig { damping: 1e-3, max_iterations: 50, tolerance: 1e-10 }
    }
}

#[derive(Debug, Clone)]
pub struct DirectResult {
    pub pose: Pose,
    /// Photometric objective after each accepted step, initial value first.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Features discarded up front: outside frame t, or warped outside
    /// frame t+1 (or behind the camera) by the initialization.
    pub dropped: usize,
}

struct Active {
    /// Frame-t point at its supplied depth, in camera coordinates.
    point: Vec3,
    /// Frame-t intensity, sampled once.
    intensity: f64,
}

/// Warp a frame-t camera point into frame-t+1 pixel coordinates.
fn warp(pose: &Pose, intrinsics: &CameraIntrinsics, point: &Vec3) -> Option<(PixelPoint, Vec3)> {
    let moved = pose.transform(point);
    if moved.z < MIN_DEPTH {
        return None;
    }
    let normalized = crate::geometry::project(&moved).ok()?;
    Some((intrinsics.pixel_from_normalized(&normalized), moved))
}

/// Sum of squared intensity differences, or `None` when the pose pushes an
/// active feature behind the camera or out of the second image.
fn objective(
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    image_next: &Image,
    active: &[Active],
) -> Option<f64> {
    let mut total = 0.0;
    for a in active {
        let (pixel, _) = warp(pose, intrinsics, &a.point)?;
        let observed = image_next.sample(pixel.x, pixel.y).ok()?;
        let r = observed - a.intensity;
        total += r * r;
    }
    total.is_finite().then_some(total)
}

const DAMPING_MAX: f64 = 1e12;
const DAMPING_MIN: f64 = 1e-12;

/// Photometric Gauss-Newton refinement of `init`.
///
/// Features must come with known frame-t depths (same length as
/// `features`). The active set is frozen up front: features that fall
/// outside either image under the initialization are dropped and counted,
/// and at least six must survive. Steps that raise the objective or push
/// an active feature out of view are rejected at tenfold damping, so the
/// accepted-step trace is non-increasing; refinement fails with
/// divergence when no step is accepted before the damping cap.
pub fn direct_method_refine(
    image_t: &Image,
    image_next: &Image,
    features: &[PixelPoint],
    depths: &[f64],
    intrinsics: &CameraIntrinsics,
    init: &Pose,
    cfg: &DirectConfig,
) -> Result<DirectResult, EgomotionError> {
    if features.len() != depths.len() {
        return Err(EgomotionError::BadProblem(format!(
            "{} depths for {} features",
            depths.len(),
            features.len()
        )));
    }
    if let Some((i, z)) = depths.iter().enumerate().find(|(_, z)| **z <= 0.0) {
        return Err(EgomotionError::BadProblem(format!("depth {z} at feature {i}")));
    }
    if !(cfg.damping > 0.0) || !(cfg.tolerance > 0.0) || cfg.max_iterations == 0 {
        return Err(EgomotionError::BadProblem(
            "damping, tolerance, and max_iterations must be positive".into(),
        ));
    }
    let mut active = Vec::with_capacity(features.len());
    for (p, z) in features.iter().zip(depths) {
        let Ok(intensity) = image_t.sample(p.x, p.y) else { continue };
        let point = intrinsics.normalized_from_pixel(p).backproject(*z);
        let visible = warp(init, intrinsics, &point)
            .map_or(false, |(q, _)| image_next.sample(q.x, q.y).is_ok());
        if visible {
            active.push(Active { point, intensity });
        }
    }
    let dropped = features.len() - active.len();
    if active.len() < 6 {
        return Err(EgomotionError::NotEnoughCorrespondences { needed: 6, got: active.len() });
    }
    // Linear part of the pixel-from-normalized map.
    let k_lin = Matrix2::new(
        intrinsics.f * intrinsics.s_x,
        intrinsics.f * intrinsics.s_theta,
        0.0,
        intrinsics.f * intrinsics.s_y,
    );
    let mut pose = init.clone();
    let mut obj = objective(&pose, intrinsics, image_next, &active)
        .ok_or_else(|| EgomotionError::BadProblem("initialization leaves the image".into()))?;
    let mut trace = vec![obj];
    let mut lambda = cfg.damping;
    let mut iterations = 0;
    let mut converged = false;
    while !converged && iterations < cfg.max_iterations {
        let mut hessian = Matrix6::zeros();
        let mut grad = Vector6::zeros();
        for a in &active {
            let (pixel, moved) =
                warp(&pose, intrinsics, &a.point).expect("accepted state keeps features visible");
            let observed = image_next
                .sample(pixel.x, pixel.y)
                .expect("accepted state keeps features visible");
            let g = gradient(image_next, &pixel)
                .map_err(|e| EgomotionError::BadProblem(format!("gradient at active feature: {e}")))?;
            let inv_z = 1.0 / moved.z;
            let proj = Matrix2x3::new(
                inv_z,
                0.0,
                -moved.x * inv_z * inv_z,
                0.0,
                inv_z,
                -moved.y * inv_z * inv_z,
            );
            let rotated = moved - pose.translation();
            let pixel_from_point = k_lin * proj;
            let mut jac = Matrix1x6::zeros();
            let d_omega = pixel_from_point * (-skew(&rotated));
            let d_t = pixel_from_point;
            for c in 0..3 {
                jac[c] = g.u * d_omega[(0, c)] + g.v * d_omega[(1, c)];
                jac[3 + c] = g.u * d_t[(0, c)] + g.v * d_t[(1, c)];
            }
            let r = observed - a.intensity;
            hessian += jac.transpose() * jac;
            grad += jac.transpose() * r;
        }
        let (next_pose, next_obj) = loop {
            let mut damped = hessian;
            for i in 0..6 {
                damped[(i, i)] += lambda;
            }
            let step = damped
                .cholesky()
                .map(|ch| ch.solve(&-grad))
                .ok_or(EgomotionError::RankDeficientNormalEquations)?;
            let rot = exp_rotation(&Vec3::new(step[0], step[1], step[2])) * pose.rotation();
            let t = pose.translation() + Vec3::new(step[3], step[4], step[5]);
            let trial = Pose::new(rot, t).ok();
            let trial_obj = trial
                .as_ref()
                .and_then(|p| objective(p, intrinsics, image_next, &active));
            match (trial, trial_obj) {
                (Some(p), Some(o)) if o <= obj => {
                    lambda = (lambda / 10.0).max(DAMPING_MIN);
                    break (p, o);
                }
                _ => {
                    lambda *= 10.0;
                    if lambda > DAMPING_MAX {
                        return Err(EgomotionError::Diverged(lambda));
                    }
                }
            }
        };
        let decrease = obj - next_obj;
        pose = next_pose;
        obj = next_obj;
        trace.push(obj);
        iterations += 1;
        converged = decrease <= cfg.tolerance * obj.max(1e-30) || obj < 1e-30;
    }
    Ok(DirectResult { pose, objective_trace: trace, iterations, converged, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Plane;

    const W: usize = 96;
    const H: usize = 96;

    fn intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::simple(110.0, 47.5, 47.5)
    }

    fn oblique_plane() -> Plane {
        Plane::new(Vec3::new(0.25, 0.2, 0.95).normalize(), 2.0).unwrap()
    }

    /// Smooth albedo as a function of position on the plane; wavelengths
    /// are hundreds of pixels so bilinear resampling stays faithful.
    fn albedo(plane: &Plane, point: &Vec3) -> f64 {
        let n = plane.normal();
        let e1 = Vec3::new(n.y, -n.x, 0.0).normalize();
        let e2 = n.cross(&e1);
        let a = e1.dot(point);
        let b = e2.dot(point);
        128.0
            + 45.0 * (0.9 * a).sin() * (0.75 * b).cos()
            + 22.0 * (0.35 * a + 0.28 * b).sin()
            + 12.0 * (0.55 * b - 0.4 * a).cos()
    }

    /// Ray-cast render of the plane from the camera displaced by `pose`
    /// relative to the reference frame (identity renders the reference).
    fn render(plane: &Plane, pose: &Pose, k: &CameraIntrinsics) -> Image {
        let inv = pose.inverse();
        // Plane in the displaced frame.
        let n2 = pose.rotation() * plane.normal();
        let d2 = plane.distance() + n2.dot(pose.translation());
        Image::from_fn(W, H, |px, py| {
            let ray = k
                .normalized_from_pixel(&PixelPoint::new(px as f64, py as f64))
                .homogeneous();
            let z = d2 / n2.dot(&ray);
            albedo(plane, &inv.transform(&(ray * z)))
        })
    }

    fn feature_grid(step: usize) -> Vec<PixelPoint> {
        let mut out = Vec::new();
        let mut y = 10;
        while y <= H - 11 {
            let mut x = 10;
            while x <= W - 11 {
                out.push(PixelPoint::new(x as f64, y as f64));
                x += step;
            }
            y += step;
        }
        out
    }

    fn plane_depths(plane: &Plane, k: &CameraIntrinsics, features: &[PixelPoint]) -> Vec<f64> {
        features
            .iter()
            .map(|p| {
                let ray = k.normalized_from_pixel(p).homogeneous();
                plane.distance() / plane.normal().dot(&ray)
            })
            .collect()
    }

    fn true_pose() -> Pose {
        Pose::new(
            exp_rotation(&Vec3::new(0.004, -0.006, 0.003)),
            Vec3::new(0.03, -0.02, 0.05),
        )
        .unwrap()
    }

    fn rotation_angle(a: &crate::geometry::Mat3, b: &crate::geometry::Mat3) -> f64 {
        let c = ((a.transpose() * b).trace() - 1.0) / 2.0;
        c.clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn ground_truth_initialization_stays_put() {
        let k = intrinsics();
        let plane = oblique_plane();
        let truth = true_pose();
        let i1 = render(&plane, &Pose::identity(), &k);
        let i2 = render(&plane, &truth, &k);
        let features = feature_grid(6);
        let depths = plane_depths(&plane, &k, &features);
        let result =
            direct_method_refine(&i1, &i2, &features, &depths, &k, &truth, &DirectConfig::default())
                .unwrap();
        assert!(result.converged);
        // Bilinear resampling leaves a residual objective, so "stays put"
        // means within the interpolation floor: about a hundredth of a
        // pixel, f * 2e-4 rad.
        let dr = rotation_angle(result.pose.rotation(), truth.rotation());
        let dt = (result.pose.translation() - truth.translation()).norm();
        assert!(dr < 2e-4, "rotation moved {dr:.3e} rad from truth");
        assert!(dt < 5e-4, "translation moved {dt:.3e} from truth");
    }

    #[test]
    fn half_degree_perturbation_is_recovered() {
        let k = intrinsics();
        let plane = oblique_plane();
        let truth = true_pose();
        let i1 = render(&plane, &Pose::identity(), &k);
        let i2 = render(&plane, &truth, &k);
        let features = feature_grid(6);
        let depths = plane_depths(&plane, &k, &features);
        let half_degree = 0.5f64.to_radians();
        let init = Pose::new(
            exp_rotation(&(Vec3::new(2.0, -1.0, 2.0).normalize() * half_degree))
                * truth.rotation(),
            truth.translation() + Vec3::new(-0.004, 0.006, -0.01),
        )
        .unwrap();
        let result =
            direct_method_refine(&i1, &i2, &features, &depths, &k, &init, &DirectConfig::default())
                .unwrap();
        let dr = rotation_angle(result.pose.rotation(), truth.rotation());
        assert!(
            dr < 0.02f64.to_radians(),
            "residual rotation error {:.4}°",
            dr.to_degrees()
        );
        for pair in result.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0]);
        }
        assert!(result.objective_trace.last().unwrap() < &result.objective_trace[0]);
    }

    #[test]
    fn doubled_depths_double_the_recovered_translation() {
        // The same planar image pair is explained exactly by doubling the
        // plane distance and the translation, so feeding doubled depths
        // must pull the translation to twice the truth with the rotation
        // intact.
        let k = intrinsics();
        let plane = oblique_plane();
        let truth = true_pose();
        let i1 = render(&plane, &Pose::identity(), &k);
        let i2 = render(&plane, &truth, &k);
        let features = feature_grid(6);
        let depths: Vec<f64> =
            plane_depths(&plane, &k, &features).iter().map(|z| 2.0 * z).collect();
        let result =
            direct_method_refine(&i1, &i2, &features, &depths, &k, &truth, &DirectConfig::default())
                .unwrap();
        let dr = rotation_angle(result.pose.rotation(), truth.rotation());
        let dt = (result.pose.translation() - truth.translation() * 2.0).norm();
        assert!(dr < 5e-4, "rotation error {dr:.3e} rad");
        assert!(
            dt < 0.01 * truth.translation().norm(),
            "translation {:?} vs doubled truth {:?}",
            result.pose.translation(),
            truth.translation() * 2.0
        );
    }

    #[test]
    fn out_of_view_features_are_dropped_and_reported() {
        let k = intrinsics();
        let plane = oblique_plane();
        let truth = true_pose();
        let i1 = render(&plane, &Pose::identity(), &k);
        let i2 = render(&plane, &truth, &k);
        let mut features = feature_grid(8);
        let n_good = features.len();
        features.push(PixelPoint::new(-30.0, 12.0));
        features.push(PixelPoint::new(12.0, 4000.0));
        let depths = plane_depths(&plane, &k, &features);
        let result =
            direct_method_refine(&i1, &i2, &features, &depths, &k, &truth, &DirectConfig::default())
                .unwrap();
        assert_eq!(result.dropped, 2);
        assert!(n_good >= 6);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let k = intrinsics();
        let plane = oblique_plane();
        let i1 = render(&plane, &Pose::identity(), &k);
        let features = feature_grid(8);
        let depths = plane_depths(&plane, &k, &features);
        assert!(matches!(
            direct_method_refine(
                &i1,
                &i1,
                &features[..4],
                &depths[..5],
                &k,
                &Pose::identity(),
                &DirectConfig::default()
            ),
            Err(EgomotionError::BadProblem(_))
        ));
        let far = vec![PixelPoint::new(-50.0, -50.0); 8];
        let far_depths = vec![2.0; 8];
        assert!(matches!(
            direct_method_refine(
                &i1,
                &i1,
                &far,
                &far_depths,
                &k,
                &Pose::identity(),
                &DirectConfig::default()
            ),
            Err(EgomotionError::NotEnoughCorrespondences { needed: 6, got: 0 })
        ));
    }
}
