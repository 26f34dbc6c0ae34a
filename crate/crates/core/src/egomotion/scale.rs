//! Monocular scale recovery: a reconstruction is only determined up to a
//! global factor, but the camera's height above the road is usually known.
//! Fitting a plane to ground-candidate points and comparing its distance
//! to the known height pins the factor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::EgomotionError;
use crate::geometry::{Plane, Vec3};

/// Controls for the robust ground-plane fit.
#[derive(Debug, Clone)]
pub struct PlaneFitConfig {
    /// Inlier distance to the hypothesis plane, in reconstruction units.
    pub threshold: f64,
    /// Number of 3-point hypotheses drawn.
    pub iterations: usize,
    /// Smallest consensus set accepted as a plane.
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for PlaneFitConfig {
    fn default() -> Self {
        PlaneFitConfig { threshold: 0.01, iterations: 200, min_inliers: 3, seed: 0 }
    }
}

/// Recovered scale factor and the plane that produced it.
#[derive(Debug, Clone)]
pub struct ScaleEstimate {
    /// Multiply reconstructed translations and depths by this to obtain
    /// metric units.
    pub gamma: f64,
    /// Ground plane in reconstruction units.
    pub plane: Plane,
    /// Indices of candidates within threshold of the refined plane.
    pub inliers: Vec<usize>,
}

/// Total-least-squares plane through `points`, or `None` when they are
/// collinear or the plane passes through the camera center.
fn fit_plane(points: &[Vec3], indices: &[usize]) -> Option<(Vec3, f64)> {
    let k = indices.len() as f64;
    let centroid = indices.iter().map(|&i| points[i]).sum::<Vec3>() / k;
    let mut scatter = crate::geometry::Mat3::zeros();
    for &i in indices {
        let d = points[i] - centroid;
        scatter += d * d.transpose();
    }
    let eig = scatter.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    // Two vanishing principal extents mean the candidates sit on a line.
    if eig.eigenvalues[order[1]] <= 1e-12 * eig.eigenvalues[order[2]].max(1e-300) {
        return None;
    }
    let mut normal: Vec3 = eig.eigenvectors.column(order[0]).into();
    let mut d = normal.dot(&centroid);
    if d < 0.0 {
        normal = -normal;
        d = -d;
    }
    (d > 1e-12).then_some((normal, d))
}

/// Scale factor γ = height / plane-distance from a robust plane fit over
/// ground-candidate points of an up-to-scale reconstruction.
///
/// Draws 3-point plane hypotheses, keeps the one with the largest inlier
/// count (first maximum on ties, so the result is a deterministic function
/// of the inputs and `cfg.seed`), and refines it by total least squares
/// over its consensus set.
pub fn scale_from_ground_plane(
    points: &[Vec3],
    height: f64,
    cfg: &PlaneFitConfig,
) -> Result<ScaleEstimate, EgomotionError> {
    if points.len() < 3 {
        return Err(EgomotionError::NotEnoughCorrespondences { needed: 3, got: points.len() });
    }
    if !(height > 0.0) {
        return Err(EgomotionError::BadProblem(format!("camera height {height}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, Vec<usize>)> = None;
    let mut any_valid = false;
    for _ in 0..cfg.iterations.max(1) {
        let pick = rand::seq::index::sample(&mut rng, points.len(), 3).into_vec();
        let (a, b, c) = (points[pick[0]], points[pick[1]], points[pick[2]]);
        let mut normal = (b - a).cross(&(c - a));
        let span = (b - a).norm() * (c - a).norm();
        if normal.norm() <= 1e-9 * span.max(1e-300) {
            continue;
        }
        normal /= normal.norm();
        let mut d = normal.dot(&a);
        if d < 0.0 {
            normal = -normal;
            d = -d;
        }
        if d <= 1e-12 {
            continue;
        }
        any_valid = true;
        let inliers: Vec<usize> = (0..points.len())
            .filter(|&i| (normal.dot(&points[i]) - d).abs() < cfg.threshold)
            .collect();
        if best.as_ref().map_or(true, |(n, _)| inliers.len() > *n) {
            best = Some((inliers.len(), inliers));
        }
    }
    if !any_valid {
        return Err(EgomotionError::DegeneratePlane(
            "every sampled triple was collinear or met the camera center".into(),
        ));
    }
    let (count, consensus) = best.expect("a valid hypothesis was scored");
    if count < cfg.min_inliers.max(3) {
        return Err(EgomotionError::NoConsensus);
    }
    let (normal, d) = fit_plane(points, &consensus)
        .ok_or_else(|| EgomotionError::DegeneratePlane("consensus refit collapsed".into()))?;
    let plane = Plane::new(normal, d)?;
    let inliers: Vec<usize> =
        (0..points.len()).filter(|&i| plane.signed_offset(&points[i]).abs() < cfg.threshold).collect();
    Ok(ScaleEstimate { gamma: height / d, plane, inliers })
}
