//! Correspondence and flow-field rendering with ground-truth labels.

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{FeatureLabel, NoiseSpec, Scene, SimError, Trajectory};
use crate::egomotion::Correspondence;
use crate::geometry::{
    continuous_flow, project, CameraIntrinsics, Flow2, NormalizedPoint, PixelPoint, Pose, Twist,
    MIN_DEPTH,
};

/// Mixes the frame index into the noise seed so every frame pair draws an
/// independent, reproducible stream.
const FRAME_SEED_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

/// One rendered feature: the measured correspondence plus ground truth.
/// `corr.x_next` carries the noise and planted-outlier displacement;
/// `truth_next` is the exact projection. `corr.depth_t` is the true depth
/// at frame t (a perfect range sensor).
#[derive(Debug, Clone)]
pub struct SimFeature {
    pub corr: Correspondence,
    pub label: FeatureLabel,
    pub truth_next: NormalizedPoint,
    pub depth_next: f64,
}

/// All features rendered for one frame pair, with the true camera motion.
#[derive(Debug, Clone)]
pub struct TrackSet {
    pub features: Vec<SimFeature>,
    /// True camera motion, frame t to t + 1.
    pub delta: Pose,
    pub intrinsics: CameraIntrinsics,
    /// Points skipped because they fell behind either camera.
    pub excluded: usize,
    pub planted_outliers: usize,
}

impl TrackSet {
    pub fn correspondences(&self) -> Vec<Correspondence> {
        self.features.iter().map(|f| f.corr.clone()).collect()
    }

    /// Ids of features that are static scene points with no planted error.
    pub fn static_inlier_ids(&self) -> Vec<u64> {
        self.features
            .iter()
            .filter(|f| f.label == FeatureLabel::Static)
            .map(|f| f.corr.id)
            .collect()
    }
}

fn gaussian_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    let r = (-2.0 * u1.ln()).sqrt();
    let a = std::f64::consts::TAU * u2;
    (r * a.cos(), r * a.sin())
}

/// Projects every scene point into frames `k` and `k + 1`, drops points
/// behind either camera, then corrupts the second view per `noise`.
/// Feature ids are stable across calls: static points first in storage
/// order, then each mover's points. Deterministic for fixed inputs.
pub fn render_correspondences(
    scene: &Scene,
    trajectory: &Trajectory,
    k: usize,
    intrinsics: &CameraIntrinsics,
    noise: &NoiseSpec,
) -> Result<TrackSet, SimError> {
    if k + 1 >= trajectory.len() {
        return Err(SimError::FrameOutOfRange { frame: k + 1, len: trajectory.len() });
    }
    for (m, mv) in scene.movers.iter().enumerate() {
        if mv.poses.len() != trajectory.len() {
            return Err(SimError::BadConfig(format!(
                "mover {m} has {} poses for a {}-frame trajectory",
                mv.poses.len(),
                trajectory.len()
            )));
        }
    }
    let pose_t = trajectory.pose(k);
    let pose_next = trajectory.pose(k + 1);
    let delta = trajectory.delta(k);

    let mut features = Vec::new();
    let mut excluded = 0usize;
    let mut id = 0u64;
    let push = |x_t: crate::geometry::Vec3,
                    x_n: crate::geometry::Vec3,
                    label: FeatureLabel,
                    id: u64,
                    features: &mut Vec<SimFeature>,
                    excluded: &mut usize| {
        if x_t.z < MIN_DEPTH || x_n.z < MIN_DEPTH {
            *excluded += 1;
            return;
        }
        let pt = project(&x_t).expect("depth checked");
        let pn = project(&x_n).expect("depth checked");
        features.push(SimFeature {
            corr: Correspondence::new(id, pt, pn).with_depth(x_t.z),
            label,
            truth_next: pn,
            depth_next: x_n.z,
        });
    };

    for p in &scene.static_points {
        push(
            pose_t.transform(p),
            pose_next.transform(p),
            FeatureLabel::Static,
            id,
            &mut features,
            &mut excluded,
        );
        id += 1;
    }
    for (m, mv) in scene.movers.iter().enumerate() {
        for bp in &mv.points {
            let w_t = mv.poses[k].transform(bp);
            let w_n = mv.poses[k + 1].transform(bp);
            push(
                pose_t.transform(&w_t),
                pose_next.transform(&w_n),
                FeatureLabel::Mover(m),
                id,
                &mut features,
                &mut excluded,
            );
            id += 1;
        }
    }
    if features.is_empty() {
        return Err(SimError::EmptyView);
    }

    let mut rng =
        ChaCha8Rng::seed_from_u64(noise.seed ^ (k as u64).wrapping_mul(FRAME_SEED_MIX));
    if noise.sigma_px > 0.0 {
        for f in &mut features {
            let (n1, n2) = gaussian_pair(&mut rng);
            let px = intrinsics.pixel_from_normalized(&f.corr.x_next);
            let noisy = PixelPoint::new(
                px.x + noise.sigma_px * n1,
                px.y + noise.sigma_px * n2,
            );
            f.corr.x_next = intrinsics.normalized_from_pixel(&noisy);
        }
    }
    let n_out = (noise.outlier_fraction * features.len() as f64).floor() as usize;
    if n_out > 0 {
        let b = noise.outlier_box_px;
        for idx in sample(&mut rng, features.len(), n_out) {
            let f = &mut features[idx];
            let px = intrinsics.pixel_from_normalized(&f.corr.x_next);
            let bumped = PixelPoint::new(
                px.x + rng.gen_range(-b..=b),
                px.y + rng.gen_range(-b..=b),
            );
            f.corr.x_next = intrinsics.normalized_from_pixel(&bumped);
            f.label = FeatureLabel::PlantedOutlier;
        }
    }

    Ok(TrackSet {
        features,
        delta,
        intrinsics: *intrinsics,
        excluded,
        planted_outliers: n_out,
    })
}

/// One sample of an instantaneous flow field.
#[derive(Debug, Clone, Copy)]
pub struct FlowSample {
    pub x: NormalizedPoint,
    pub depth: f64,
    pub flow: Flow2,
}

/// Instantaneous flow of every static scene point visible from `pose`
/// under camera `twist`. Movers are excluded: their image motion is not
/// generated by the camera twist alone.
pub fn render_flow_field(
    scene: &Scene,
    pose: &Pose,
    twist: &Twist,
) -> Result<Vec<FlowSample>, SimError> {
    let mut out = Vec::new();
    for p in &scene.static_points {
        let xc = pose.transform(p);
        if xc.z < MIN_DEPTH {
            continue;
        }
        let x = project(&xc)?;
        let flow = continuous_flow(twist, &x, xc.z)?;
        out.push(FlowSample { x, depth: xc.z, flow });
    }
    if out.is_empty() {
        return Err(SimError::EmptyView);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{discrete_epipolar_residual, discrete_displacement, Vec3};
    use crate::sim::presets;

    #[test]
    fn noiseless_features_satisfy_epipolar_and_displacement() {
        let ps = presets::forward(3, 6, 200);
        let ts = render_correspondences(
            &ps.scene,
            &ps.trajectory,
            2,
            &ps.intrinsics,
            &NoiseSpec::none(0),
        )
        .unwrap();
        assert!(ts.features.len() > 150, "only {} features", ts.features.len());
        for f in &ts.features {
            let r = discrete_epipolar_residual(&ts.delta, &f.corr.x_t, &f.corr.x_next);
            assert!(r.abs() < 1e-12, "feature {}: residual {r}", f.corr.id);
            let d = discrete_displacement(
                &ts.delta,
                &f.corr.x_t,
                f.corr.depth_t.unwrap(),
                f.depth_next,
            )
            .unwrap();
            let dx = f.corr.x_next.x - f.corr.x_t.x - d.u;
            let dy = f.corr.x_next.y - f.corr.x_t.y - d.v;
            assert!(dx.abs() < 1e-12 && dy.abs() < 1e-12);
        }
    }

    #[test]
    fn mover_points_violate_the_camera_epipolar_constraint() {
        let ps = presets::two_body(11);
        let ts = render_correspondences(
            &ps.scene,
            &ps.trajectory,
            0,
            &ps.intrinsics,
            &NoiseSpec::none(0),
        )
        .unwrap();
        let mut mover_seen = 0;
        for f in &ts.features {
            let r = discrete_epipolar_residual(&ts.delta, &f.corr.x_t, &f.corr.x_next).abs();
            match f.label {
                FeatureLabel::Static => assert!(r < 1e-12),
                FeatureLabel::Mover(_) => {
                    mover_seen += 1;
                    assert!(r > 1e-6, "mover feature {} residual {r} too small", f.corr.id);
                }
                FeatureLabel::PlantedOutlier => unreachable!("no outliers requested"),
            }
        }
        assert!(mover_seen >= 10);
    }

    #[test]
    fn outlier_count_is_exact_floor() {
        let ps = presets::forward(5, 4, 157);
        for fraction in [0.1, 0.25, 0.4] {
            let noise = NoiseSpec {
                sigma_px: 0.0,
                outlier_fraction: fraction,
                outlier_box_px: 20.0,
                seed: 9,
            };
            let ts =
                render_correspondences(&ps.scene, &ps.trajectory, 0, &ps.intrinsics, &noise)
                    .unwrap();
            let planted = ts
                .features
                .iter()
                .filter(|f| f.label == FeatureLabel::PlantedOutlier)
                .count();
            let expect = (fraction * ts.features.len() as f64).floor() as usize;
            assert_eq!(planted, expect);
            assert_eq!(ts.planted_outliers, expect);
            // Planted displacements stay within the box and are nonzero.
            for f in &ts.features {
                if f.label == FeatureLabel::PlantedOutlier {
                    let t = ps.intrinsics.pixel_from_normalized(&f.truth_next);
                    let m = ps.intrinsics.pixel_from_normalized(&f.corr.x_next);
                    assert!((m.x - t.x).abs() <= 20.0 + 1e-9);
                    assert!((m.y - t.y).abs() <= 20.0 + 1e-9);
                }
            }
        }
    }

    #[test]
    fn gaussian_noise_has_requested_scale() {
        let ps = presets::forward(8, 4, 400);
        let sigma = 0.8;
        let noise = NoiseSpec { sigma_px: sigma, outlier_fraction: 0.0, outlier_box_px: 20.0, seed: 4 };
        let ts = render_correspondences(&ps.scene, &ps.trajectory, 1, &ps.intrinsics, &noise)
            .unwrap();
        let mut devs = Vec::new();
        for f in &ts.features {
            let t = ps.intrinsics.pixel_from_normalized(&f.truth_next);
            let m = ps.intrinsics.pixel_from_normalized(&f.corr.x_next);
            devs.push(m.x - t.x);
            devs.push(m.y - t.y);
        }
        let n = devs.len() as f64;
        let mean = devs.iter().sum::<f64>() / n;
        let var = devs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        assert!(
            (sd - sigma).abs() < 0.15 * sigma,
            "sample sd {sd} vs requested {sigma}"
        );
    }

    #[test]
    fn rendering_is_deterministic() {
        let ps = presets::two_body(21);
        let noise =
            NoiseSpec { sigma_px: 0.5, outlier_fraction: 0.2, outlier_box_px: 20.0, seed: 77 };
        let a = render_correspondences(&ps.scene, &ps.trajectory, 0, &ps.intrinsics, &noise)
            .unwrap();
        let b = render_correspondences(&ps.scene, &ps.trajectory, 0, &ps.intrinsics, &noise)
            .unwrap();
        assert_eq!(a.features.len(), b.features.len());
        for (fa, fb) in a.features.iter().zip(&b.features) {
            assert_eq!(fa.corr.id, fb.corr.id);
            assert_eq!(fa.label, fb.label);
            assert_eq!(fa.corr.x_next.x.to_bits(), fb.corr.x_next.x.to_bits());
            assert_eq!(fa.corr.x_next.y.to_bits(), fb.corr.x_next.y.to_bits());
        }
        // A different frame draws a different noise stream.
        let c = render_correspondences(&ps.scene, &ps.trajectory, 1, &ps.intrinsics, &noise)
            .unwrap();
        assert_ne!(
            a.features[0].corr.x_next.x.to_bits(),
            c.features[0].corr.x_next.x.to_bits()
        );
    }

    #[test]
    fn empty_view_is_an_error() {
        let scene = Scene {
            static_points: vec![Vec3::new(0.0, 0.0, -5.0), Vec3::new(1.0, 0.0, -8.0)],
            movers: vec![],
            ground: None,
        };
        let traj = crate::sim::integrate_trajectory(
            &[Twist::new(Vec3::zeros(), Vec3::new(0.0, 0.0, -1.0))],
            1.0,
        )
        .unwrap();
        let intr = CameraIntrinsics::simple(500.0, 320.0, 240.0);
        let r = render_correspondences(&scene, &traj, 0, &intr, &NoiseSpec::none(0));
        assert!(matches!(r, Err(SimError::EmptyView)));
    }

    #[test]
    fn flow_field_matches_continuous_model() {
        let ps = presets::forward(13, 4, 150);
        let twist = Twist::new(Vec3::new(0.01, -0.02, 0.004), Vec3::new(0.1, 0.0, -1.0));
        let samples = render_flow_field(&ps.scene, ps.trajectory.pose(0), &twist).unwrap();
        assert!(samples.len() > 100);
        for s in &samples {
            let expect = continuous_flow(&twist, &s.x, s.depth).unwrap();
            assert_eq!(s.flow.u.to_bits(), expect.u.to_bits());
            assert_eq!(s.flow.v.to_bits(), expect.v.to_bits());
        }
    }
}
