//! Named scene presets. The world frame coincides with the first camera
//! frame: x right, y down, z forward; the road plane is y = 1.5 (camera
//! height 1.5) where present. Distances are meters, one trajectory step is
//! one frame.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{integrate_trajectory, Mover, Scene, Trajectory};
use crate::geometry::{exp_rotation, CameraIntrinsics, Plane, Pose, Twist, Vec3};

/// A ready-to-render scene: contents, camera path, and intrinsics
/// (f = 500 px, 640x480 principal point).
#[derive(Debug, Clone)]
pub struct PresetScene {
    pub scene: Scene,
    pub trajectory: Trajectory,
    pub intrinsics: CameraIntrinsics,
}

fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::simple(500.0, 320.0, 240.0)
}

fn ground_plane() -> Plane {
    Plane::new(Vec3::new(0.0, 1.0, 0.0), 1.5).expect("valid ground plane")
}

/// Scatters `n` points: 30% exactly on the road plane y = 1.5, the rest in
/// a box above it, spread along `depth_range` so features remain visible
/// as the camera advances.
fn scatter(rng: &mut ChaCha8Rng, n: usize, depth_range: (f64, f64)) -> Vec<Vec3> {
    let mut pts = Vec::with_capacity(n);
    let n_ground = (0.3 * n as f64).round() as usize;
    for i in 0..n {
        let z = rng.gen_range(depth_range.0..depth_range.1);
        if i < n_ground {
            pts.push(Vec3::new(rng.gen_range(-6.0..6.0), 1.5, z));
        } else {
            pts.push(Vec3::new(rng.gen_range(-8.0..8.0), rng.gen_range(-2.0..1.45), z));
        }
    }
    pts
}

/// Box of body-frame points for a vehicle-like mover.
fn mover_points(rng: &mut ChaCha8Rng, n: usize, half: Vec3) -> Vec<Vec3> {
    (0..n)
        .map(|_| {
            Vec3::new(
                rng.gen_range(-half.x..half.x),
                rng.gen_range(-half.y..half.y),
                rng.gen_range(-half.z..half.z),
            )
        })
        .collect()
}

/// Constant-velocity body: identity attitude, centroid translating from
/// `start` by `vel` per frame.
fn linear_mover(points: Vec<Vec3>, start: Vec3, vel: Vec3, frames: usize) -> Mover {
    let poses = (0..frames)
        .map(|k| Pose::new(crate::geometry::Mat3::identity(), start + vel * k as f64))
        .collect::<Result<Vec<_>, _>>()
        .expect("identity attitude is valid");
    Mover { points, poses }
}

/// Straight forward drive over a static scene with a road plane.
pub fn forward(seed: u64, frames: usize, n_points: usize) -> PresetScene {
    assert!(frames >= 2, "need at least two frames");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let speed = 1.0;
    let depth_max = 10.0 + 30.0 + frames as f64 * speed;
    let scene = Scene {
        static_points: scatter(&mut rng, n_points, (4.0, depth_max)),
        movers: vec![],
        ground: Some(ground_plane()),
    };
    let twists = vec![Twist::new(Vec3::zeros(), Vec3::new(0.0, 0.0, -speed)); frames - 1];
    let trajectory = integrate_trajectory(&twists, 1.0).expect("positive dt");
    PresetScene { scene, trajectory, intrinsics: default_intrinsics() }
}

/// Forward drive with a faster vehicle ahead pulling away.
pub fn overtake(seed: u64) -> PresetScene {
    let frames = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let statics = scatter(&mut rng, 150, (4.0, 48.0));
    let body = mover_points(&mut rng, 14, Vec3::new(0.5, 0.35, 0.9));
    let mover = linear_mover(body, Vec3::new(1.7, 0.8, 9.5), Vec3::new(0.0, 0.0, 2.4), frames);
    let scene =
        Scene { static_points: statics, movers: vec![mover], ground: Some(ground_plane()) };
    let twists = vec![Twist::new(Vec3::zeros(), Vec3::new(0.0, 0.0, -1.0)); frames - 1];
    let trajectory = integrate_trajectory(&twists, 1.0).expect("positive dt");
    PresetScene { scene, trajectory, intrinsics: default_intrinsics() }
}

/// Forward drive closing on a slower vehicle ahead. A point at true
/// height `y` with a lead moving at fraction `v` of camera speed
/// triangulates (under the static hypothesis) at apparent height
/// `y / (1 - v)`; the body sits low (y in [0.6, 1.2]) and `v = 0.65`,
/// so every body point lands at 1.71 or deeper below eye level, past
/// the road plane at 1.5.
pub fn lead_vehicle(seed: u64) -> PresetScene {
    let frames = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let statics = scatter(&mut rng, 150, (4.0, 48.0));
    let body = mover_points(&mut rng, 14, Vec3::new(0.6, 0.3, 0.7));
    let mover = linear_mover(body, Vec3::new(0.4, 0.9, 14.0), Vec3::new(0.0, 0.0, 0.65), frames);
    let scene =
        Scene { static_points: statics, movers: vec![mover], ground: Some(ground_plane()) };
    let twists = vec![Twist::new(Vec3::zeros(), Vec3::new(0.0, 0.0, -1.0)); frames - 1];
    let trajectory = integrate_trajectory(&twists, 1.0).expect("positive dt");
    PresetScene { scene, trajectory, intrinsics: default_intrinsics() }
}

/// Forward drive past an independently rotating and translating body.
pub fn two_body(seed: u64) -> PresetScene {
    let frames = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let statics = scatter(&mut rng, 160, (4.0, 42.0));
    let body = mover_points(&mut rng, 16, Vec3::new(0.8, 0.5, 0.9));
    let omega_b = Vec3::new(0.02, -0.035, 0.015);
    let start = Vec3::new(2.5, -0.4, 11.0);
    let vel = Vec3::new(-0.06, 0.03, 0.45);
    let poses = (0..frames)
        .map(|k| {
            Pose::new(exp_rotation(&(omega_b * k as f64)), start + vel * k as f64)
                .expect("rotation is orthonormal")
        })
        .collect();
    let scene = Scene {
        static_points: statics,
        movers: vec![Mover { points: body, poses }],
        ground: Some(ground_plane()),
    };
    let twists = vec![Twist::new(Vec3::zeros(), Vec3::new(0.0, 0.0, -0.9)); frames - 1];
    let trajectory = integrate_trajectory(&twists, 1.0).expect("positive dt");
    PresetScene { scene, trajectory, intrinsics: default_intrinsics() }
}

/// Planar circular arc: every frame-to-frame motion is exactly a unit
/// chord of a circle, heading change `theta` about the camera X axis, so
/// the relative pose is R = rot_x(-theta), T = -(0, sin(theta/2),
/// cos(theta/2)); the chord leans half the heading change.
pub fn circular(seed: u64, theta: f64, frames: usize, n_points: usize) -> PresetScene {
    assert!(frames >= 2, "need at least two frames");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (s, c) = ((theta / 2.0).sin(), (theta / 2.0).cos());
    let mut poses = Vec::with_capacity(frames);
    let mut center = Vec3::zeros();
    for k in 0..frames {
        let kf = k as f64;
        let r_wc = exp_rotation(&Vec3::new(-kf * theta, 0.0, 0.0));
        poses.push(Pose::new(r_wc, -(r_wc * center)).expect("rotation is orthonormal"));
        let chord_world = r_wc.transpose() * Vec3::new(0.0, -s, c);
        center += chord_world;
    }
    let trajectory = Trajectory::from_poses(poses).expect("nonempty");
    let static_points = (0..n_points)
        .map(|_| {
            Vec3::new(
                rng.gen_range(-6.0..6.0),
                rng.gen_range(-6.0..6.0),
                rng.gen_range(5.0..30.0),
            )
        })
        .collect();
    let scene = Scene { static_points, movers: vec![], ground: None };
    PresetScene { scene, trajectory, intrinsics: default_intrinsics() }
}
