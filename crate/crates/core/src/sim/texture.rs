//! Analytic band-limited textures and textured-plane image rendering.
//!
//! Intensities come from closed-form sums of sinusoids, so rendered images
//! have known sub-pixel structure and no resampling artifacts; tracking
//! oracles compare against exact displacements.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::flow::Image;
use crate::geometry::{CameraIntrinsics, PixelPoint, Plane, Pose, Vec3, MIN_DEPTH};

/// Sum of randomly oriented sinusoids with values in (0, 1). Wavelengths
/// are in the units of whatever chart the texture is evaluated on.
#[derive(Debug, Clone)]
pub struct SinusoidTexture {
    waves: Vec<Wave>,
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    amp: f64,
    kx: f64,
    ky: f64,
    phase: f64,
}

impl SinusoidTexture {
    /// Draws `waves` components with log-uniform wavelengths in
    /// `[min_wavelength, max_wavelength]`, uniform orientations and phases,
    /// and amplitudes normalized so the total swing stays inside (0, 1).
    /// At least five components are required so no single orientation
    /// dominates the local structure.
    pub fn random(seed: u64, waves: usize, min_wavelength: f64, max_wavelength: f64) -> Self {
        assert!(waves >= 5, "texture needs at least five sinusoids, got {waves}");
        assert!(
            0.0 < min_wavelength && min_wavelength <= max_wavelength,
            "bad wavelength range [{min_wavelength}, {max_wavelength}]"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut raw = Vec::with_capacity(waves);
        let mut total = 0.0;
        for _ in 0..waves {
            let lambda = (rng.gen_range(min_wavelength.ln()..=max_wavelength.ln())).exp();
            let dir = rng.gen_range(0.0..std::f64::consts::TAU);
            let amp = rng.gen_range(0.5..1.0);
            let k = std::f64::consts::TAU / lambda;
            total += amp;
            raw.push(Wave { amp, kx: k * dir.cos(), ky: k * dir.sin(), phase: rng.gen_range(0.0..std::f64::consts::TAU) });
        }
        let scale = 0.45 / total;
        for w in &mut raw {
            w.amp *= scale;
        }
        SinusoidTexture { waves: raw }
    }

    pub fn eval(&self, s: f64, t: f64) -> f64 {
        let mut v = 0.5;
        for w in &self.waves {
            v += w.amp * (w.kx * s + w.ky * t + w.phase).sin();
        }
        v
    }
}

/// A world plane carrying a 2-D chart for texture lookup. The chart origin
/// is the plane point closest to the world origin and the axes are an
/// orthonormal basis of the plane.
#[derive(Debug, Clone)]
pub struct TexturedPlane {
    plane: Plane,
    origin: Vec3,
    e1: Vec3,
    e2: Vec3,
}

impl TexturedPlane {
    pub fn new(plane: Plane) -> Self {
        let n = plane.normal();
        let origin = n * plane.distance();
        // Seed the chart with the world axis least aligned with the normal.
        let axis = if n.x.abs() <= n.y.abs() && n.x.abs() <= n.z.abs() {
            Vec3::new(1.0, 0.0, 0.0)
        } else if n.y.abs() <= n.z.abs() {
            Vec3::new(0.0, 1.0, 0.0)
        } else {
            Vec3::new(0.0, 0.0, 1.0)
        };
        let e1 = n.cross(&axis).normalize();
        let e2 = n.cross(&e1);
        TexturedPlane { plane, origin, e1, e2 }
    }

    pub fn plane(&self) -> &Plane {
        &self.plane
    }

    fn chart(&self, x_world: &Vec3) -> (f64, f64) {
        let r = x_world - self.origin;
        (self.e1.dot(&r), self.e2.dot(&r))
    }
}

/// Renders the textured plane as seen by a camera. Pixels whose rays miss
/// the plane (parallel or intersecting behind the camera) get a neutral
/// 0.5. Pixel (i, j) samples the ray through pixel coordinates exactly
/// (i, j).
pub fn render_image(
    texture: &SinusoidTexture,
    plane: &TexturedPlane,
    camera: &Pose,
    intrinsics: &CameraIntrinsics,
    width: usize,
    height: usize,
) -> Image {
    let r_t = camera.rotation().transpose();
    let center = -(r_t * camera.translation());
    let n = plane.plane.normal();
    let d = plane.plane.distance();
    Image::from_fn(width, height, |i, j| {
        let x = intrinsics.normalized_from_pixel(&PixelPoint::new(i as f64, j as f64));
        let dir = r_t * x.homogeneous();
        let denom = n.dot(&dir);
        if denom.abs() < 1e-12 {
            return 0.5;
        }
        let lambda = (d - n.dot(&center)) / denom;
        if lambda <= MIN_DEPTH {
            return 0.5;
        }
        let hit = center + lambda * dir;
        let (s, t) = plane.chart(&hit);
        texture.eval(s, t)
    })
}

/// Renders a fronto-parallel textured plane from two in-plane camera
/// positions chosen so the second image is the first translated by exactly
/// `shift_px` pixels: `I2(q) = I1(q - shift_px)`. Focal length is 500 px
/// and the plane sits 5 units ahead, so one texture unit spans 100 px.
pub fn render_shifted_pair(
    texture: &SinusoidTexture,
    width: usize,
    height: usize,
    shift_px: (f64, f64),
) -> (Image, Image) {
    let f = 500.0;
    let z0 = 5.0;
    let intr = CameraIntrinsics::simple(f, width as f64 / 2.0, height as f64 / 2.0);
    let plane =
        TexturedPlane::new(Plane::new(Vec3::new(0.0, 0.0, 1.0), z0).expect("valid plane"));
    let cam1 = Pose::identity();
    let cam2 = Pose::new(
        crate::geometry::Mat3::identity(),
        Vec3::new(shift_px.0 * z0 / f, shift_px.1 * z0 / f, 0.0),
    )
    .expect("valid pose");
    (
        render_image(texture, &plane, &cam1, &intr, width, height),
        render_image(texture, &plane, &cam2, &intr, width, height),
    )
}
