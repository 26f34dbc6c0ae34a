//! Geometric visual odometry toolkit.
//!
//! The crate is organized bottom-up: [`geometry`] holds rigid-motion and
//! projection primitives, [`flow`] implements pyramidal Lucas-Kanade
//! tracking, [`egomotion`] estimates camera motion and structure from
//! correspondences, [`robust`] rejects outliers and segments independent
//! motions, and [`sim`] generates synthetic scenes with exact ground truth
//! for testing and evaluation.

pub mod egomotion;
pub mod flow;
pub mod geometry;
pub mod robust;
pub mod sim;

pub use egomotion::Correspondence;
pub use geometry::{
    CameraIntrinsics, Flow2, Mat3, NormalizedPoint, PixelPoint, Plane, Pose, Twist, Vec3,
};
