//! Trajectory comparison: per-frame rotation, direction, and scale errors.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use vor_core::egomotion::read_pose_file;

use crate::util::{angle_between, median, rotation_angle};

const AFTER_HELP: &str = "\
Both inputs are trajectory files: one line per frame, 12 reals, the
row-major [R | T] of the camera-to-world transform (KITTI convention).
Frame counts must match.

Per frame: rotation error = angle of R_est^T R_gt; direction error =
angle between the two translation vectors; scale ratio =
|T_est| / |T_gt|. Frames where the ground-truth translation is zero (the
first frame of any trajectory anchored at the origin) have no direction
or scale information and report 0 and 1 there; a zero estimated
translation against a nonzero ground truth reports scale ratio 0.

Summary statistics go to stdout. --csv columns
(frame,rotation_error_rad,direction_error_rad,scale_ratio) mirror the
per-frame values for plotting.";

/// Compare an estimated trajectory against ground truth.
#[derive(Args)]
#[command(after_help = AFTER_HELP)]
pub struct EvaluateArgs {
    /// Estimated trajectory file
    #[arg(long)]
    pub estimated: PathBuf,
    /// Ground-truth trajectory file
    #[arg(long)]
    pub groundtruth: PathBuf,
    /// Write per-frame errors to this CSV
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

struct FrameError {
    rotation: f64,
    direction: f64,
    scale_ratio: f64,
    /// False when the ground-truth translation is zero: direction and
    /// scale carry no information there and stay out of the summary.
    informative: bool,
}

fn summarize(label: &str, values: &[f64]) {
    if values.is_empty() {
        println!("{label:<24} (no informative frames)");
        return;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mut sorted = values.to_vec();
    let med = median(&mut sorted);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!("{label:<24} mean {mean:.6e}   median {med:.6e}   max {max:.6e}");
}

pub fn run(args: EvaluateArgs) -> Result<()> {
    let est = read_pose_file(&args.estimated)
        .with_context(|| format!("reading {}", args.estimated.display()))?;
    let gt = read_pose_file(&args.groundtruth)
        .with_context(|| format!("reading {}", args.groundtruth.display()))?;
    if est.len() != gt.len() {
        bail!(
            "frame count mismatch: estimated has {} frames, ground truth has {}",
            est.len(),
            gt.len()
        );
    }
    if est.is_empty() {
        bail!("empty trajectory files");
    }

    let errors: Vec<FrameError> = est
        .iter()
        .zip(&gt)
        .map(|(e, g)| {
            let rotation = rotation_angle(&(e.rotation().transpose() * g.rotation()));
            let (te, tg) = (e.translation(), g.translation());
            if tg.norm() <= 1e-12 {
                FrameError { rotation, direction: 0.0, scale_ratio: 1.0, informative: false }
            } else if te.norm() <= 1e-12 {
                FrameError { rotation, direction: 0.0, scale_ratio: 0.0, informative: true }
            } else {
                FrameError {
                    rotation,
                    direction: angle_between(te, tg),
                    scale_ratio: te.norm() / tg.norm(),
                    informative: true,
                }
            }
        })
        .collect();

    if let Some(path) = &args.csv {
        let mut out = String::from("frame,rotation_error_rad,direction_error_rad,scale_ratio\n");
        for (k, e) in errors.iter().enumerate() {
            writeln!(out, "{k},{:.17e},{:.17e},{:.17e}", e.rotation, e.direction, e.scale_ratio)
                .expect("writing to a String cannot fail");
        }
        fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    }

    let rotations: Vec<f64> = errors.iter().map(|e| e.rotation).collect();
    let directions: Vec<f64> =
        errors.iter().filter(|e| e.informative).map(|e| e.direction).collect();
    let ratios: Vec<f64> =
        errors.iter().filter(|e| e.informative).map(|e| e.scale_ratio).collect();

    println!("frames: {}", errors.len());
    summarize("rotation error [rad]", &rotations);
    summarize("direction error [rad]", &directions);
    summarize("scale ratio", &ratios);
    Ok(())
}
