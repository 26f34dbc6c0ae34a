//! Greedy multi-motion segmentation: explain the dominant rigid motion,
//! remove its supporters, repeat on what is left.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::ransac::{ransac, RansacConfig};
use super::RobustError;
use crate::egomotion::{
    decompose_essential, eight_point_discrete, reprojection_error, triangulate_pair,
    Correspondence, EightPointConfig,
};
use crate::geometry::{Pose, MIN_DEPTH};

/// Decorrelates the RANSAC seed stream of each extraction round.
const ROUND_SEED_MIX: u64 = 0x517C_C1B7_2722_0A95;

#[derive(Debug, Clone)]
pub struct SegmentationConfig {
    pub ransac: RansacConfig,
    /// A consensus set below this fraction of the remaining features stops
    /// the extraction; what is left becomes residue.
    pub min_support: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig { ransac: RansacConfig::default(), min_support: 0.3 }
    }
}

/// One recovered rigid motion and the features it explains.
#[derive(Debug, Clone)]
pub struct MotionSegment {
    /// Frame-t → frame-next pose, translation up to scale.
    pub pose: Pose,
    /// Mask over the *original* input order.
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    /// In extraction order: largest consensus first.
    pub segments: Vec<MotionSegment>,
    /// Input indices no motion explained.
    pub residue: Vec<usize>,
}

/// Pose from one minimal eight-point sample; `None` when the sample is
/// degenerate or cheirality cannot pick a candidate.
///
/// The degeneracy gate is much looser than the least-squares default: an
/// exact eight-row epipolar system under a small baseline legitimately has
/// a trailing singular-value ratio of 1e-4..1e-6, and consensus scoring
/// already vets the model, so only hard rank collapses are screened here.
pub fn minimal_pose_solver(sample: &[Correspondence]) -> Option<Pose> {
    let cfg = EightPointConfig { degen_ratio: 1e-7, ..EightPointConfig::default() };
    let e = eight_point_discrete(sample, &cfg).ok()?;
    decompose_essential(&e, sample).ok()
}

/// Reprojection distance of `corr` under `pose` at its own triangulated
/// depth; infinite when the triangulation is unobservable or lands behind
/// a camera, so cheirality violations never count as inliers.
pub fn pose_reprojection_residual(pose: &Pose, corr: &Correspondence) -> f64 {
    match triangulate_pair(pose, corr) {
        Some((z_t, z_next)) if z_t > MIN_DEPTH && z_next > MIN_DEPTH => {
            reprojection_error(pose, corr, z_t).unwrap_or(f64::INFINITY)
        }
        _ => f64::INFINITY,
    }
}

/// Least-squares pose over a consensus set, with the fresh inlier set it
/// classifies; `None` when it does not improve on `fallback_support`. A
/// minimal-sample model carries the sample's rounding, so refitting on
/// everything the sample explained tightens the pose enough for the
/// stragglers the raw model left just outside the gate.
fn refit_on_consensus(
    subset: &[Correspondence],
    raw_mask: &[bool],
    fallback_support: usize,
    threshold: f64,
) -> Option<(Pose, Vec<bool>)> {
    let inliers: Vec<Correspondence> = subset
        .iter()
        .zip(raw_mask)
        .filter(|(_, &m)| m)
        .map(|(c, _)| c.clone())
        .collect();
    let e = eight_point_discrete(&inliers, &EightPointConfig::default()).ok()?;
    let pose = decompose_essential(&e, &inliers).ok()?;
    let mask: Vec<bool> =
        subset.iter().map(|c| pose_reprojection_residual(&pose, c) < threshold).collect();
    if mask.iter().filter(|&&m| m).count() >= fallback_support {
        Some((pose, mask))
    } else {
        None
    }
}

/// Repeatedly runs pose RANSAC on the unexplained features, peeling off
/// one motion's consensus set per round, until the remainder is smaller
/// than a minimal sample, no consensus forms, or support drops below
/// `cfg.min_support`. Each winning hypothesis is refit by least squares on
/// its consensus set (kept only when that loses no support) before its
/// inliers are removed. Each round reseeds deterministically, so the whole
/// segmentation is a pure function of (input, seed).
pub fn segment_motions_sequential(
    corrs: &[Correspondence],
    cfg: &SegmentationConfig,
) -> Result<Segmentation, RobustError> {
    if !(cfg.min_support > 0.0 && cfg.min_support <= 1.0) {
        return Err(RobustError::BadConfig("min_support must lie in (0, 1]".into()));
    }
    let needed = 2 * cfg.ransac.min_sample_size;
    if corrs.len() < needed {
        return Err(RobustError::NotEnoughCorrespondences { needed, got: corrs.len() });
    }

    let mut remaining: Vec<usize> = (0..corrs.len()).collect();
    let mut segments = Vec::new();
    let mut round = 0u64;
    while remaining.len() >= cfg.ransac.min_sample_size {
        let subset: Vec<Correspondence> = remaining.iter().map(|&i| corrs[i].clone()).collect();
        let mut rcfg = cfg.ransac.clone();
        rcfg.seed = cfg.ransac.seed.wrapping_add(round.wrapping_mul(ROUND_SEED_MIX));
        let outcome =
            match ransac(&subset, minimal_pose_solver, pose_reprojection_residual, &rcfg) {
                Ok(o) => o,
                Err(RobustError::NoConsensus) => break,
                Err(e) => return Err(e),
            };
        let (pose, subset_mask) = refit_on_consensus(
            &subset,
            &outcome.mask,
            outcome.support(),
            cfg.ransac.inlier_threshold,
        )
        .unwrap_or((outcome.model, outcome.mask));
        let support = subset_mask.iter().filter(|&&m| m).count();
        if (support as f64) < cfg.min_support * subset.len() as f64 {
            break;
        }
        let mut mask = vec![false; corrs.len()];
        let mut next_remaining = Vec::with_capacity(remaining.len() - support);
        for (j, &i) in remaining.iter().enumerate() {
            if subset_mask[j] {
                mask[i] = true;
            } else {
                next_remaining.push(i);
            }
        }
        segments.push(MotionSegment { pose, mask });
        remaining = next_remaining;
        round += 1;
    }
    Ok(Segmentation { segments, residue: remaining })
}

pub const SEGMENT_HEADER: &str = "feature_id,segment_id";

/// One row per input feature, in input order; residue features get
/// segment id -1.
pub fn write_segment_csv(
    path: &Path,
    corrs: &[Correspondence],
    seg: &Segmentation,
) -> Result<(), RobustError> {
    let mut assignment = vec![-1i64; corrs.len()];
    for (s, segment) in seg.segments.iter().enumerate() {
        for (i, &inside) in segment.mask.iter().enumerate() {
            if inside {
                assignment[i] = s as i64;
            }
        }
    }
    let mut out = String::with_capacity(16 * (corrs.len() + 1));
    out.push_str(SEGMENT_HEADER);
    out.push('\n');
    for (c, s) in corrs.iter().zip(&assignment) {
        writeln!(out, "{},{}", c.id, s).expect("writing to a String cannot fail");
    }
    fs::write(path, out)?;
    Ok(())
}
