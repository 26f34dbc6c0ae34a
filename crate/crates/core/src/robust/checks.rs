//! Per-feature track gating and moving-object verdicts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{RobustError, Verdict};
use crate::egomotion::{triangulate_pair, Correspondence};
use crate::geometry::{Plane, Pose, MIN_DEPTH};

/// Road clearance (in the reconstruction's length unit) a point must
/// exceed below the plane before it counts as moving.
pub const DEFAULT_HEIGHT_MARGIN: f64 = 0.05;

/// Baselines shorter than this carry no triangulation signal.
const MIN_BASELINE: f64 = 1e-12;

/// Quality summary of one tracked feature.
#[derive(Debug, Clone, Copy)]
pub struct TrackQuality {
    pub id: u64,
    /// Structure-tensor corner score at the track's start.
    pub score: f64,
    /// Tracked displacement magnitude in pixels.
    pub flow_px: f64,
    /// Measured depth, when one exists.
    pub depth: Option<f64>,
}

/// Keep gates for [`reliability_filter`]; the default keeps everything.
/// Depth resolution degrades quadratically with distance and small flows
/// drown in localization error, hence the three gates.
#[derive(Debug, Clone, Copy)]
pub struct ReliabilityConfig {
    pub min_score: f64,
    pub min_flow_px: f64,
    /// Features farther than this are dropped; unknown depths pass.
    pub max_depth: f64,
}

impl Default for ReliabilityConfig {
    fn default() -> Self {
        ReliabilityConfig { min_score: 0.0, min_flow_px: 0.0, max_depth: f64::INFINITY }
    }
}

/// Marks the tracks worth feeding to the estimators. Monotone in the
/// config: tightening any gate can only clear bits, never set them.
pub fn reliability_filter(tracks: &[TrackQuality], cfg: &ReliabilityConfig) -> Vec<bool> {
    tracks
        .iter()
        .map(|t| {
            t.score >= cfg.min_score
                && t.flow_px >= cfg.min_flow_px
                && t.depth.map_or(true, |d| d <= cfg.max_depth)
        })
        .collect()
}

/// Triangulates `corr` under the camera motion `delta` and flags the
/// feature as moving when the intersection lands behind either camera: a
/// static point can never do that, so skew rays of this kind betray object
/// motion (the classic signature of a faster vehicle pulling away). The
/// translation scale cancels, but its direction must be trusted. Returns
/// [`Verdict::Undecided`] when there is no baseline or no parallax to
/// triangulate from.
pub fn positive_depth_check(delta: &Pose, corr: &Correspondence) -> Verdict {
    if delta.translation().norm() < MIN_BASELINE {
        return Verdict::Undecided;
    }
    match triangulate_pair(delta, corr) {
        Some((z_t, z_next)) => {
            if z_t <= 0.0 || z_next <= 0.0 {
                Verdict::Moving
            } else {
                Verdict::Static
            }
        }
        None => Verdict::Undecided,
    }
}

/// Triangulates `corr` under `delta` and flags the feature as moving when
/// the point lands more than `height_margin` below the road plane —
/// impossible for a static point, typical for a slower vehicle ahead
/// (apparent depth stretches by the inverse relative speed, sliding the
/// point along its ray through the road surface). Only meaningful below
/// the road's horizon line, i.e. where the viewing ray actually meets the
/// plane; above it the test returns [`Verdict::NotApplicable`]. The scale
/// of `delta` must match the scale in which `road` is expressed.
pub fn positive_height_check(
    delta: &Pose,
    corr: &Correspondence,
    road: &Plane,
    height_margin: f64,
) -> Verdict {
    if road.normal().dot(&corr.x_t.homogeneous()) <= 0.0 {
        return Verdict::NotApplicable;
    }
    if delta.translation().norm() < MIN_BASELINE {
        return Verdict::Undecided;
    }
    let Some((z_t, _)) = triangulate_pair(delta, corr) else {
        return Verdict::Undecided;
    };
    if z_t <= MIN_DEPTH {
        // Behind the camera: the depth test's territory, no height signal.
        return Verdict::Undecided;
    }
    let point = corr.x_t.homogeneous() * z_t;
    if road.signed_offset(&point) > height_margin {
        Verdict::Moving
    } else {
        Verdict::Static
    }
}

/// Merges the depth and height verdicts for one feature. The two tests
/// catch complementary movers (receding bodies break positive depth,
/// slower leading bodies break positive height), so a Moving from either
/// wins; a single Static suffices otherwise because each test is only
/// ever silent, never wrong, on the other's territory.
pub fn combined_verdict(depth: Verdict, height: Verdict) -> Verdict {
    if depth == Verdict::Moving || height == Verdict::Moving {
        Verdict::Moving
    } else if depth == Verdict::Static || height == Verdict::Static {
        Verdict::Static
    } else if depth == Verdict::NotApplicable && height == Verdict::NotApplicable {
        Verdict::NotApplicable
    } else {
        Verdict::Undecided
    }
}

/// One row of the verdict table emitted by [`write_verdict_csv`].
#[derive(Debug, Clone, Copy)]
pub struct VerdictRecord {
    pub id: u64,
    pub verdict: Verdict,
    /// Residual that backed the verdict (units are the caller's).
    pub residual: f64,
}

pub const VERDICT_HEADER: &str = "feature_id,verdict,residual";

pub fn write_verdict_csv(path: &Path, rows: &[VerdictRecord]) -> Result<(), RobustError> {
    let mut out = String::with_capacity(32 * (rows.len() + 1));
    out.push_str(VERDICT_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{},{},{:.17e}", r.id, r.verdict, r.residual)
            .expect("writing to a String cannot fail");
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Mat3, NormalizedPoint, Vec3};
    use crate::robust::Verdict;
    use crate::sim::presets::{self, PresetScene};
    use crate::sim::{render_correspondences, FeatureLabel, NoiseSpec, TrackSet};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn all_frames(preset: &PresetScene) -> Vec<TrackSet> {
        (0..preset.trajectory.len() - 1)
            .map(|k| {
                render_correspondences(
                    &preset.scene,
                    &preset.trajectory,
                    k,
                    &preset.intrinsics,
                    &NoiseSpec::none(1),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn overtaking_body_fails_the_depth_check_statics_never_do() {
        let preset = presets::overtake(11);
        for tracks in all_frames(&preset) {
            for f in &tracks.features {
                let v = positive_depth_check(&tracks.delta, &f.corr);
                match f.label {
                    FeatureLabel::Mover(_) => {
                        assert_eq!(v, Verdict::Moving, "mover {} slipped through", f.corr.id)
                    }
                    _ => assert_ne!(v, Verdict::Moving, "static {} flagged", f.corr.id),
                }
            }
        }
    }

    #[test]
    fn lead_body_fails_the_height_check_that_the_depth_check_misses() {
        let preset = presets::lead_vehicle(3);
        let road = preset.scene.ground.clone().expect("road scene");
        for tracks in all_frames(&preset) {
            for f in &tracks.features {
                let height =
                    positive_height_check(&tracks.delta, &f.corr, &road, DEFAULT_HEIGHT_MARGIN);
                match f.label {
                    FeatureLabel::Mover(_) => {
                        assert_eq!(height, Verdict::Moving, "mover {}", f.corr.id);
                        // A body receding slower than the camera keeps
                        // positive parallax, so depth alone cannot flag it.
                        let depth = positive_depth_check(&tracks.delta, &f.corr);
                        assert_ne!(depth, Verdict::Moving, "mover {}", f.corr.id);
                    }
                    _ => assert_ne!(height, Verdict::Moving, "static {}", f.corr.id),
                }
            }
        }
    }

    #[test]
    fn verdict_union_lets_either_test_flag_a_mover() {
        use Verdict::{Moving, NotApplicable, Static, Undecided};
        // Moving dominates, then Static, then Undecided; NotApplicable
        // only survives when both tests were out of territory.
        for v in [Static, Moving, Undecided, NotApplicable] {
            assert_eq!(combined_verdict(Moving, v), Moving);
            assert_eq!(combined_verdict(v, Moving), Moving);
        }
        for v in [Static, Undecided, NotApplicable] {
            assert_eq!(combined_verdict(Static, v), Static);
            assert_eq!(combined_verdict(v, Static), Static);
        }
        assert_eq!(combined_verdict(Undecided, NotApplicable), Undecided);
        assert_eq!(combined_verdict(NotApplicable, Undecided), Undecided);
        assert_eq!(combined_verdict(Undecided, Undecided), Undecided);
        assert_eq!(combined_verdict(NotApplicable, NotApplicable), NotApplicable);
    }

    #[test]
    fn points_on_or_above_the_horizon_are_not_applicable() {
        let preset = presets::lead_vehicle(3);
        let road = preset.scene.ground.clone().unwrap();
        let delta = preset.trajectory.delta(0);
        // Road normal is (0, 1, 0): the vanishing-line test reduces to
        // the sign of the image y coordinate.
        for y in [0.0, -0.05, -0.4] {
            let corr = Correspondence::new(0, NormalizedPoint::new(0.1, y), NormalizedPoint::new(0.1, y));
            let v = positive_height_check(&delta, &corr, &road, DEFAULT_HEIGHT_MARGIN);
            assert_eq!(v, Verdict::NotApplicable, "y = {y}");
        }
    }

    #[test]
    fn missing_baseline_or_parallax_is_undecided() {
        let road = Plane::new(Vec3::new(0.0, 1.0, 0.0), 1.5).unwrap();
        let below_horizon = NormalizedPoint::new(0.2, 0.3);
        let still = Pose::new(Mat3::identity(), Vec3::zeros()).unwrap();
        let corr = Correspondence::new(0, below_horizon, NormalizedPoint::new(0.21, 0.3));
        assert_eq!(positive_depth_check(&still, &corr), Verdict::Undecided);
        assert_eq!(
            positive_height_check(&still, &corr, &road, DEFAULT_HEIGHT_MARGIN),
            Verdict::Undecided
        );

        // Identical rays under a real baseline: depth is unobservable.
        let moving = Pose::new(Mat3::identity(), Vec3::new(0.3, 0.0, -0.5)).unwrap();
        let frozen = Correspondence::new(1, below_horizon, below_horizon);
        assert_eq!(positive_depth_check(&moving, &frozen), Verdict::Undecided);
        assert_eq!(
            positive_height_check(&moving, &frozen, &road, DEFAULT_HEIGHT_MARGIN),
            Verdict::Undecided
        );
    }

    #[test]
    fn depth_verdicts_ignore_the_translation_scale() {
        let preset = presets::overtake(11);
        let tracks = all_frames(&preset).remove(0);
        let reference: Vec<Verdict> = tracks
            .features
            .iter()
            .map(|f| positive_depth_check(&tracks.delta, &f.corr))
            .collect();
        for gamma in [0.1, 0.5, 2.0, 10.0] {
            let scaled = tracks.delta.scaled_translation(gamma);
            for (f, expected) in tracks.features.iter().zip(&reference) {
                assert_eq!(positive_depth_check(&scaled, &f.corr), *expected);
            }
        }
    }

    #[test]
    fn reliability_filter_applies_every_gate() {
        let tracks = vec![
            TrackQuality { id: 0, score: 0.9, flow_px: 3.0, depth: Some(12.0) },
            TrackQuality { id: 1, score: 0.1, flow_px: 3.0, depth: Some(12.0) },
            TrackQuality { id: 2, score: 0.9, flow_px: 0.2, depth: Some(12.0) },
            TrackQuality { id: 3, score: 0.9, flow_px: 3.0, depth: Some(80.0) },
            TrackQuality { id: 4, score: 0.9, flow_px: 3.0, depth: None },
        ];
        let cfg = ReliabilityConfig { min_score: 0.5, min_flow_px: 1.0, max_depth: 40.0 };
        assert_eq!(reliability_filter(&tracks, &cfg), [true, false, false, false, true]);
        assert!(reliability_filter(&tracks, &ReliabilityConfig::default())
            .iter()
            .all(|&k| k));
    }

    #[test]
    fn tightening_the_reliability_config_never_readmits_a_track() {
        let mut rng = StdRng::seed_from_u64(5);
        let tracks: Vec<TrackQuality> = (0..60)
            .map(|i| TrackQuality {
                id: i,
                score: rng.gen_range(0.0..1.0),
                flow_px: rng.gen_range(0.0..8.0),
                depth: if rng.gen_bool(0.2) { None } else { Some(rng.gen_range(1.0..60.0)) },
            })
            .collect();
        for _ in 0..50 {
            let loose = ReliabilityConfig {
                min_score: rng.gen_range(0.0..0.5),
                min_flow_px: rng.gen_range(0.0..2.0),
                max_depth: rng.gen_range(30.0..60.0),
            };
            let tight = ReliabilityConfig {
                min_score: loose.min_score + rng.gen_range(0.0..0.5),
                min_flow_px: loose.min_flow_px + rng.gen_range(0.0..2.0),
                max_depth: loose.max_depth - rng.gen_range(0.0..25.0),
            };
            let kept_loose = reliability_filter(&tracks, &loose);
            let kept_tight = reliability_filter(&tracks, &tight);
            for (l, t) in kept_loose.iter().zip(&kept_tight) {
                assert!(*l || !*t, "tightening admitted a previously rejected track");
            }
        }
    }

    #[test]
    fn verdict_csv_lists_header_and_one_row_per_feature() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("verdicts.csv");
        let rows = vec![
            VerdictRecord { id: 3, verdict: Verdict::Moving, residual: 0.5 },
            VerdictRecord { id: 7, verdict: Verdict::Static, residual: 1e-12 },
            VerdictRecord { id: 9, verdict: Verdict::NotApplicable, residual: 0.0 },
        ];
        write_verdict_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], VERDICT_HEADER);
        assert_eq!(lines[1], format!("3,moving,{:.17e}", 0.5f64));
        assert_eq!(lines[3], format!("9,not_applicable,{:.17e}", 0.0f64));
    }
}
