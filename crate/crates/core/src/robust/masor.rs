//! Deterministic iterative trimming: fit on the whole current set, then
//! drop the features whose residuals stand out.

use super::RobustError;
use crate::egomotion::{
    bundle_adjust, decompose_essential, eight_point_discrete, reprojection_error,
    triangulate_up_to_scale, BaMode, BaProblem, Correspondence, EightPointConfig,
};
use crate::geometry::{Pose, MIN_DEPTH};

/// Large finite stand-in for residuals that cannot be evaluated (the
/// transported point lands behind the camera). Keeping it finite keeps the
/// set statistics finite, so the feature is trimmed on the next pass
/// instead of poisoning every decision.
pub(crate) const FAILED_RESIDUAL: f64 = 1e6;

/// Published trimming rules, both driven by the mean residual of the
/// current set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MasorCriterion {
    /// Drop features with residual at least 1.5 population standard
    /// deviations above the current-set mean.
    Sigma1p5,
    /// Keep features with residual below nine times the current-set mean;
    /// an unusually loose bound, kept verbatim from its source.
    Mu9x,
}

#[derive(Debug, Clone)]
pub struct MasorConfig {
    pub criterion: MasorCriterion,
    /// Trim rounds before stopping; the loop also stops as soon as a round
    /// removes nothing.
    pub max_iterations: usize,
    /// Trimming below this size aborts with `SetCollapsed`; reaching it
    /// exactly stops the loop.
    pub min_features: usize,
    /// Residuals at or below this are never trimmed. Both criteria are
    /// scale-free, so without an absolute floor they keep shaving the tail
    /// of an already-clean set (on exact data the spread is machine
    /// epsilon, yet the max z-score still exceeds 1.5). Default 2e-3 in
    /// normalized units: one pixel at f = 500, matching the RANSAC gate.
    pub error_floor: f64,
}

impl MasorConfig {
    pub fn new(criterion: MasorCriterion) -> Self {
        let max_iterations = match criterion {
            MasorCriterion::Sigma1p5 => 10,
            MasorCriterion::Mu9x => 20,
        };
        MasorConfig { criterion, max_iterations, min_features: 8, error_floor: 2e-3 }
    }
}

impl Default for MasorConfig {
    fn default() -> Self {
        MasorConfig::new(MasorCriterion::Sigma1p5)
    }
}

/// Statistics of one fit-and-trim round, recorded before trimming.
#[derive(Debug, Clone, Copy)]
pub struct MasorStep {
    /// Mean residual over the set that was fitted.
    pub mu: f64,
    /// Population standard deviation of the same residuals.
    pub sigma: f64,
    /// Size of the set that was fitted.
    pub size: usize,
}

#[derive(Debug, Clone)]
pub struct MasorOutcome<M> {
    /// Model from the final fit.
    pub model: M,
    /// Surviving features, aligned with the input order.
    pub mask: Vec<bool>,
    /// One entry per fit; sizes are non-increasing.
    pub trace: Vec<MasorStep>,
}

/// Alternates between fitting `solver` on the current feature set and
/// trimming by `cfg.criterion` until a round trims nothing, the set
/// reaches `cfg.min_features`, or `cfg.max_iterations` rounds ran.
///
/// `solver` sees the current subset plus the previous model (absent on the
/// first round) and returns the refitted model with one residual per
/// subset entry. The trim statistics are computed over the current subset
/// only, never over the original full set.
pub fn masor<M>(
    corrs: &[Correspondence],
    mut solver: impl FnMut(&[Correspondence], Option<&M>) -> Option<(M, Vec<f64>)>,
    cfg: &MasorConfig,
) -> Result<MasorOutcome<M>, RobustError> {
    if cfg.max_iterations == 0 || cfg.min_features == 0 {
        return Err(RobustError::BadConfig(
            "max_iterations and min_features must be positive".into(),
        ));
    }
    if !(cfg.error_floor >= 0.0) {
        return Err(RobustError::BadConfig("error_floor must be non-negative".into()));
    }
    let n = corrs.len();
    if n < cfg.min_features {
        return Err(RobustError::NotEnoughCorrespondences { needed: cfg.min_features, got: n });
    }

    let mut active: Vec<usize> = (0..n).collect();
    let mut model: Option<M> = None;
    let mut trace = Vec::new();
    for iteration in 0..cfg.max_iterations {
        let subset: Vec<Correspondence> = active.iter().map(|&i| corrs[i].clone()).collect();
        let Some((m, errors)) = solver(&subset, model.as_ref()) else {
            return Err(RobustError::SolverFailed { iteration });
        };
        if errors.len() != subset.len() || errors.iter().any(|e| !e.is_finite()) {
            return Err(RobustError::SolverFailed { iteration });
        }
        model = Some(m);

        let size = active.len();
        let mu = errors.iter().sum::<f64>() / size as f64;
        let sigma =
            (errors.iter().map(|e| (e - mu) * (e - mu)).sum::<f64>() / size as f64).sqrt();
        trace.push(MasorStep { mu, sigma, size });

        let keep: Vec<usize> = active
            .iter()
            .zip(&errors)
            .filter(|(_, &e)| {
                e <= cfg.error_floor
                    || match cfg.criterion {
                        MasorCriterion::Sigma1p5 => e - mu < 1.5 * sigma,
                        MasorCriterion::Mu9x => e < 9.0 * mu,
                    }
            })
            .map(|(&i, _)| i)
            .collect();
        if keep.len() == active.len() {
            break;
        }
        if keep.len() < cfg.min_features {
            return Err(RobustError::SetCollapsed { iteration, min: cfg.min_features });
        }
        let stop = keep.len() == cfg.min_features;
        active = keep;
        if stop {
            break;
        }
    }

    let model = model.expect("at least one round always runs");
    let mut mask = vec![false; n];
    for &i in &active {
        mask[i] = true;
    }
    Ok(MasorOutcome { model, mask, trace })
}

/// Frame-t depth per correspondence for the residual evaluation: the
/// measured depth when one was tracked, otherwise the depth triangulated
/// under `pose`; unusable triangulations fall back to the median of the
/// usable ones. `None` when no feature yields any depth at all.
fn residual_depths(pose: &Pose, subset: &[Correspondence]) -> Option<Vec<f64>> {
    let triangulated = triangulate_up_to_scale(pose, subset).ok();
    let raw: Vec<Option<f64>> = subset
        .iter()
        .enumerate()
        .map(|(i, c)| {
            c.depth_t
                .filter(|&d| d > MIN_DEPTH)
                .or_else(|| triangulated.as_ref().map(|t| t.depths[i]))
                .filter(|&z| z.is_finite() && z > MIN_DEPTH)
        })
        .collect();
    let mut usable: Vec<f64> = raw.iter().copied().flatten().collect();
    if usable.is_empty() {
        return None;
    }
    usable.sort_by(f64::total_cmp);
    let fallback = usable[usable.len() / 2];
    Some(raw.into_iter().map(|z| z.unwrap_or(fallback)).collect())
}

/// Canonical pose trimming: the first round initializes from the
/// eight-point solution on the full set, later rounds warm-start from the
/// surviving pose; every round refines with motion-only bundle adjustment
/// and scores features by reprojection error at their
/// [`residual_depths`] depth. A round whose refinement fails falls back to
/// its initialization rather than aborting the trim loop.
pub fn masor_pose(
    corrs: &[Correspondence],
    cfg: &MasorConfig,
) -> Result<MasorOutcome<Pose>, RobustError> {
    let ep = EightPointConfig::default();
    masor(
        corrs,
        |subset, prev: Option<&Pose>| {
            let init = match prev {
                Some(p) => p.clone(),
                None => {
                    let e = eight_point_discrete(subset, &ep).ok()?;
                    decompose_essential(&e, subset).ok()?
                }
            };
            let depths = residual_depths(&init, subset)?;
            let pose = BaProblem::new(subset.to_vec(), init.clone(), depths.clone(), BaMode::MotionOnly)
                .and_then(|p| bundle_adjust(&p))
                .map(|r| r.pose)
                .unwrap_or(init);
            let errors = subset
                .iter()
                .zip(&depths)
                .map(|(c, &z)| reprojection_error(&pose, c, z).unwrap_or(FAILED_RESIDUAL))
                .collect();
            Some((pose, errors))
        },
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Mat3, NormalizedPoint, Vec3};
    use crate::sim::{presets, render_correspondences, FeatureLabel, NoiseSpec, TrackSet};

    fn rotation_angle(r: &Mat3) -> f64 {
        (((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0)).acos()
    }

    fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
        (a.normalize().dot(&b.normalize())).clamp(-1.0, 1.0).acos()
    }

    fn forward_tracks(scene_seed: u64, noise: &NoiseSpec) -> TrackSet {
        let preset = presets::forward(scene_seed, 3, 200);
        render_correspondences(&preset.scene, &preset.trajectory, 0, &preset.intrinsics, noise)
            .unwrap()
    }

    /// Features whose geometry never matters: these drive the injected
    /// table solvers that score by id.
    fn dummy_corrs(n: usize) -> Vec<Correspondence> {
        (0..n)
            .map(|i| {
                Correspondence::new(
                    i as u64,
                    NormalizedPoint::new(0.0, 0.0),
                    NormalizedPoint::new(0.0, 0.0),
                )
            })
            .collect()
    }

    fn table_solver(
        table: &[f64],
    ) -> impl FnMut(&[Correspondence], Option<&()>) -> Option<((), Vec<f64>)> + '_ {
        move |subset, _| Some(((), subset.iter().map(|c| table[c.id as usize]).collect()))
    }

    #[test]
    fn noiseless_set_converges_in_one_round_keeping_everything() {
        let tracks = forward_tracks(7, &NoiseSpec::none(1));
        let corrs = tracks.correspondences();
        let out = masor_pose(&corrs, &MasorConfig::default()).unwrap();
        assert_eq!(out.trace.len(), 1, "a clean set must not iterate");
        assert!(out.mask.iter().all(|&kept| kept));
        let rot = rotation_angle(&(out.model.rotation() * tracks.delta.rotation().transpose()));
        let dir = angle_between(out.model.translation(), tracks.delta.translation());
        assert!(rot < 1e-6, "rotation error {rot}");
        assert!(dir < 1e-6, "direction error {dir}");
    }

    #[test]
    fn sigma_trim_clears_planted_outliers_without_eroding_inliers() {
        for seed in 0..3u64 {
            let noise = NoiseSpec {
                sigma_px: 0.3,
                outlier_fraction: 0.2,
                outlier_box_px: 20.0,
                seed: seed * 7 + 1,
            };
            let tracks = forward_tracks(seed + 100, &noise);
            let corrs = tracks.correspondences();
            let out = masor_pose(&corrs, &MasorConfig::default()).unwrap();

            let mut planted = (0usize, 0usize);
            let mut clean = (0usize, 0usize);
            for (i, f) in tracks.features.iter().enumerate() {
                if f.label == FeatureLabel::PlantedOutlier {
                    planted.0 += 1;
                    planted.1 += usize::from(out.mask[i]);
                } else {
                    clean.0 += 1;
                    clean.1 += usize::from(!out.mask[i]);
                }
            }
            assert!(planted.0 > 0);
            assert!(
                planted.1 * 20 <= planted.0,
                "seed {seed}: kept {} of {} planted outliers",
                planted.1,
                planted.0
            );
            assert!(
                clean.1 * 20 <= clean.0,
                "seed {seed}: lost {} of {} clean features",
                clean.1,
                clean.0
            );
            assert!(out.trace.len() >= 2, "contaminated set must trim at least once");
            assert!(out.trace.windows(2).all(|w| w[0].size >= w[1].size));
        }
    }

    #[test]
    fn ninefold_mean_bound_only_drops_catastrophic_residuals() {
        // Two residuals forty times the mean of the rest: past nine means.
        let mut table = vec![1e-3; 22];
        table[20] = 1.0;
        table[21] = 1.0;
        let cfg = MasorConfig::new(MasorCriterion::Mu9x);
        let out = masor(&dummy_corrs(22), table_solver(&table), &cfg).unwrap();
        let sizes: Vec<usize> = out.trace.iter().map(|s| s.size).collect();
        assert_eq!(sizes, [22, 20]);
        assert!(out.mask[..20].iter().all(|&k| k) && !out.mask[20] && !out.mask[21]);

        // One residual eight times the rest still sits inside nine means:
        // with eight features a lone outlier inflates the mean enough to
        // shelter itself, so the bound passes everything.
        let table = [0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.08];
        let out = masor(&dummy_corrs(8), table_solver(&table), &cfg).unwrap();
        assert_eq!(out.trace.len(), 1);
        assert!(out.mask.iter().all(|&k| k));

        // On a contaminated scene the loose bound keeps at least as much
        // as the sigma rule and never needs more rounds.
        let noise =
            NoiseSpec { sigma_px: 0.3, outlier_fraction: 0.2, outlier_box_px: 20.0, seed: 1 };
        let corrs = forward_tracks(100, &noise).correspondences();
        let sig = masor_pose(&corrs, &MasorConfig::new(MasorCriterion::Sigma1p5)).unwrap();
        let mu = masor_pose(&corrs, &MasorConfig::new(MasorCriterion::Mu9x)).unwrap();
        let kept = |m: &Vec<bool>| m.iter().filter(|&&k| k).count();
        assert!(kept(&mu.mask) >= kept(&sig.mask));
        assert!(mu.trace.len() <= sig.trace.len());
    }

    #[test]
    fn trim_statistics_come_from_the_current_set_only() {
        // Round one trims 4.0 (z-score 2.55). Against the *original* set's
        // statistics the 0.8s would then survive (0.8 - 0.7 < 1.5 * 1.29),
        // but against the surviving seven the rule trims them
        // (0.8 - 0.229 >= 1.5 * 0.361), leaving only the five zeros.
        let table = [0.0, 0.0, 0.0, 0.0, 0.0, 0.8, 0.8, 4.0];
        let cfg = MasorConfig { min_features: 4, ..MasorConfig::default() };
        let out = masor(&dummy_corrs(8), table_solver(&table), &cfg).unwrap();
        let sizes: Vec<usize> = out.trace.iter().map(|s| s.size).collect();
        assert_eq!(sizes, [8, 7, 5]);
        assert!((out.trace[1].mu - 1.6 / 7.0).abs() < 1e-15);
        assert_eq!(out.mask, [true, true, true, true, true, false, false, false]);
    }

    #[test]
    fn error_floor_keeps_uniform_residual_sets_intact() {
        // Equal residuals have sigma zero, so the raw z-score rule would
        // trim every feature; the floor recognizes them as already clean.
        let table = [1e-12; 10];
        let out = masor(&dummy_corrs(10), table_solver(&table), &MasorConfig::default()).unwrap();
        assert_eq!(out.trace.len(), 1);
        assert!(out.mask.iter().all(|&k| k));

        let bare = MasorConfig { error_floor: 0.0, ..MasorConfig::default() };
        let err = masor(&dummy_corrs(10), table_solver(&table), &bare).unwrap_err();
        assert!(matches!(err, RobustError::SetCollapsed { iteration: 0, .. }));
    }

    #[test]
    fn trimming_below_min_features_aborts() {
        let table = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 5.0, 5.0];
        let cfg = MasorConfig { min_features: 7, ..MasorConfig::default() };
        let err = masor(&dummy_corrs(8), table_solver(&table), &cfg).unwrap_err();
        assert!(matches!(err, RobustError::SetCollapsed { iteration: 0, min: 7 }));
    }

    #[test]
    fn solver_failures_and_bad_inputs_are_rejected() {
        let corrs = dummy_corrs(8);
        let cfg = MasorConfig::default();

        let err = masor::<()>(&corrs, |_, _| None, &cfg).unwrap_err();
        assert!(matches!(err, RobustError::SolverFailed { iteration: 0 }));

        let err = masor(&corrs, |_, _| Some(((), vec![0.0; 3])), &cfg).unwrap_err();
        assert!(matches!(err, RobustError::SolverFailed { iteration: 0 }));

        let err = masor(&corrs, |s, _| Some(((), vec![f64::NAN; s.len()])), &cfg).unwrap_err();
        assert!(matches!(err, RobustError::SolverFailed { iteration: 0 }));

        let err = masor::<()>(&dummy_corrs(5), |_, _| None, &cfg).unwrap_err();
        assert!(matches!(err, RobustError::NotEnoughCorrespondences { needed: 8, got: 5 }));

        let zero_iters = MasorConfig { max_iterations: 0, ..MasorConfig::default() };
        assert!(matches!(
            masor::<()>(&corrs, |_, _| None, &zero_iters),
            Err(RobustError::BadConfig(_))
        ));

        let negative_floor = MasorConfig { error_floor: -1.0, ..MasorConfig::default() };
        assert!(matches!(
            masor::<()>(&corrs, |_, _| None, &negative_floor),
            Err(RobustError::BadConfig(_))
        ));
    }
}
