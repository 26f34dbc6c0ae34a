//! Seeded hypothesize-and-verify over correspondence sets.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::RobustError;
use crate::egomotion::Correspondence;

/// Decorrelates per-hypothesis RNG streams drawn from one base seed, so
/// hypotheses can be generated and scored concurrently yet reproducibly.
const HYPOTHESIS_SEED_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct RansacConfig {
    /// Correspondences drawn per hypothesis; must cover the model's
    /// minimal problem.
    pub min_sample_size: usize,
    /// Hard cap on hypotheses; the adaptive bound only lowers it.
    pub max_iterations: usize,
    /// Inlier gate on the scorer's residual, in the scorer's units
    /// (2e-3 in normalized coordinates is one pixel at f = 500).
    pub inlier_threshold: f64,
    /// Target probability of having drawn at least one all-inlier sample.
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            min_sample_size: 8,
            max_iterations: 500,
            inlier_threshold: 2e-3,
            confidence: 0.999,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RansacOutcome<M> {
    pub model: M,
    /// Inlier mask aligned with the input order.
    pub mask: Vec<bool>,
    /// Hypotheses actually drawn before the adaptive bound was met.
    pub iterations: usize,
}

impl<M> RansacOutcome<M> {
    pub fn support(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

/// Hypotheses needed so that an all-inlier draw happened with probability
/// `confidence`, given the best support seen so far.
fn adaptive_bound(inliers: usize, total: usize, cfg: &RansacConfig) -> usize {
    let w = inliers as f64 / total as f64;
    let p_clean = w.powi(cfg.min_sample_size as i32);
    if p_clean >= 1.0 {
        return 1;
    }
    let denom = (1.0 - p_clean).ln();
    if denom == 0.0 {
        return cfg.max_iterations;
    }
    let needed = ((1.0 - cfg.confidence).ln() / denom).ceil();
    if !needed.is_finite() || needed >= cfg.max_iterations as f64 {
        cfg.max_iterations
    } else {
        (needed as usize).max(1)
    }
}

/// Draws minimal samples, fits a model with `minimal_solver`, and keeps
/// the hypothesis with the largest support under `scorer` (residual below
/// [`RansacConfig::inlier_threshold`]). The iteration budget shrinks
/// adaptively as better hypotheses raise the inlier-ratio estimate.
/// Deterministic for a fixed seed and input order; a solver may decline a
/// sample by returning `None`.
pub fn ransac<M>(
    corrs: &[Correspondence],
    mut minimal_solver: impl FnMut(&[Correspondence]) -> Option<M>,
    mut scorer: impl FnMut(&M, &Correspondence) -> f64,
    cfg: &RansacConfig,
) -> Result<RansacOutcome<M>, RobustError> {
    if cfg.min_sample_size == 0 || cfg.max_iterations == 0 {
        return Err(RobustError::BadConfig(
            "min_sample_size and max_iterations must be positive".into(),
        ));
    }
    if !(cfg.confidence > 0.0 && cfg.confidence < 1.0) {
        return Err(RobustError::BadConfig("confidence must lie in (0, 1)".into()));
    }
    if !(cfg.inlier_threshold > 0.0) {
        return Err(RobustError::BadConfig("inlier_threshold must be positive".into()));
    }
    let n = corrs.len();
    if n < cfg.min_sample_size {
        return Err(RobustError::NotEnoughCorrespondences { needed: cfg.min_sample_size, got: n });
    }

    let mut best: Option<(usize, M, Vec<bool>)> = None;
    let mut required = cfg.max_iterations;
    let mut drawn = 0usize;
    while drawn < required {
        let seed = cfg.seed.wrapping_add((drawn as u64).wrapping_mul(HYPOTHESIS_SEED_MIX));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks = sample(&mut rng, n, cfg.min_sample_size);
        drawn += 1;
        let subset: Vec<Correspondence> = picks.iter().map(|j| corrs[j].clone()).collect();
        let Some(model) = minimal_solver(&subset) else { continue };
        let mask: Vec<bool> =
            corrs.iter().map(|c| scorer(&model, c) < cfg.inlier_threshold).collect();
        let count = mask.iter().filter(|&&b| b).count();
        if best.as_ref().map_or(true, |(c, _, _)| count > *c) {
            required = required.min(adaptive_bound(count, n, cfg));
            best = Some((count, model, mask));
        }
    }

    match best {
        Some((count, model, mask)) if count >= cfg.min_sample_size => {
            Ok(RansacOutcome { model, mask, iterations: drawn })
        }
        _ => Err(RobustError::NoConsensus),
    }
}
