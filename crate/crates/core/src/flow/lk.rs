//! Forward-additive and inverse-compositional Lucas-Kanade solvers, the
//! pyramidal driver, feature scoring, and forward-backward verification.

use std::fs;
use std::path::Path;

use nalgebra::{Cholesky, SMatrix, SVector};

use super::{gradient, FlowError, Image, LkConfig, Pyramid};
use crate::geometry::{Flow2, PixelPoint};

/// Relative slack when testing whether an iteration increased the
/// objective; accepted steps are non-increasing within this tolerance.
const OBJECTIVE_INCREASE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LkSolver {
    ForwardAdditive,
    InverseCompositional,
}

/// Warp parameters; `p = 0` is the identity for both kinds. The affine
/// parameterization is (a11-1, a12, a21, a22-1, tx, ty).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WarpParams {
    Translation { u: f64, v: f64 },
    Affine { p: [f64; 6] },
}

impl WarpParams {
    pub fn translation_zero() -> Self {
        WarpParams::Translation { u: 0.0, v: 0.0 }
    }

    pub fn affine_identity() -> Self {
        WarpParams::Affine { p: [0.0; 6] }
    }

    /// The pure-displacement part of the warp, in pixels.
    pub fn displacement(&self) -> Flow2 {
        match *self {
            WarpParams::Translation { u, v } => Flow2::new(u, v),
            WarpParams::Affine { p } => Flow2::new(p[4], p[5]),
        }
    }

    /// Warps an offset `d` from the patch center.
    pub fn apply(&self, d: (f64, f64)) -> (f64, f64) {
        match *self {
            WarpParams::Translation { u, v } => (d.0 + u, d.1 + v),
            WarpParams::Affine { p } => (
                (1.0 + p[0]) * d.0 + p[1] * d.1 + p[4],
                p[2] * d.0 + (1.0 + p[3]) * d.1 + p[5],
            ),
        }
    }
}

/// Result of one tracked feature. `displacement` is the translation part of
/// `warp` in pixels of the image the solver ran on; `residual` is the final
/// weighted objective divided by the patch pixel count; `objective_trace`
/// holds the objective at every accepted iterate.
#[derive(Debug, Clone)]
pub struct TrackResult {
    pub warp: WarpParams,
    pub displacement: Flow2,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub hessian_assemblies: usize,
    pub objective_trace: Vec<f64>,
}

/// Static description of one warp kind: how to apply parameters, the
/// warp Jacobian (parameter-independent for both supported kinds), and the
/// additive/compositional updates.
trait Warp<const N: usize> {
    fn read(w: &WarpParams) -> Option<SVector<f64, N>>;
    fn write(v: &SVector<f64, N>) -> WarpParams;
    fn apply(v: &SVector<f64, N>, d: (f64, f64)) -> (f64, f64);
    fn jacobian(d: (f64, f64)) -> SMatrix<f64, 2, N>;
    /// Forward-additive update p + dp.
    fn additive(v: &SVector<f64, N>, dp: &SVector<f64, N>) -> SVector<f64, N> {
        v + dp
    }
    /// Inverse-compositional update: compose with the inverted increment.
    fn compose_inverse(
        v: &SVector<f64, N>,
        dp: &SVector<f64, N>,
    ) -> Result<SVector<f64, N>, FlowError>;
    /// Smallest eigenvalue of the (symmetric PSD) normal-equation matrix.
    fn min_eigenvalue(h: &SMatrix<f64, N, N>) -> f64;
}

struct TranslationWarp;

impl Warp<2> for TranslationWarp {
    fn read(w: &WarpParams) -> Option<SVector<f64, 2>> {
        match *w {
            WarpParams::Translation { u, v } => Some(SVector::<f64, 2>::new(u, v)),
            WarpParams::Affine { .. } => None,
        }
    }

    fn write(v: &SVector<f64, 2>) -> WarpParams {
        WarpParams::Translation { u: v[0], v: v[1] }
    }

    fn apply(v: &SVector<f64, 2>, d: (f64, f64)) -> (f64, f64) {
        (d.0 + v[0], d.1 + v[1])
    }

    fn jacobian(_d: (f64, f64)) -> SMatrix<f64, 2, 2> {
        SMatrix::<f64, 2, 2>::identity()
    }

    fn compose_inverse(
        v: &SVector<f64, 2>,
        dp: &SVector<f64, 2>,
    ) -> Result<SVector<f64, 2>, FlowError> {
        Ok(v - dp)
    }

    fn min_eigenvalue(h: &SMatrix<f64, 2, 2>) -> f64 {
        let (a, b, c) = (h[(0, 0)], h[(0, 1)], h[(1, 1)]);
        (a + c) / 2.0 - (((a - c) / 2.0).powi(2) + b * b).sqrt()
    }
}

struct AffineWarp;

impl AffineWarp {
    fn matrix(v: &SVector<f64, 6>) -> SMatrix<f64, 3, 3> {
        SMatrix::<f64, 3, 3>::new(
            1.0 + v[0],
            v[1],
            v[4],
            v[2],
            1.0 + v[3],
            v[5],
            0.0,
            0.0,
            1.0,
        )
    }
}

impl Warp<6> for AffineWarp {
    fn read(w: &WarpParams) -> Option<SVector<f64, 6>> {
        match *w {
            WarpParams::Affine { p } => Some(SVector::<f64, 6>::from_column_slice(&p)),
            WarpParams::Translation { .. } => None,
        }
    }

    fn write(v: &SVector<f64, 6>) -> WarpParams {
        WarpParams::Affine { p: [v[0], v[1], v[2], v[3], v[4], v[5]] }
    }

    fn apply(v: &SVector<f64, 6>, d: (f64, f64)) -> (f64, f64) {
        (
            (1.0 + v[0]) * d.0 + v[1] * d.1 + v[4],
            v[2] * d.0 + (1.0 + v[3]) * d.1 + v[5],
        )
    }

    fn jacobian(d: (f64, f64)) -> SMatrix<f64, 2, 6> {
        SMatrix::<f64, 2, 6>::new(
            d.0, d.1, 0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, d.0, d.1, 0.0, 1.0,
        )
    }

    fn compose_inverse(
        v: &SVector<f64, 6>,
        dp: &SVector<f64, 6>,
    ) -> Result<SVector<f64, 6>, FlowError> {
        let a = SMatrix::<f64, 2, 2>::new(1.0 + dp[0], dp[1], dp[2], 1.0 + dp[3]);
        if a.determinant().abs() < 1e-12 {
            return Err(FlowError::NonInvertibleIncrement);
        }
        let m = Self::matrix(v)
            * Self::matrix(dp).try_inverse().ok_or(FlowError::NonInvertibleIncrement)?;
        Ok(SVector::<f64, 6>::new(
            m[(0, 0)] - 1.0,
            m[(0, 1)],
            m[(1, 0)],
            m[(1, 1)] - 1.0,
            m[(0, 2)],
            m[(1, 2)],
        ))
    }

    fn min_eigenvalue(h: &SMatrix<f64, 6, 6>) -> f64 {
        h.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Gaussian-weighted patch geometry shared by every solver pass.
struct Patch {
    offsets: Vec<(f64, f64)>,
    weights: Vec<f64>,
}

fn make_patch(cfg: &LkConfig) -> Result<Patch, FlowError> {
    if cfg.window < 3 || cfg.window % 2 == 0 {
        return Err(FlowError::BadImage(format!("window {} must be odd and >= 3", cfg.window)));
    }
    let half = (cfg.window / 2) as isize;
    let inv_two_sigma2 = 1.0 / (2.0 * cfg.sigma() * cfg.sigma());
    let mut offsets = Vec::with_capacity(cfg.window * cfg.window);
    let mut weights = Vec::with_capacity(cfg.window * cfg.window);
    for dy in -half..=half {
        for dx in -half..=half {
            let (dx, dy) = (dx as f64, dy as f64);
            offsets.push((dx, dy));
            weights.push((-(dx * dx + dy * dy) * inv_two_sigma2).exp());
        }
    }
    Ok(Patch { offsets, weights })
}

/// Weighted objective and per-pixel errors at warp parameters `p`.
fn eval_objective<const N: usize, W: Warp<N>>(
    i2: &Image,
    center: PixelPoint,
    p: &SVector<f64, N>,
    patch: &Patch,
    template: &[f64],
    errors: &mut [f64],
) -> Result<f64, FlowError> {
    let mut j = 0.0;
    for (k, &d) in patch.offsets.iter().enumerate() {
        let (wx, wy) = W::apply(p, d);
        let e = i2.sample(center.x + wx, center.y + wy)? - template[k];
        errors[k] = e;
        j += patch.weights[k] * e * e;
    }
    Ok(j)
}

fn solve_normal<const N: usize, W: Warp<N>>(
    h: &SMatrix<f64, N, N>,
    b: &SVector<f64, N>,
    min_eig: f64,
) -> Result<SVector<f64, N>, FlowError> {
    if W::min_eigenvalue(h) <= min_eig {
        return Err(FlowError::SingularHessian);
    }
    let chol = Cholesky::new(*h).ok_or(FlowError::SingularHessian)?;
    Ok(chol.solve(b))
}

fn run_solver<const N: usize, W: Warp<N>>(
    i1: &Image,
    i2: &Image,
    center: PixelPoint,
    init: SVector<f64, N>,
    cfg: &LkConfig,
    solver: LkSolver,
    max_iterations: usize,
) -> Result<TrackResult, FlowError> {
    let patch = make_patch(cfg)?;
    let npix = patch.offsets.len() as f64;

    let mut template = Vec::with_capacity(patch.offsets.len());
    for &(dx, dy) in &patch.offsets {
        template.push(i1.sample(center.x + dx, center.y + dy)?);
    }

    // Inverse-compositional: steepest-descent rows from the template
    // gradient, normal-equation matrix assembled exactly once.
    let mut hessian_assemblies = 0usize;
    let ic = if solver == LkSolver::InverseCompositional {
        let mut rows = Vec::with_capacity(patch.offsets.len());
        let mut h = SMatrix::<f64, N, N>::zeros();
        for (k, &(dx, dy)) in patch.offsets.iter().enumerate() {
            let g = gradient(i1, &PixelPoint::new(center.x + dx, center.y + dy))?;
            let row =
                W::jacobian((dx, dy)).transpose() * SVector::<f64, 2>::new(g.u, g.v);
            h += patch.weights[k] * row * row.transpose();
            rows.push(row);
        }
        hessian_assemblies = 1;
        Some((h, rows))
    } else {
        None
    };

    let mut p = init;
    let mut errors = vec![0.0; patch.offsets.len()];
    let mut j = eval_objective::<N, W>(i2, center, &p, &patch, &template, &mut errors)?;
    let mut trace = vec![j];
    let mut iterations = 0usize;
    let mut converged = false;

    while iterations < max_iterations {
        let (h, b) = match (&ic, solver) {
            (Some((h, rows)), _) => {
                let mut b = SVector::<f64, N>::zeros();
                for (k, row) in rows.iter().enumerate() {
                    b += patch.weights[k] * errors[k] * row;
                }
                (*h, b)
            }
            (None, _) => {
                let mut h = SMatrix::<f64, N, N>::zeros();
                let mut b = SVector::<f64, N>::zeros();
                for (k, &(dx, dy)) in patch.offsets.iter().enumerate() {
                    let (wx, wy) = W::apply(&p, (dx, dy));
                    let g = gradient(i2, &PixelPoint::new(center.x + wx, center.y + wy))?;
                    let row =
                        W::jacobian((dx, dy)).transpose() * SVector::<f64, 2>::new(g.u, g.v);
                    h += patch.weights[k] * row * row.transpose();
                    b += patch.weights[k] * errors[k] * row;
                }
                hessian_assemblies += 1;
                (h, b)
            }
        };

        let dp = solve_normal::<N, W>(&h, &b, cfg.min_eigenvalue)?;
        let p_next = match solver {
            LkSolver::ForwardAdditive => W::additive(&p, &(-dp)),
            LkSolver::InverseCompositional => W::compose_inverse(&p, &dp)?,
        };
        iterations += 1;

        let mut errors_next = vec![0.0; patch.offsets.len()];
        let j_next =
            eval_objective::<N, W>(i2, center, &p_next, &patch, &template, &mut errors_next)?;
        let at_stop_rule = dp.norm() < cfg.epsilon;
        if j_next > j * (1.0 + OBJECTIVE_INCREASE_TOL) + 1e-300 {
            // Keep the best-so-far parameters. A sub-epsilon step that
            // fails to decrease the objective means the stop rule fired at
            // the optimum; a larger one means the iteration is diverging.
            converged = at_stop_rule;
            break;
        }
        p = p_next;
        j = j_next;
        errors = errors_next;
        trace.push(j);
        if at_stop_rule {
            converged = true;
            break;
        }
    }

    let warp = W::write(&p);
    Ok(TrackResult {
        displacement: warp.displacement(),
        warp,
        iterations,
        residual: j / npix,
        converged,
        hessian_assemblies,
        objective_trace: trace,
    })
}

fn dispatch(
    i1: &Image,
    i2: &Image,
    center: PixelPoint,
    init: &WarpParams,
    cfg: &LkConfig,
    solver: LkSolver,
    max_iterations: usize,
) -> Result<TrackResult, FlowError> {
    match init {
        WarpParams::Translation { .. } => run_solver::<2, TranslationWarp>(
            i1,
            i2,
            center,
            TranslationWarp::read(init).unwrap(),
            cfg,
            solver,
            max_iterations,
        ),
        WarpParams::Affine { .. } => run_solver::<6, AffineWarp>(
            i1,
            i2,
            center,
            AffineWarp::read(init).unwrap(),
            cfg,
            solver,
            max_iterations,
        ),
    }
}

/// Single-level forward-additive Lucas-Kanade: re-linearizes on the second
/// image and re-assembles the normal equations every iteration.
pub fn lk_forward_additive(
    i1: &Image,
    i2: &Image,
    center: PixelPoint,
    init: &WarpParams,
    cfg: &LkConfig,
) -> Result<TrackResult, FlowError> {
    dispatch(i1, i2, center, init, cfg, LkSolver::ForwardAdditive, cfg.max_iterations)
}

/// Single-level inverse-compositional Lucas-Kanade: linearizes on the
/// template, assembles the normal-equation matrix once, and updates by
/// composing with the inverted increment (plain subtraction for the
/// translation warp).
pub fn lk_inverse_compositional(
    i1: &Image,
    i2: &Image,
    center: PixelPoint,
    init: &WarpParams,
    cfg: &LkConfig,
) -> Result<TrackResult, FlowError> {
    dispatch(i1, i2, center, init, cfg, LkSolver::InverseCompositional, cfg.max_iterations)
}

/// Coarse-to-fine translation tracking: one iteration per coarse level
/// (configurable), `final_iterations` at the finest, each level seeded with
/// the doubled displacement of the previous one.
pub fn track_pyramidal(
    p1: &Pyramid,
    p2: &Pyramid,
    center: PixelPoint,
    cfg: &LkConfig,
) -> Result<TrackResult, FlowError> {
    if p1.levels() != p2.levels() {
        return Err(FlowError::MismatchedPyramids(p1.levels(), p2.levels()));
    }
    let mut d = Flow2::new(0.0, 0.0);
    let mut iterations = 0;
    let mut assemblies = 0;
    let mut finest: Option<TrackResult> = None;
    for level in (0..p1.levels()).rev() {
        let scale = (1u64 << level) as f64;
        let c = PixelPoint::new(center.x / scale, center.y / scale);
        let init = WarpParams::Translation { u: d.u, v: d.v };
        let iters = if level == 0 { cfg.final_iterations } else { cfg.coarse_iterations };
        let r = dispatch(p1.level(level), p2.level(level), c, &init, cfg, cfg.solver, iters)?;
        iterations += r.iterations;
        assemblies += r.hessian_assemblies;
        d = r.displacement;
        if level > 0 {
            d = Flow2::new(2.0 * d.u, 2.0 * d.v);
        } else {
            finest = Some(r);
        }
    }
    let mut out = finest.expect("pyramid has at least one level");
    out.iterations = iterations;
    out.hessian_assemblies = assemblies;
    Ok(out)
}

/// Smaller eigenvalue of the mean gradient outer-product matrix over a
/// window: the corner score. Near-zero values signal the aperture problem.
pub fn structure_tensor_score(
    img: &Image,
    at: &PixelPoint,
    window: usize,
) -> Result<f64, FlowError> {
    let half = (window / 2) as isize;
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    let mut n = 0.0;
    for dy in -half..=half {
        for dx in -half..=half {
            let g = gradient(img, &PixelPoint::new(at.x + dx as f64, at.y + dy as f64))?;
            a += g.u * g.u;
            b += g.u * g.v;
            c += g.v * g.v;
            n += 1.0;
        }
    }
    let (a, b, c) = (a / n, b / n, c / n);
    Ok((a + c) / 2.0 - (((a - c) / 2.0).powi(2) + b * b).sqrt())
}

/// Picks up to `max_count` trackable features: corner scores are evaluated
/// on an integer grid of pitch `spacing` (staying `margin` px away from
/// the border), then greedily accepted best-first with `spacing` px
/// minimum separation. Ties break by position, so selection is
/// deterministic.
pub fn select_features(
    img: &Image,
    window: usize,
    margin: usize,
    spacing: usize,
    max_count: usize,
) -> Vec<(PixelPoint, f64)> {
    let spacing = spacing.max(1);
    let mut candidates = Vec::new();
    let mut y = margin;
    while y + margin < img.height() {
        let mut x = margin;
        while x + margin < img.width() {
            let p = PixelPoint::new(x as f64, y as f64);
            if let Ok(score) = structure_tensor_score(img, &p, window) {
                candidates.push((p, score));
            }
            x += spacing;
        }
        y += spacing;
    }
    candidates.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(a.0.y.total_cmp(&b.0.y))
            .then(a.0.x.total_cmp(&b.0.x))
    });
    let min_sep2 = (spacing * spacing) as f64;
    let mut picked: Vec<(PixelPoint, f64)> = Vec::with_capacity(max_count);
    for (p, score) in candidates {
        if picked.len() >= max_count {
            break;
        }
        let clear = picked
            .iter()
            .all(|(q, _)| (p.x - q.x).powi(2) + (p.y - q.y).powi(2) >= min_sep2);
        if clear {
            picked.push((p, score));
        }
    }
    picked
}

/// Outcome of a forward-backward consistency check.
#[derive(Debug, Clone)]
pub struct FbReport {
    pub accepted: bool,
    pub discrepancy: f64,
    pub forward: TrackResult,
    pub backward: TrackResult,
}

/// Tracks `center` from image 1 to 2, then the landed point back from 2 to
/// 1, and accepts iff both tracks converge and the round trip returns
/// within `cfg.fb_threshold` pixels.
pub fn forward_backward_check(
    p1: &Pyramid,
    p2: &Pyramid,
    center: PixelPoint,
    cfg: &LkConfig,
) -> Result<FbReport, FlowError> {
    let forward = track_pyramidal(p1, p2, center, cfg)?;
    let landed =
        PixelPoint::new(center.x + forward.displacement.u, center.y + forward.displacement.v);
    let backward = track_pyramidal(p2, p1, landed, cfg)?;
    let rx = landed.x + backward.displacement.u - center.x;
    let ry = landed.y + backward.displacement.v - center.y;
    let discrepancy = rx.hypot(ry);
    let accepted = forward.converged && backward.converged && discrepancy < cfg.fb_threshold;
    Ok(FbReport { accepted, discrepancy, forward, backward })
}

/// One row of the tracks CSV dump.
#[derive(Debug, Clone)]
pub struct TrackRecord {
    pub id: u64,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
    pub converged: bool,
}

/// Writes tracked features as CSV: feature_id, x1, y1, x2, y2, score,
/// converged.
pub fn write_tracks_csv(path: impl AsRef<Path>, tracks: &[TrackRecord]) -> Result<(), FlowError> {
    let mut out = String::from("feature_id,x1,y1,x2,y2,score,converged\n");
    for t in tracks {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6e},{}\n",
            t.id, t.x1, t.y1, t.x2, t.y2, t.score, t.converged as u8
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::build_pyramid;
    use crate::sim::{render_shifted_pair, SinusoidTexture};

    fn cfg_single() -> LkConfig {
        LkConfig { levels: 1, ..LkConfig::default() }
    }

    #[test]
    fn identical_images_converge_immediately() {
        let tex = SinusoidTexture::random(11, 6, 0.08, 0.4);
        let (i1, _) = render_shifted_pair(&tex, 64, 64, (0.0, 0.0));
        let c = PixelPoint::new(31.0, 33.0);
        for solver in [lk_forward_additive, lk_inverse_compositional] {
            let r =
                solver(&i1, &i1, c, &WarpParams::translation_zero(), &cfg_single()).unwrap();
            assert_eq!(r.iterations, 1);
            assert!(r.converged);
            assert_eq!((r.displacement.u, r.displacement.v), (0.0, 0.0));
            assert!(r.residual < 1e-30);
        }
    }

    #[test]
    fn constant_patch_is_singular() {
        let flat = Image::constant(64, 64, 0.5);
        let r = lk_forward_additive(
            &flat,
            &flat,
            PixelPoint::new(32.0, 32.0),
            &WarpParams::translation_zero(),
            &cfg_single(),
        );
        assert!(matches!(r, Err(FlowError::SingularHessian)));
        let r = lk_inverse_compositional(
            &flat,
            &flat,
            PixelPoint::new(32.0, 32.0),
            &WarpParams::translation_zero(),
            &cfg_single(),
        );
        assert!(matches!(r, Err(FlowError::SingularHessian)));
    }

    #[test]
    fn subpixel_shift_recovered_single_level() {
        // Wavelengths of 25 px and up keep the bilinear interpolation bias
        // well below the assertion tolerance.
        let tex = SinusoidTexture::random(3, 6, 0.25, 0.6);
        let shift = (0.6, -0.35);
        let (i1, i2) = render_shifted_pair(&tex, 96, 96, shift);
        let c = PixelPoint::new(48.0, 48.0);
        for solver in [lk_forward_additive, lk_inverse_compositional] {
            let r = solver(&i1, &i2, c, &WarpParams::translation_zero(), &cfg_single()).unwrap();
            assert!(r.converged);
            assert!(
                (r.displacement.u - shift.0).abs() < 0.02
                    && (r.displacement.v - shift.1).abs() < 0.02,
                "got ({}, {})",
                r.displacement.u,
                r.displacement.v
            );
        }
    }

    #[test]
    fn solvers_agree_across_textures() {
        // Forward-additive and inverse-compositional must land within
        // 1e-3 px of each other for shifts up to 0.4 * window radius.
        // A tight step threshold lets both solvers polish all the way to
        // their fixed points so the comparison measures the algorithms,
        // not the stopping slack; tracking the best corner of each texture
        // avoids aperture-limited patches where the displacement is
        // unconstrained along one direction.
        let cfg = LkConfig { levels: 1, epsilon: 1e-4, max_iterations: 60, ..LkConfig::default() };
        let mut max_gap: f64 = 0.0;
        for seed in 0..50u64 {
            let tex = SinusoidTexture::random(seed, 5, 0.5, 1.0);
            // Shift norms cover (0, 3] px = 0.4 * window radius.
            let r = 3.0 * (0.25 + 0.75 * ((seed as f64 * 0.137).fract()));
            let phi = seed as f64 * 2.39996;
            let shift = (r * phi.cos(), r * phi.sin());
            let (i1, i2) = render_shifted_pair(&tex, 128, 128, shift);
            let c = select_features(&i1, 15, 16, 8, 1)[0].0;
            let fa = lk_forward_additive(&i1, &i2, c, &WarpParams::translation_zero(), &cfg)
                .unwrap();
            let ic =
                lk_inverse_compositional(&i1, &i2, c, &WarpParams::translation_zero(), &cfg)
                    .unwrap();
            let gap = Flow2::new(
                fa.displacement.u - ic.displacement.u,
                fa.displacement.v - ic.displacement.v,
            )
            .norm();
            assert!(gap < 1e-3, "seed {seed}: solver gap {gap}");
            max_gap = max_gap.max(gap);
        }
        assert!(max_gap < 1e-3, "max solver gap {max_gap}");
    }

    #[test]
    fn hessian_assembly_counters() {
        let tex = SinusoidTexture::random(7, 6, 0.08, 0.4);
        let (i1, i2) = render_shifted_pair(&tex, 64, 64, (1.3, -0.8));
        let c = PixelPoint::new(32.0, 32.0);
        let fa =
            lk_forward_additive(&i1, &i2, c, &WarpParams::translation_zero(), &cfg_single())
                .unwrap();
        assert_eq!(fa.hessian_assemblies, fa.iterations);
        let ic = lk_inverse_compositional(&i1, &i2, c, &WarpParams::translation_zero(), &cfg_single())
            .unwrap();
        assert_eq!(ic.hessian_assemblies, 1);
        assert!(ic.iterations > 1);
    }

    #[test]
    fn objective_trace_non_increasing() {
        for seed in [1u64, 5, 9] {
            let tex = SinusoidTexture::random(seed, 6, 0.08, 0.4);
            let (i1, i2) = render_shifted_pair(&tex, 64, 64, (2.1, 1.4));
            let c = PixelPoint::new(30.0, 34.0);
            for solver in [lk_forward_additive, lk_inverse_compositional] {
                let r =
                    solver(&i1, &i2, c, &WarpParams::translation_zero(), &cfg_single()).unwrap();
                for w in r.objective_trace.windows(2) {
                    assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-300, "trace {:?}", r.objective_trace);
                }
            }
        }
    }

    #[test]
    fn analytic_hessian_matches_finite_differences() {
        // At the converged parameters the Gauss-Newton matrix 2*sum(w g g')
        // approximates the true Hessian of the objective. Wavelengths of
        // 200 px and up keep the pixel-grid discretization of both the
        // objective and the central-difference gradients below the 1e-3
        // comparison tolerance.
        let tex = SinusoidTexture::random(13, 6, 3.0, 4.5);
        let shift = (1.2, -0.7);
        let (i1, i2) = render_shifted_pair(&tex, 256, 256, shift);
        let c = PixelPoint::new(128.0, 128.0);
        let cfg = cfg_single();
        let patch = make_patch(&cfg).unwrap();
        let mut template = Vec::new();
        for &(dx, dy) in &patch.offsets {
            template.push(i1.sample(c.x + dx, c.y + dy).unwrap());
        }
        let p_true = SVector::<f64, 2>::new(shift.0, shift.1);

        // Analytic Gauss-Newton Hessian at the optimum (gradient of I2 at
        // warped positions).
        let mut h = SMatrix::<f64, 2, 2>::zeros();
        for (k, &(dx, dy)) in patch.offsets.iter().enumerate() {
            let g = gradient(&i2, &PixelPoint::new(c.x + dx + shift.0, c.y + dy + shift.1))
                .unwrap();
            let row = SVector::<f64, 2>::new(g.u, g.v);
            h += patch.weights[k] * row * row.transpose();
        }
        let h = 2.0 * h;

        let mut errs = vec![0.0; patch.offsets.len()];
        let mut jat = |p: SVector<f64, 2>| {
            eval_objective::<2, TranslationWarp>(&i2, c, &p, &patch, &template, &mut errs)
                .unwrap()
        };
        let step = 1e-2;
        let mut fd = SMatrix::<f64, 2, 2>::zeros();
        for i in 0..2 {
            for j in 0..2 {
                let mut pp = [p_true; 4];
                pp[0][i] += step;
                pp[0][j] += step;
                pp[1][i] += step;
                pp[1][j] -= step;
                pp[2][i] -= step;
                pp[2][j] += step;
                pp[3][i] -= step;
                pp[3][j] -= step;
                fd[(i, j)] = (jat(pp[0]) - jat(pp[1]) - jat(pp[2]) + jat(pp[3]))
                    / (4.0 * step * step);
            }
        }
        let rel = (h - fd).norm() / h.norm();
        assert!(rel < 1e-3, "relative Hessian error {rel}");
    }

    #[test]
    fn integer_shift_equivariance_is_bit_exact() {
        let tex = SinusoidTexture::random(21, 6, 0.08, 0.4);
        let (i1, i2) = render_shifted_pair(&tex, 96, 96, (1.7, -1.2));
        let (k, l) = (7i64, -5i64);
        let shift_img = |img: &Image| {
            Image::from_fn(img.width(), img.height(), |x, y| {
                let sx = x as i64 - k;
                let sy = y as i64 - l;
                if sx >= 0 && sy >= 0 && (sx as usize) < img.width() && (sy as usize) < img.height()
                {
                    img.get(sx as usize, sy as usize)
                } else {
                    0.0
                }
            })
        };
        let (s1, s2) = (shift_img(&i1), shift_img(&i2));
        let c = PixelPoint::new(48.0, 50.0);
        let cs = PixelPoint::new(48.0 + k as f64, 50.0 + l as f64);
        for solver in [lk_forward_additive, lk_inverse_compositional] {
            let a = solver(&i1, &i2, c, &WarpParams::translation_zero(), &cfg_single()).unwrap();
            let b = solver(&s1, &s2, cs, &WarpParams::translation_zero(), &cfg_single()).unwrap();
            assert_eq!(a.displacement.u.to_bits(), b.displacement.u.to_bits());
            assert_eq!(a.displacement.v.to_bits(), b.displacement.v.to_bits());
            assert_eq!(a.iterations, b.iterations);
        }
    }

    #[test]
    fn pyramidal_recovers_large_shift() {
        // Long-wavelength content survives the coarse pyramid levels, so
        // the 12 px shift falls inside the coarsest capture range. The
        // 256 px image keeps the 15 px window (plus gradient margin)
        // inside the 32 px coarsest level.
        let tex = SinusoidTexture::random(17, 6, 0.3, 0.8);
        let shift = (12.0, -6.5);
        let (i1, i2) = render_shifted_pair(&tex, 256, 256, shift);
        let cfg = LkConfig::default();
        let p1 = build_pyramid(&i1, cfg.levels).unwrap();
        let p2 = build_pyramid(&i2, cfg.levels).unwrap();
        let r = track_pyramidal(&p1, &p2, PixelPoint::new(128.0, 128.0), &cfg).unwrap();
        assert!(r.converged);
        assert!(
            (r.displacement.u - shift.0).abs() < 0.1 && (r.displacement.v - shift.1).abs() < 0.1,
            "got ({}, {})",
            r.displacement.u,
            r.displacement.v
        );

        let zero = track_pyramidal(&p1, &p1, PixelPoint::new(128.0, 128.0), &cfg).unwrap();
        assert_eq!((zero.displacement.u, zero.displacement.v), (0.0, 0.0));
    }

    #[test]
    fn over_range_shift_does_not_claim_convergence() {
        // High-frequency texture, shallow pyramid: a 40 px shift is far
        // beyond the capture range, so the track must not report success.
        let tex = SinusoidTexture::random(29, 7, 0.05, 0.14);
        let (i1, i2) = render_shifted_pair(&tex, 192, 192, (40.0, 0.0));
        let cfg = LkConfig { levels: 2, ..LkConfig::default() };
        let p1 = build_pyramid(&i1, cfg.levels).unwrap();
        let p2 = build_pyramid(&i2, cfg.levels).unwrap();
        match track_pyramidal(&p1, &p2, PixelPoint::new(70.0, 96.0), &cfg) {
            Ok(r) => assert!(
                !r.converged || (r.displacement.u - 40.0).abs() > 1.0,
                "converged to ({}, {})",
                r.displacement.u,
                r.displacement.v
            ),
            Err(FlowError::OutOfBounds { .. }) => {}
            Err(e) => panic!("unexpected error {e:?}"),
        }
    }

    #[test]
    fn feature_selection_is_ordered_and_separated() {
        let tex = SinusoidTexture::random(41, 6, 0.15, 0.5);
        let (img, _) = render_shifted_pair(&tex, 128, 128, (0.0, 0.0));
        let picks = select_features(&img, 15, 12, 10, 20);
        assert_eq!(picks.len(), 20);
        for w in picks.windows(2) {
            assert!(w[0].1 >= w[1].1, "scores must be non-increasing");
        }
        for (i, (p, score)) in picks.iter().enumerate() {
            assert!(*score > 0.0);
            assert_eq!(*score, structure_tensor_score(&img, p, 15).unwrap());
            for (q, _) in &picks[i + 1..] {
                let d2 = (p.x - q.x).powi(2) + (p.y - q.y).powi(2);
                assert!(d2 >= 100.0, "features too close: {d2}");
            }
        }
        let again = select_features(&img, 15, 12, 10, 20);
        for (a, b) in picks.iter().zip(&again) {
            assert_eq!((a.0.x, a.0.y), (b.0.x, b.0.y));
        }
    }

    #[test]
    fn structure_tensor_ordering() {
        let corner = Image::from_fn(64, 64, |x, y| {
            if (x < 32) ^ (y < 32) {
                1.0
            } else {
                0.0
            }
        });
        let edge = Image::from_fn(64, 64, |x, _| if x < 32 { 0.0 } else { 1.0 });
        let flat = Image::constant(64, 64, 0.5);
        let at = PixelPoint::new(32.0, 32.0);
        let sc = structure_tensor_score(&corner, &at, 15).unwrap();
        let se = structure_tensor_score(&edge, &at, 15).unwrap();
        let sf = structure_tensor_score(&flat, &at, 15).unwrap();
        assert_eq!(sf, 0.0);
        assert!(se < 1e-9, "edge has one zero eigenvalue, got {se}");
        assert!(sc > se && se >= sf, "corner {sc} edge {se} flat {sf}");
    }

    #[test]
    fn forward_backward_accepts_clean_rejects_occluded() {
        let tex = SinusoidTexture::random(31, 6, 0.25, 0.6);
        let shift = (3.2, 2.1);
        let (i1, i2) = render_shifted_pair(&tex, 128, 128, shift);
        let cfg = LkConfig { levels: 3, ..LkConfig::default() };
        let c = PixelPoint::new(64.0, 64.0);
        let p1 = build_pyramid(&i1, cfg.levels).unwrap();
        let p2 = build_pyramid(&i2, cfg.levels).unwrap();
        let clean = forward_backward_check(&p1, &p2, c, &cfg).unwrap();
        assert!(clean.accepted);
        assert!(clean.discrepancy < 0.05);

        let same = forward_backward_check(&p1, &p1, c, &cfg).unwrap();
        assert!(same.accepted && same.discrepancy == 0.0);

        // Occlude the landed region in I2 with a differently textured block.
        let occ = SinusoidTexture::random(99, 6, 0.03, 0.12);
        let i2_occ = Image::from_fn(128, 128, |x, y| {
            let (dx, dy) = (x as f64 - 67.2, y as f64 - 66.1);
            if dx.abs() < 12.0 && dy.abs() < 12.0 {
                occ.eval(x as f64 * 0.21, y as f64 * 0.17)
            } else {
                i2.get(x, y)
            }
        });
        let p2o = build_pyramid(&i2_occ, cfg.levels).unwrap();
        let rejected = match forward_backward_check(&p1, &p2o, c, &cfg) {
            Ok(rep) => !rep.accepted,
            Err(_) => true,
        };
        assert!(rejected, "occluded feature must not pass the round-trip check");
    }
}
