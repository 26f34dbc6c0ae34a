//! Discrete and continuous eight-point epipolar solvers and essential-matrix
//! decomposition.

use std::cmp::Ordering;

use nalgebra::{SMatrix, SVector};

use super::{Correspondence, EgomotionError};
use crate::geometry::{
    rotational_flow, skew, translational_flow, Flow2, Mat3, NormalizedPoint, Pose, Vec3, MIN_DEPTH,
};

/// Tuning knobs shared by the discrete and continuous eight-point solvers.
#[derive(Debug, Clone)]
pub struct EightPointConfig {
    /// Degeneracy threshold: the configuration is rejected when the
    /// second-smallest singular value of the stacked constraint matrix falls
    /// within this ratio of the largest, i.e. the system has a solution
    /// family (coplanar scene, critical surface) instead of a unique null
    /// direction.
    pub degen_ratio: f64,
    /// Median rotation-compensated displacement below which the translation
    /// is declared unobservable.
    pub parallax_min: f64,
}

impl Default for EightPointConfig {
    fn default() -> Self {
        EightPointConfig { degen_ratio: 1e-3, parallax_min: 1e-6 }
    }
}

/// Essential matrix E = ΔT̂·ΔR, kept on the essential manifold: singular
/// values (1, 1, 0), Frobenius norm √2, and the entry of largest magnitude
/// positive (a deterministic sign convention; E and −E encode the same
/// constraint).
#[derive(Debug, Clone, PartialEq)]
pub struct EssentialMatrix {
    e: Mat3,
}

impl EssentialMatrix {
    /// Projects an arbitrary matrix onto the essential manifold.
    ///
    /// Fails with [`EgomotionError::DegenerateConfiguration`] when the input
    /// has rank < 2, in which case no translation/rotation factorization
    /// exists.
    pub fn project(m: &Mat3) -> Result<Self, EgomotionError> {
        let (u, s, vt) = svd3_sorted(m);
        if s[1] <= 1e-12 * s[0].max(1e-300) {
            return Err(EgomotionError::DegenerateConfiguration);
        }
        let mut e = u * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, 0.0)) * vt;
        // Canonical sign: first entry of strictly largest magnitude, scanned
        // row-major, made positive.
        let mut best = 0.0_f64;
        for &v in e.transpose().as_slice() {
            if v.abs() > best.abs() {
                best = v;
            }
        }
        if best < 0.0 {
            e = -e;
        }
        Ok(EssentialMatrix { e })
    }

    /// The essential matrix ΔT̂·ΔR of `delta`, projected onto the manifold
    /// (errors when the translation is zero).
    pub fn from_pose(delta: &Pose) -> Result<Self, EgomotionError> {
        Self::project(&(skew(delta.translation()) * delta.rotation()))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.e
    }

    /// Epipolar residual x̄_nextᵀ·E·x̄_t; zero for exact static
    /// correspondences under the encoded motion.
    pub fn residual(&self, x_t: &NormalizedPoint, x_next: &NormalizedPoint) -> f64 {
        x_next.homogeneous().dot(&(self.e * x_t.homogeneous()))
    }
}

/// SVD of a 3×3 matrix with singular values sorted descending and U/Vᵀ
/// permuted to match.
fn svd3_sorted(m: &Mat3) -> (Mat3, Vec3, Mat3) {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd requested u");
    let vt = svd.v_t.expect("svd requested v_t");
    let s = svd.singular_values;
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let us = Mat3::from_columns(&[u.column(idx[0]), u.column(idx[1]), u.column(idx[2])]);
    let vts = Mat3::from_rows(&[vt.row(idx[0]), vt.row(idx[1]), vt.row(idx[2])]);
    (us, Vec3::new(s[idx[0]], s[idx[1]], s[idx[2]]), vts)
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = x.total_cmp(y);
        if o != Ordering::Equal {
            return o;
        }
    }
    Ordering::Equal
}

/// Accumulates Σ rᵀ·r over rows sorted lexicographically, making the normal
/// matrix bit-identical under any permutation of the input.
fn sorted_normal_matrix(mut rows: Vec<[f64; 9]>) -> SMatrix<f64, 9, 9> {
    rows.sort_by(|a, b| lex_cmp(a, b));
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for r in &rows {
        let v = SVector::<f64, 9>::from_column_slice(r);
        ata += v * v.transpose();
    }
    ata
}

/// Eigen-decomposition of a 9×9 normal matrix with eigenvalues sorted
/// descending; returns (eigenvalues, eigenvectors as columns).
fn eigen9_sorted(ata: &SMatrix<f64, 9, 9>) -> ([f64; 9], [SVector<f64, 9>; 9]) {
    let eig = ata.symmetric_eigen();
    let mut idx: Vec<usize> = (0..9).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut values = [0.0; 9];
    let mut vectors = [SVector::<f64, 9>::zeros(); 9];
    for (k, &i) in idx.iter().enumerate() {
        values[k] = eig.eigenvalues[i];
        vectors[k] = eig.eigenvectors.column(i).into_owned();
    }
    (values, vectors)
}

/// Best-fit rotation aligning the bearing vectors of `x_t` with those of
/// `x_next` (orthogonal Procrustes on the unit sphere). Exact for
/// zero-translation motion; the residual displacements it leaves behind
/// measure parallax.
fn bearing_rotation_fit(corrs: &[Correspondence]) -> Mat3 {
    let mut pairs: Vec<[f64; 6]> = corrs
        .iter()
        .map(|c| {
            let b1 = c.x_t.homogeneous().normalize();
            let b2 = c.x_next.homogeneous().normalize();
            [b1.x, b1.y, b1.z, b2.x, b2.y, b2.z]
        })
        .collect();
    pairs.sort_by(|a, b| lex_cmp(a, b));
    let mut m = Mat3::zeros();
    for p in &pairs {
        let b1 = Vec3::new(p[0], p[1], p[2]);
        let b2 = Vec3::new(p[3], p[4], p[5]);
        m += b2 * b1.transpose();
    }
    let (u, _s, vt) = svd3_sorted(&m);
    let d = (u * vt).determinant();
    u * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d.signum())) * vt
}

fn median_of(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median displacement left after the best rotation-only explanation of the
/// correspondences; near zero exactly when the baseline is (close to) zero.
fn rotation_compensated_parallax(corrs: &[Correspondence]) -> f64 {
    let r = bearing_rotation_fit(corrs);
    let residuals = corrs
        .iter()
        .map(|c| {
            let rotated = r * c.x_t.homogeneous();
            if rotated.z < MIN_DEPTH {
                return f64::INFINITY;
            }
            let dx = rotated.x / rotated.z - c.x_next.x;
            let dy = rotated.y / rotated.z - c.x_next.y;
            dx.hypot(dy)
        })
        .collect();
    median_of(residuals)
}

/// Similarity that moves a point set's centroid to the origin and its RMS
/// radius to √2 (the standard conditioning transform for the eight-point
/// stack).
struct Similarity2 {
    scale: f64,
    cx: f64,
    cy: f64,
}

impl Similarity2 {
    fn fit(points: impl Iterator<Item = NormalizedPoint>) -> Result<Self, EgomotionError> {
        let mut coords: Vec<[f64; 2]> = points.map(|p| [p.x, p.y]).collect();
        coords.sort_by(|a, b| lex_cmp(a, b));
        let n = coords.len() as f64;
        let (mut sx, mut sy) = (0.0, 0.0);
        for c in &coords {
            sx += c[0];
            sy += c[1];
        }
        let (cx, cy) = (sx / n, sy / n);
        let mut rms2 = 0.0;
        for c in &coords {
            let (dx, dy) = (c[0] - cx, c[1] - cy);
            rms2 += dx * dx + dy * dy;
        }
        rms2 /= n;
        if rms2 < 1e-24 {
            // All points coincide; no epipolar geometry is recoverable.
            return Err(EgomotionError::DegenerateConfiguration);
        }
        Ok(Similarity2 { scale: (2.0 / rms2).sqrt(), cx, cy })
    }

    fn apply(&self, p: &NormalizedPoint) -> (f64, f64) {
        (self.scale * (p.x - self.cx), self.scale * (p.y - self.cy))
    }

    fn matrix(&self) -> Mat3 {
        Mat3::new(
            self.scale,
            0.0,
            -self.scale * self.cx,
            0.0,
            self.scale,
            -self.scale * self.cy,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// Least-squares essential matrix from ≥8 correspondences.
///
/// The stacked constraints x̄_nextᵀ·E·x̄_t = 0 are solved on conditioned
/// coordinates (centroid at the origin, RMS radius √2 per image), the
/// result mapped back and projected onto the essential manifold. Rows are
/// weighted by √weight and accumulated in a canonical order, so the output
/// is bit-identical under relabeling or permutation of the input.
///
/// Errors:
/// - [`EgomotionError::InsufficientParallax`] when the correspondences are
///   explained by a rotation alone (zero baseline), checked first;
/// - [`EgomotionError::DegenerateConfiguration`] when the constraint system
///   has no unique null direction (all points on one plane, critical
///   surfaces, coincident points).
pub fn eight_point_discrete(
    corrs: &[Correspondence],
    cfg: &EightPointConfig,
) -> Result<EssentialMatrix, EgomotionError> {
    if corrs.len() < 8 {
        return Err(EgomotionError::NotEnoughCorrespondences { needed: 8, got: corrs.len() });
    }
    if let Some(c) = corrs.iter().find(|c| c.weight < 0.0) {
        return Err(EgomotionError::BadProblem(format!("negative weight on feature {}", c.id)));
    }
    let median = rotation_compensated_parallax(corrs);
    if median < cfg.parallax_min {
        return Err(EgomotionError::InsufficientParallax { median });
    }
    let t1 = Similarity2::fit(corrs.iter().map(|c| c.x_t))?;
    let t2 = Similarity2::fit(corrs.iter().map(|c| c.x_next))?;
    let rows: Vec<[f64; 9]> = corrs
        .iter()
        .map(|c| {
            let p = t1.apply(&c.x_t);
            let q = t2.apply(&c.x_next);
            let w = c.weight.sqrt();
            // Coefficient of E[i][j] is x̄_next[i]·x̄_t[j], row-major.
            [q.0 * p.0, q.0 * p.1, q.0, q.1 * p.0, q.1 * p.1, q.1, p.0, p.1, 1.0].map(|v| v * w)
        })
        .collect();
    let (values, vectors) = eigen9_sorted(&sorted_normal_matrix(rows));
    // Eigenvalues of AᵀA are squared singular values of A.
    if values[7] < cfg.degen_ratio * cfg.degen_ratio * values[0] {
        return Err(EgomotionError::DegenerateConfiguration);
    }
    let v = vectors[8];
    let e_cond = Mat3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
    let e = t2.matrix().transpose() * e_cond * t1.matrix();
    EssentialMatrix::project(&e)
}

/// Relative pose from an essential matrix, disambiguated by the positive
/// depth constraint: among the four (R, ±T) factorizations, the one placing
/// a strict majority of the triangulated points in front of both cameras.
/// The returned translation has unit norm.
pub fn decompose_essential(
    e: &EssentialMatrix,
    corrs: &[Correspondence],
) -> Result<Pose, EgomotionError> {
    if corrs.is_empty() {
        return Err(EgomotionError::NoCorrespondences);
    }
    let (mut u, _s, mut vt) = svd3_sorted(e.matrix());
    // Third singular vector signs are free (singular value zero); force
    // proper rotations.
    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if vt.determinant() < 0.0 {
        vt.row_mut(2).neg_mut();
    }
    let w = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * vt;
    let r2 = u * w.transpose() * vt;
    let t: Vec3 = u.column(2).into_owned();
    let mut candidates = Vec::with_capacity(4);
    for (r, t) in [(r1, t), (r1, -t), (r2, t), (r2, -t)] {
        let pose = Pose::new(r, t).map_err(EgomotionError::Geometry)?;
        let count = corrs
            .iter()
            .filter(|c| {
                super::triangulate_pair(&pose, c)
                    .map(|(z_t, z_next)| z_t > 0.0 && z_next > 0.0)
                    .unwrap_or(false)
            })
            .count();
        candidates.push((count, pose));
    }
    let best = candidates
        .iter()
        .enumerate()
        .max_by_key(|(i, (count, _))| (*count, usize::MAX - i))
        .map(|(_, c)| c)
        .expect("four candidates");
    let runner_up =
        candidates.iter().map(|(count, _)| *count).filter(|&c| c != best.0).max().unwrap_or(0);
    let ties = candidates.iter().filter(|(count, _)| *count == best.0).count();
    if best.0 * 2 <= corrs.len() || ties > 1 || best.0 == runner_up {
        return Err(EgomotionError::AmbiguousCheirality);
    }
    Ok(best.1.clone())
}

/// Result of the continuous eight-point solve.
#[derive(Debug, Clone)]
pub struct ContinuousMotion {
    /// Rotational rate ω.
    pub omega: Vec3,
    /// Unit translational direction ν̂; zero when `nu_observable` is false.
    pub nu: Vec3,
    /// False when the flow field is explained by rotation alone: the
    /// translation direction is then unobservable (insufficient parallax)
    /// and `omega` is the rotation-only fit.
    pub nu_observable: bool,
}

/// Rotation rate that best explains the flows with zero translation,
/// solved from the linear dependence of the rotational flow on ω.
fn rotational_fit(flows: &[(NormalizedPoint, Flow2)]) -> Result<Vec3, EgomotionError> {
    let mut normal = Mat3::zeros();
    let mut rhs = Vec3::zeros();
    for (x, u) in flows {
        let basis = [
            rotational_flow(&Vec3::x(), x),
            rotational_flow(&Vec3::y(), x),
            rotational_flow(&Vec3::z(), x),
        ];
        for i in 0..3 {
            rhs[i] += basis[i].u * u.u + basis[i].v * u.v;
            for j in 0..3 {
                normal[(i, j)] += basis[i].u * basis[j].u + basis[i].v * basis[j].v;
            }
        }
    }
    normal
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .ok_or(EgomotionError::DegenerateConfiguration)
}

/// Rotation rate from the symmetric part of the continuous essential
/// matrix: solves 2S = ν·ωᵀ + ω·νᵀ − 2(ωᵀν)·I for ω by least squares,
/// given the unit translation direction ν.
fn omega_from_symmetric_part(nu: &Vec3, s: &Mat3) -> Vec3 {
    let pack = |m: &Mat3| {
        SVector::<f64, 6>::new(m[(0, 0)], m[(1, 1)], m[(2, 2)], m[(0, 1)], m[(0, 2)], m[(1, 2)])
    };
    let mut l = SMatrix::<f64, 6, 3>::zeros();
    for k in 0..3 {
        let mut e = Vec3::zeros();
        e[k] = 1.0;
        let col = nu * e.transpose() + e * nu.transpose() - Mat3::identity() * (2.0 * nu[k]);
        l.set_column(k, &pack(&col));
    }
    let normal = l.transpose() * l;
    let rhs = l.transpose() * pack(&(s * 2.0));
    normal.cholesky().map(|ch| ch.solve(&rhs)).unwrap_or_else(Vec3::zeros)
}

/// Continuous eight-point solve: twist (ω, ν̂) with unit translation
/// direction from ≥8 flow observations, via the stacked continuous
/// epipolar constraint (x̄×ū)ᵀ·ν + x̄ᵀ·S·x̄ = 0 in the unknowns (ν, S).
///
/// The translation sign is fixed by positive-depth voting over the flows.
/// A field explained by rotation alone (median rotation-compensated flow
/// below `cfg.parallax_min`) returns the rotation-only fit with
/// `nu_observable = false` instead of an error: the rotation estimate stays
/// valid when the translation is unobservable.
pub fn continuous_linear_solve(
    flows: &[(NormalizedPoint, Flow2)],
    cfg: &EightPointConfig,
) -> Result<ContinuousMotion, EgomotionError> {
    if flows.len() < 8 {
        return Err(EgomotionError::NotEnoughCorrespondences { needed: 8, got: flows.len() });
    }
    let omega_rot = rotational_fit(flows)?;
    let residual_flows: Vec<Flow2> = flows
        .iter()
        .map(|(x, u)| {
            let r = rotational_flow(&omega_rot, x);
            Flow2::new(u.u - r.u, u.v - r.v)
        })
        .collect();
    let median = median_of(residual_flows.iter().map(Flow2::norm).collect());
    if median < cfg.parallax_min {
        return Ok(ContinuousMotion { omega: omega_rot, nu: Vec3::zeros(), nu_observable: false });
    }
    let rows: Vec<[f64; 9]> = flows
        .iter()
        .map(|(x, u)| {
            let cr = x.homogeneous().cross(&Vec3::new(u.u, u.v, 0.0));
            let (x, y) = (x.x, x.y);
            [cr.x, cr.y, cr.z, x * x, y * y, 1.0, 2.0 * x * y, 2.0 * x, 2.0 * y]
        })
        .collect();
    let normal = sorted_normal_matrix(rows);
    // The flow-bearing columns shrink with distance (translational flow
    // goes as 1/Z) while the monomial columns stay O(1), so equilibrate
    // the columns first: the rank test must measure geometric diversity,
    // not signal magnitude.
    let mut scales = [0.0f64; 9];
    for (k, s) in scales.iter_mut().enumerate() {
        *s = normal[(k, k)].sqrt();
        if !(*s > 1e-150) {
            return Err(EgomotionError::DegenerateConfiguration);
        }
    }
    let mut balanced = normal;
    for i in 0..9 {
        for j in 0..9 {
            balanced[(i, j)] /= scales[i] * scales[j];
        }
    }
    let (values, vectors) = eigen9_sorted(&balanced);
    if values[7] < cfg.degen_ratio * cfg.degen_ratio * values[0] {
        return Err(EgomotionError::DegenerateConfiguration);
    }
    let v: [f64; 9] = std::array::from_fn(|k| vectors[8][k] / scales[k]);
    let nu_raw = Vec3::new(v[0], v[1], v[2]);
    let nu_norm = nu_raw.norm();
    if nu_norm < 1e-9 {
        return Err(EgomotionError::InsufficientParallax { median: nu_norm });
    }
    let mut nu = nu_raw / nu_norm;
    let s = Mat3::new(v[3], v[6], v[7], v[6], v[4], v[8], v[7], v[8], v[5]) / nu_norm;
    let omega = omega_from_symmetric_part(&nu, &s);
    // Resolve the overall sign: ω is invariant under (ν, S) → (−ν, −S), so
    // only ν needs the vote. Positive inverse depth means the residual flow
    // points along the translational field, not against it.
    let mut positive = 0usize;
    let mut counted = 0usize;
    for ((x, u), _) in flows.iter().zip(&residual_flows) {
        let r = rotational_flow(&omega, x);
        let resid = Flow2::new(u.u - r.u, u.v - r.v);
        let t = match translational_flow(&nu, x, 1.0) {
            Ok(t) => t,
            Err(_) => continue,
        };
        let denom = t.u * t.u + t.v * t.v;
        if denom < 1e-18 {
            continue;
        }
        counted += 1;
        if (resid.u * t.u + resid.v * t.v) / denom > 0.0 {
            positive += 1;
        }
    }
    if positive * 2 < counted {
        nu = -nu;
    }
    Ok(ContinuousMotion { omega, nu, nu_observable: true })
}
