//! Two-frame bundle adjustment: damped Gauss-Newton refinement of the
//! relative pose and/or per-point depths under the reprojection objective
//! θ = Σ wⱼ·‖x̃_next,ⱼ − π(ΔR·Zⱼ·x̄_t,ⱼ + ΔT)‖².

use nalgebra::{DMatrix, DVector};

use super::{Correspondence, EgomotionError};
use crate::geometry::{exp_rotation, skew, Pose, Vec3, MIN_DEPTH};

/// Which variables the adjustment frees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaMode {
    /// Pose only; depths stay at their initial values.
    MotionOnly,
    /// Depths only; the pose stays fixed.
    StructureOnly,
    /// Pose and depths jointly. The monocular gauge direction (common scale
    /// of translation and depths) is unconstrained; the damping pins it.
    Full,
}

/// A two-frame adjustment problem: correspondences, initialization, mode,
/// and iteration controls.
#[derive(Debug, Clone)]
pub struct BaProblem {
    pub correspondences: Vec<Correspondence>,
    /// Initial frame-t → frame-next pose.
    pub pose: Pose,
    /// Initial frame-t depths, one per correspondence, all positive.
    pub depths: Vec<f64>,
    pub mode: BaMode,
    /// Initial Levenberg damping λ added to the normal-equation diagonal.
    pub damping: f64,
    pub max_iterations: usize,
    /// Relative objective decrease below which iteration stops.
    pub tolerance: f64,
}

impl BaProblem {
    /// Problem with default controls (damping 1e-3, 50 iterations,
    /// tolerance 1e-10). Validates that depths pair up with correspondences,
    /// are positive, that weights are non-negative, and that the mode has
    /// enough observations to determine its free variables.
    pub fn new(
        correspondences: Vec<Correspondence>,
        pose: Pose,
        depths: Vec<f64>,
        mode: BaMode,
    ) -> Result<Self, EgomotionError> {
        if depths.len() != correspondences.len() {
            return Err(EgomotionError::BadProblem(format!(
                "{} depths for {} correspondences",
                depths.len(),
                correspondences.len()
            )));
        }
        if let Some((i, z)) = depths.iter().enumerate().find(|(_, z)| **z <= 0.0) {
            return Err(EgomotionError::BadProblem(format!("depth {z} at index {i}")));
        }
        if let Some(c) = correspondences.iter().find(|c| c.weight < 0.0) {
            return Err(EgomotionError::BadProblem(format!(
                "negative weight on feature {}",
                c.id
            )));
        }
        let needed = match mode {
            BaMode::MotionOnly => 3,
            BaMode::StructureOnly => 1,
            BaMode::Full => 6,
        };
        if correspondences.len() < needed {
            return Err(EgomotionError::NotEnoughCorrespondences {
                needed,
                got: correspondences.len(),
            });
        }
        Ok(BaProblem {
            correspondences,
            pose,
            depths,
            mode,
            damping: 1e-3,
            max_iterations: 50,
            tolerance: 1e-10,
        })
    }

    fn dof(&self) -> usize {
        match self.mode {
            BaMode::MotionOnly => 6,
            BaMode::StructureOnly => self.correspondences.len(),
            BaMode::Full => 6 + self.correspondences.len(),
        }
    }
}

/// Refined estimate with the accepted-step objective trace.
#[derive(Debug, Clone)]
pub struct BaResult {
    pub pose: Pose,
    pub depths: Vec<f64>,
    /// Refined frame-t points Zⱼ·x̄ⱼ.
    pub points: Vec<Vec3>,
    /// Objective after each accepted step, starting with the initial value;
    /// non-increasing by construction.
    pub objective_trace: Vec<f64>,
    /// Accepted iterations.
    pub iterations: usize,
    /// True when the relative objective decrease fell below tolerance
    /// (rather than the iteration budget running out).
    pub converged: bool,
}

#[derive(Clone)]
struct State {
    pose: Pose,
    /// Inverse depths: better conditioned than depths for far points, whose
    /// image evidence vanishes quadratically with distance.
    inv_depths: Vec<f64>,
}

fn apply_step(mode: BaMode, state: &State, step: &DVector<f64>) -> Option<State> {
    let mut next = state.clone();
    let depth_base = match mode {
        BaMode::MotionOnly => usize::MAX,
        BaMode::StructureOnly => 0,
        BaMode::Full => 6,
    };
    if mode != BaMode::StructureOnly {
        let d_omega = Vec3::new(step[0], step[1], step[2]);
        let d_t = Vec3::new(step[3], step[4], step[5]);
        let rot = exp_rotation(&d_omega) * state.pose.rotation();
        next.pose = Pose::new(rot, state.pose.translation() + d_t).ok()?;
    }
    if mode != BaMode::MotionOnly {
        for (j, q) in next.inv_depths.iter_mut().enumerate() {
            *q += step[depth_base + j];
            if *q <= 1e-12 || !q.is_finite() {
                return None;
            }
        }
    }
    Some(next)
}

/// Weighted residual vector; `None` when any point is infeasible (behind
/// the camera) or the objective is not finite.
fn residuals(problem: &BaProblem, state: &State) -> Option<DVector<f64>> {
    let mut r = DVector::zeros(2 * problem.correspondences.len());
    for (j, c) in problem.correspondences.iter().enumerate() {
        let y = state.pose.transform(&(c.x_t.homogeneous() / state.inv_depths[j]));
        if y.z < MIN_DEPTH {
            return None;
        }
        let w = c.weight.sqrt();
        r[2 * j] = w * (y.x / y.z - c.x_next.x);
        r[2 * j + 1] = w * (y.y / y.z - c.x_next.y);
    }
    if !r.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some(r)
}

/// Analytic Jacobian of [`residuals`] with respect to the mode's free
/// variables, in the layout [δω, δt, δq…]: rotation increments compose
/// exp(δω) on the left of R, translation adds, inverse depths add.
fn jacobian(problem: &BaProblem, state: &State) -> DMatrix<f64> {
    let n = problem.correspondences.len();
    let mut jac = DMatrix::zeros(2 * n, problem.dof());
    let depth_base = match problem.mode {
        BaMode::MotionOnly => usize::MAX,
        BaMode::StructureOnly => 0,
        BaMode::Full => 6,
    };
    for (j, c) in problem.correspondences.iter().enumerate() {
        let z = 1.0 / state.inv_depths[j];
        let rotated = state.pose.rotation() * (c.x_t.homogeneous() * z);
        let y = rotated + state.pose.translation();
        let w = c.weight.sqrt();
        // ∂π/∂Y, scaled by the residual weight.
        let inv_z = 1.0 / y.z;
        let proj = nalgebra::Matrix2x3::new(
            w * inv_z,
            0.0,
            -w * y.x * inv_z * inv_z,
            0.0,
            w * inv_z,
            -w * y.y * inv_z * inv_z,
        );
        if problem.mode != BaMode::StructureOnly {
            // ∂Y/∂δω = −(R·Z·x̄)^, ∂Y/∂δt = I.
            let block = proj * (-skew(&rotated));
            for (col, m) in block.column_iter().enumerate() {
                jac[(2 * j, col)] = m[0];
                jac[(2 * j + 1, col)] = m[1];
            }
            for col in 0..3 {
                jac[(2 * j, 3 + col)] = proj[(0, col)];
                jac[(2 * j + 1, 3 + col)] = proj[(1, col)];
            }
        }
        if problem.mode != BaMode::MotionOnly {
            // ∂Y/∂q = −Z²·R·x̄.
            let dq = proj * (rotated * -z);
            jac[(2 * j, depth_base + j)] = dq[0];
            jac[(2 * j + 1, depth_base + j)] = dq[1];
        }
    }
    jac
}

const DAMPING_MAX: f64 = 1e12;
const DAMPING_MIN: f64 = 1e-12;
const OBJECTIVE_FLOOR: f64 = 1e-30;

/// Damped Gauss-Newton on the reprojection objective.
///
/// Steps that do not decrease the objective are rejected and retried at
/// tenfold damping, so the accepted-step trace is non-increasing; a step
/// must be found before the damping exceeds 1e12 or the solve reports
/// divergence. Iteration stops when the relative objective decrease falls
/// below `problem.tolerance`.
pub fn bundle_adjust(problem: &BaProblem) -> Result<BaResult, EgomotionError> {
    // Re-validate: the struct is constructible by hand.
    let checked = BaProblem::new(
        problem.correspondences.clone(),
        problem.pose.clone(),
        problem.depths.clone(),
        problem.mode,
    )?;
    drop(checked);
    if !(problem.damping > 0.0) || !(problem.tolerance > 0.0) || problem.max_iterations == 0 {
        return Err(EgomotionError::BadProblem(
            "damping, tolerance, and max_iterations must be positive".into(),
        ));
    }
    let mut state = State {
        pose: problem.pose.clone(),
        inv_depths: problem.depths.iter().map(|z| 1.0 / z).collect(),
    };
    let mut residual = residuals(problem, &state).ok_or_else(|| {
        EgomotionError::BadProblem("initialization places a point behind the camera".into())
    })?;
    let mut objective = residual.norm_squared();
    let mut trace = vec![objective];
    let mut lambda = problem.damping;
    let mut iterations = 0;
    let mut converged = objective < OBJECTIVE_FLOOR;
    while !converged && iterations < problem.max_iterations {
        let jac = jacobian(problem, &state);
        let gradient = jac.transpose() * &residual;
        let hessian = jac.transpose() * &jac;
        let (next_state, next_residual, next_objective) = loop {
            let mut damped = hessian.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += lambda;
            }
            let step = damped
                .cholesky()
                .map(|ch| ch.solve(&(-&gradient)))
                .ok_or(EgomotionError::RankDeficientNormalEquations)?;
            let trial = apply_step(problem.mode, &state, &step);
            let outcome = trial.and_then(|s| {
                let r = residuals(problem, &s)?;
                let obj = r.norm_squared();
                Some((s, r, obj))
            });
            match outcome {
                Some((s, r, obj)) if obj <= objective => {
                    lambda = (lambda / 10.0).max(DAMPING_MIN);
                    break (s, r, obj);
                }
                _ => {
                    lambda *= 10.0;
                    if lambda > DAMPING_MAX {
                        return Err(EgomotionError::Diverged(lambda));
                    }
                }
            }
        };
        let decrease = objective - next_objective;
        state = next_state;
        residual = next_residual;
        objective = next_objective;
        trace.push(objective);
        iterations += 1;
        converged = decrease <= problem.tolerance * objective.max(OBJECTIVE_FLOOR)
            || objective < OBJECTIVE_FLOOR;
    }
    let depths: Vec<f64> = state.inv_depths.iter().map(|q| 1.0 / q).collect();
    let points = problem
        .correspondences
        .iter()
        .zip(&depths)
        .map(|(c, z)| c.x_t.backproject(*z))
        .collect();
    Ok(BaResult {
        pose: state.pose,
        depths,
        points,
        objective_trace: trace,
        iterations,
        converged,
    })
}
