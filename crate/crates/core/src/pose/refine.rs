//! Levenberg–Marquardt refinement of `Σ (Lᵉ + λLᵈ)` over `(R, t)`.

use nalgebra::{Matrix6, Vector3, Vector6};

use super::residuals::{gradient, residual_block, usable};
use super::{q2w, Correspondence, PoseError};
use crate::geometry::{FrameTag, Pose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub gradient_tol: f64,
    pub step_tol: f64,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gradient_tol: 1e-10,
            step_tol: 1e-12,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineReport {
    /// Same frame tag as the initial pose.
    pub pose: Pose,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
}

pub fn refine_pose(corrs: &[Correspondence], init: &Pose, lambda: f64) -> Result<Pose, PoseError> {
    refine_pose_with(corrs, init, lambda, &LmOptions::default()).map(|r| r.pose)
}

/// Correspondences whose residuals are undefined at `init` are left out for
/// the whole run; a trial step that makes any kept residual undefined is
/// rejected.
pub fn refine_pose_with(
    corrs: &[Correspondence],
    init: &Pose,
    lambda: f64,
    opts: &LmOptions,
) -> Result<RefineReport, PoseError> {
    let start = q2w(init)?;
    let active: Vec<Correspondence> = corrs.iter().filter(|c| usable(c, &start)).copied().collect();
    if active.len() < 4 {
        return Err(PoseError::InsufficientInliers(active.len()));
    }
    let sl = lambda.sqrt();

    let cost_of = |pose: &Pose| -> Option<f64> {
        let mut s = 0.0;
        for c in &active {
            let (r, _) = residual_block(c, pose, sl).ok()?;
            s += r[0] * r[0] + r[1] * r[1];
        }
        Some(s)
    };

    let mut pose = start;
    let initial_cost = cost_of(&pose).ok_or(PoseError::NoUsableCorrespondences)?;
    let mut cost = initial_cost;
    let mut mu = opts.initial_damping;
    let mut iterations = 0;

    'outer: while iterations < opts.max_iterations {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for c in &active {
            let (r, j) = residual_block(c, &pose, sl).expect("active residual became undefined");
            for k in 0..2 {
                jtj += j[k].transpose() * j[k];
                jtr += j[k].transpose() * r[k];
            }
        }
        if jtr.amax() <= opts.gradient_tol {
            break;
        }
        loop {
            iterations += 1;
            let mut damped = jtj;
            for k in 0..6 {
                damped[(k, k)] += mu;
            }
            let Some(step) = damped.cholesky().map(|ch| ch.solve(&(-jtr))) else {
                mu *= 10.0;
                if iterations >= opts.max_iterations {
                    break 'outer;
                }
                continue;
            };
            if step.norm() <= opts.step_tol {
                break 'outer;
            }
            let omega: Vector3<f64> = step.fixed_rows::<3>(0).into();
            let delta: Vector3<f64> = step.fixed_rows::<3>(3).into();
            let trial = pose.perturbed(&omega, &delta);
            match cost_of(&trial) {
                Some(c) if c < cost => {
                    pose = trial;
                    cost = c;
                    mu = (mu * 0.1).max(1e-12);
                    break;
                }
                _ => {
                    mu *= 10.0;
                    if mu > 1e16 || iterations >= opts.max_iterations {
                        break 'outer;
                    }
                }
            }
        }
    }

    let pose = if init.frame == FrameTag::QueryToWorld {
        pose
    } else {
        pose.as_frame(init.frame)?
    };
    Ok(RefineReport {
        pose,
        initial_cost,
        final_cost: cost,
        iterations,
    })
}

/// Analytic gradient of `Σ (Lᵉ + λLᵈ)` with respect to the left increment
/// `(ω, δ)` of a query-to-sphere pose. Correspondences with undefined
/// residuals are skipped, matching [`super::total_cost`].
pub fn cost_gradient(corrs: &[Correspondence], pose: &Pose, lambda: f64) -> Result<[f64; 6], PoseError> {
    let pose = q2w(pose)?;
    let g = gradient(corrs, &pose, lambda);
    Ok([g[0], g[1], g[2], g[3], g[4], g[5]])
}
