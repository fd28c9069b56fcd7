//! Depth-guided absolute pose estimation against a sphere cloud.
//!
//! Query keypoints are lifted to 3D with their ToF depth, then aligned with
//! the sphere bearings: `α x̂ = R p + t`, where `[R | t]` maps the query frame
//! into the sphere frame (sphere centre at the origin). Hypotheses come from a
//! p3P solver, are scored with a truncated epipolar + depth cost, and refined
//! with Levenberg–Marquardt.

mod p3p;
mod ransac;
mod refine;
mod residuals;

pub use p3p::{cheirality_filter, p3p_solve, P3P_ALIGNMENT_TOL};
pub use ransac::{estimate_pose, PoseEstimate, RansacConfig};
pub use refine::{cost_gradient, refine_pose, refine_pose_with, LmOptions, RefineReport};
pub use residuals::{
    cheirality_depth, depth_residual, epipolar_residual, msac_score, predicted_depth, total_cost,
    MsacScore, MsacThresholds, ResidualError, DEGENERATE_DET, NEAR_ZERO_Z,
};

use thiserror::Error;

use crate::geometry::{lift_keypoint, GeometryError, Intrinsics, Pose, UnitVec3, Vec2, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    #[error("need at least {needed} correspondences, got {found}")]
    TooFewCorrespondences { needed: usize, found: usize },
    #[error("refinement needs at least 4 usable correspondences, got {0}")]
    InsufficientInliers(usize),
    #[error("no hypothesis reached 4 inliers (best had {best_inliers})")]
    NoConsensus { best_inliers: usize },
    #[error("no usable correspondences for the cost")]
    NoUsableCorrespondences,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// One 2D keypoint with ToF depth matched to a sphere bearing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub u: Vec2,
    pub z_tof: f64,
    pub bearing: UnitVec3,
    /// Lifted keypoint `z K⁻¹[u, 1]ᵀ`.
    pub p: Vec3,
    /// Normalized ray `K⁻¹[u, 1]ᵀ`.
    pub ray: Vec3,
}

impl Correspondence {
    pub fn new(u: Vec2, z_tof: f64, bearing: UnitVec3, k: &Intrinsics) -> Result<Self, GeometryError> {
        let p = lift_keypoint(&u, z_tof, k)?;
        Ok(Self {
            u,
            z_tof,
            bearing,
            p,
            ray: k.normalized(&u),
        })
    }
}

/// Residual helpers require the query-to-sphere direction.
fn q2w(pose: &Pose) -> Result<Pose, GeometryError> {
    pose.as_frame(crate::geometry::FrameTag::QueryToWorld)
}
