//! Epipolar and depth residuals, their Jacobians, and MSAC scoring.
//!
//! All functions take a pose mapping query coordinates into the sphere frame
//! (a world-to-query pose is inverted first). Jacobians are with respect to
//! the left increment `R ← exp([ω]ₓ) R`, `t ← t + δ`, ordered `(ω, δ)`.

use nalgebra::{Matrix3, SMatrix, Vector6};
use thiserror::Error;

use super::{q2w, Correspondence};
use crate::geometry::{essential_from_pose, skew, GeometryError, Pose, Vec3};

/// `|x̂_z|` at or below this leaves `x̃ = x̂ / |x̂_z|` undefined.
pub const NEAR_ZERO_Z: f64 = 1e-8;
/// Sine of the angle between the projected ray and projected line in the XZ plane.
pub const DEGENERATE_DET: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResidualError {
    #[error("sphere bearing has |z| ≤ {NEAR_ZERO_Z}")]
    NearZeroZ,
    #[error("epipolar line is at infinity")]
    DegenerateEpipolarLine,
    #[error("projected ray and projected line are parallel in the XZ plane")]
    DegenerateIntersection,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Row6 = SMatrix<f64, 1, 6>;

/// `x̃ = x̂ / |x̂_z|`.
fn z_normalized(c: &Correspondence) -> Result<Vec3, ResidualError> {
    let z = c.bearing.z.abs();
    if z <= NEAR_ZERO_Z {
        return Err(ResidualError::NearZeroZ);
    }
    Ok(c.bearing.into_inner() / z)
}

/// Signed epipolar distance `bᵀE x̃ / ‖(e₁ᵀx̃, e₂ᵀx̃)‖`, optionally with its gradient.
pub(super) fn epipolar_signed(
    c: &Correspondence,
    pose: &Pose,
    with_jacobian: bool,
) -> Result<(f64, Row6), ResidualError> {
    let x = z_normalized(c)?;
    let e = essential_from_pose(pose)?;
    let line = e.line(&x);
    let d2 = line.x * line.x + line.y * line.y;
    if d2 <= 1e-24 * line.norm_squared() || d2 == 0.0 {
        return Err(ResidualError::DegenerateEpipolarLine);
    }
    let d = d2.sqrt();
    let n = c.ray.dot(&line);
    let r = n / d;
    let mut jac = Row6::zeros();
    if with_jacobian {
        let rt: Matrix3<f64> = pose.rotation.matrix().transpose();
        let m = pose.translation.cross(&x);
        let dl_domega = rt * skew(&m);
        let dl_ddelta = -(rt * skew(&x));
        let dr_dl = c.ray / d - Vec3::new(line.x, line.y, 0.0) * (n / (d2 * d));
        let gw = dr_dl.transpose() * dl_domega;
        let gt = dr_dl.transpose() * dl_ddelta;
        jac.fixed_view_mut::<1, 3>(0, 0).copy_from(&gw);
        jac.fixed_view_mut::<1, 3>(0, 3).copy_from(&gt);
    }
    Ok((r, jac))
}

/// `β` from the XZ-plane intersection of the lifted ray and the sphere line,
/// optionally with its gradient.
pub(super) fn beta_with_jacobian(
    c: &Correspondence,
    pose: &Pose,
    with_jacobian: bool,
) -> Result<(f64, Row6), ResidualError> {
    let rt: Matrix3<f64> = pose.rotation.matrix().transpose();
    let xh = c.bearing.into_inner();
    let dir = rt * xh;
    let off = rt * pose.translation;
    let (x, z) = (c.p.x, c.p.z);

    // β (x, z) = α (dir_X, dir_Z) − (off_X, off_Z)
    let den = dir.x * z - x * dir.z;
    let scale = (x * x + z * z).sqrt() * (dir.x * dir.x + dir.z * dir.z).sqrt();
    if !(den.abs() > DEGENERATE_DET * scale) {
        return Err(ResidualError::DegenerateIntersection);
    }
    let num = off.x * dir.z - dir.x * off.z;
    let beta = num / den;

    let mut jac = Row6::zeros();
    if with_jacobian {
        let db_doff_x = dir.z / den;
        let db_doff_z = -dir.x / den;
        let db_ddir_x = (-off.z * den - num * z) / (den * den);
        let db_ddir_z = (off.x * den + num * x) / (den * den);

        let ddir_domega = rt * skew(&xh);
        let doff_domega = rt * skew(&pose.translation);
        let doff_ddelta = rt;
        for k in 0..3 {
            jac[k] = db_ddir_x * ddir_domega[(0, k)]
                + db_ddir_z * ddir_domega[(2, k)]
                + db_doff_x * doff_domega[(0, k)]
                + db_doff_z * doff_domega[(2, k)];
            jac[3 + k] = db_doff_x * doff_ddelta[(0, k)] + db_doff_z * doff_ddelta[(2, k)];
        }
    }
    Ok((beta, jac))
}

/// Squared point-to-epipolar-line distance in normalized query coordinates.
pub fn epipolar_residual(c: &Correspondence, pose: &Pose) -> Result<f64, ResidualError> {
    let pose = q2w(pose)?;
    let (r, _) = epipolar_signed(c, &pose, false)?;
    Ok(r * r)
}

/// Depth of the query point predicted by the pose: `β z_tof`.
pub fn predicted_depth(c: &Correspondence, pose: &Pose) -> Result<f64, ResidualError> {
    let pose = q2w(pose)?;
    let (beta, _) = beta_with_jacobian(c, &pose, false)?;
    Ok(beta * c.z_tof)
}

/// `(β − 1)²`.
pub fn depth_residual(c: &Correspondence, pose: &Pose) -> Result<f64, ResidualError> {
    let pose = q2w(pose)?;
    let (beta, _) = beta_with_jacobian(c, &pose, false)?;
    Ok((beta - 1.0) * (beta - 1.0))
}

/// `α = x̂ · (R p + t)`: positive when the lifted point lies along its bearing.
pub fn cheirality_depth(c: &Correspondence, pose: &Pose) -> Result<f64, GeometryError> {
    let pose = q2w(pose)?;
    Ok(c.bearing.dot(&pose.transform(&c.p)))
}

/// Whether both residuals are defined for `c` under `pose` (query-to-sphere).
pub(super) fn usable(c: &Correspondence, pose: &Pose) -> bool {
    epipolar_signed(c, pose, false).is_ok() && beta_with_jacobian(c, pose, false).is_ok()
}

/// `Σ (Lᵉ + λ Lᵈ)` over correspondences where both terms are defined.
pub fn total_cost(corrs: &[Correspondence], pose: &Pose, lambda: f64) -> Result<f64, super::PoseError> {
    let pose = q2w(pose)?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for c in corrs {
        let (Ok((re, _)), Ok((beta, _))) = (
            epipolar_signed(c, &pose, false),
            beta_with_jacobian(c, &pose, false),
        ) else {
            continue;
        };
        sum += re * re + lambda * (beta - 1.0) * (beta - 1.0);
        used += 1;
    }
    if used == 0 {
        return Err(super::PoseError::NoUsableCorrespondences);
    }
    Ok(sum)
}

/// Stacked residual pair `(rₑ, √λ (β − 1))` and its 2×6 Jacobian.
pub(super) fn residual_block(
    c: &Correspondence,
    pose: &Pose,
    sqrt_lambda: f64,
) -> Result<([f64; 2], [Row6; 2]), ResidualError> {
    let (re, je) = epipolar_signed(c, pose, true)?;
    let (beta, jb) = beta_with_jacobian(c, pose, true)?;
    Ok(([re, sqrt_lambda * (beta - 1.0)], [je, jb * sqrt_lambda]))
}

/// Inlier thresholds in normalized units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsacThresholds {
    /// `τ²_epipolar`, with `τ_epipolar` = pixel threshold / focal length.
    pub epipolar_sq: f64,
    /// `τ²_depth`.
    pub depth_sq: f64,
    pub lambda: f64,
}

impl MsacThresholds {
    /// `τ²_total = τ²_epipolar + λ τ²_depth`.
    pub fn total_sq(&self) -> f64 {
        self.epipolar_sq + self.lambda * self.depth_sq
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsacScore {
    pub score: f64,
    pub inlier_mask: Vec<bool>,
}

impl MsacScore {
    pub fn num_inliers(&self) -> usize {
        self.inlier_mask.iter().filter(|&&b| b).count()
    }
}

/// Truncated cost `Σ min(Lᵉ + λLᵈ, τ²_total)`; inliers satisfy
/// `Lᵉ ≤ τ²_epipolar`, `Lᵈ ≤ τ²_depth` and positive cheirality.
/// Undefined residuals and points behind their bearing cost the cap.
pub fn msac_score(corrs: &[Correspondence], pose: &Pose, th: &MsacThresholds) -> MsacScore {
    let cap = th.total_sq();
    let Ok(pose) = q2w(pose) else {
        return MsacScore {
            score: cap * corrs.len() as f64,
            inlier_mask: vec![false; corrs.len()],
        };
    };
    let mut score = 0.0;
    let mut inlier_mask = Vec::with_capacity(corrs.len());
    for c in corrs {
        let alpha = c.bearing.dot(&pose.transform(&c.p));
        let terms = epipolar_signed(c, &pose, false)
            .and_then(|(re, _)| beta_with_jacobian(c, &pose, false).map(|(b, _)| (re * re, (b - 1.0) * (b - 1.0))));
        match terms {
            Ok((le, ld)) if alpha > 0.0 => {
                score += (le + th.lambda * ld).min(cap);
                inlier_mask.push(le <= th.epipolar_sq && ld <= th.depth_sq);
            }
            _ => {
                score += cap;
                inlier_mask.push(false);
            }
        }
    }
    MsacScore { score, inlier_mask }
}

/// Gradient of `Σ (Lᵉ + λLᵈ)` over the usable correspondences.
pub(super) fn gradient(corrs: &[Correspondence], pose: &Pose, lambda: f64) -> Vector6<f64> {
    let sl = lambda.sqrt();
    let mut g = Vector6::zeros();
    for c in corrs {
        if let Ok((r, j)) = residual_block(c, pose, sl) {
            g += (j[0] * (2.0 * r[0]) + j[1] * (2.0 * r[1])).transpose();
        }
    }
    g
}
