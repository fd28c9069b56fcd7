//! Rigid poses, pinhole intrinsics and the two-view quantities shared by the
//! construction, localization and attack code.
//!
//! Conventions:
//! - A [`Pose`] maps points `x ↦ R x + t` from its source frame to its target
//!   frame. The frame tag is explicit and flips on inversion.
//! - Angles are radians internally; the error metrics report degrees.

use nalgebra::{Matrix3, Rotation3, Unit, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;
pub type UnitVec3 = Unit<Vector3<f64>>;
pub type Rotation = Rotation3<f64>;

/// Tolerance on `|‖b‖ − 1|` for anything stored as a unit bearing.
pub const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("cannot compose {outer:?} after {inner:?}: frames do not chain")]
    IncompatibleFrames { outer: FrameTag, inner: FrameTag },
    #[error("expected a {expected:?} pose, got {found:?}")]
    WrongFrame { expected: FrameTag, found: FrameTag },
    #[error("epipolar geometry undefined for zero translation")]
    ZeroTranslation,
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Frame {
    World,
    Query,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameTag {
    QueryToWorld,
    WorldToQuery,
    WorldToWorld,
    QueryToQuery,
}

impl FrameTag {
    pub fn from_frames(source: Frame, target: Frame) -> Self {
        match (source, target) {
            (Frame::Query, Frame::World) => FrameTag::QueryToWorld,
            (Frame::World, Frame::Query) => FrameTag::WorldToQuery,
            (Frame::World, Frame::World) => FrameTag::WorldToWorld,
            (Frame::Query, Frame::Query) => FrameTag::QueryToQuery,
        }
    }

    pub fn source(self) -> Frame {
        match self {
            FrameTag::QueryToWorld | FrameTag::QueryToQuery => Frame::Query,
            FrameTag::WorldToQuery | FrameTag::WorldToWorld => Frame::World,
        }
    }

    pub fn target(self) -> Frame {
        match self {
            FrameTag::QueryToWorld | FrameTag::WorldToWorld => Frame::World,
            FrameTag::WorldToQuery | FrameTag::QueryToQuery => Frame::Query,
        }
    }

    pub fn flipped(self) -> Self {
        Self::from_frames(self.target(), self.source())
    }
}

/// Rigid transform `x ↦ R x + t` between two tagged frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vec3,
    pub frame: FrameTag,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vec3, frame: FrameTag) -> Self {
        Self {
            rotation,
            translation,
            frame,
        }
    }

    pub fn identity(frame: FrameTag) -> Self {
        Self::new(Rotation::identity(), Vec3::zeros(), frame)
    }

    pub fn transform(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    /// `[Rᵀ | −Rᵀt]` with the frame tag flipped.
    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.inverse();
        Pose::new(rt, -(rt * self.translation), self.frame.flipped())
    }

    /// Returns this pose expressed with the given tag, inverting if needed.
    pub fn as_frame(&self, frame: FrameTag) -> Result<Pose, GeometryError> {
        if self.frame == frame {
            Ok(*self)
        } else if self.frame.flipped() == frame {
            Ok(self.inverse())
        } else {
            Err(GeometryError::WrongFrame {
                expected: frame,
                found: self.frame,
            })
        }
    }

    /// Applies an axis-angle increment on the left: `R ← exp([ω]ₓ) R`, `t ← t + δ`.
    pub fn perturbed(&self, omega: &Vec3, delta_t: &Vec3) -> Pose {
        let rotation = orthonormalize(&(Rotation::new(*omega) * self.rotation).into_inner());
        Pose::new(rotation, self.translation + delta_t, self.frame)
    }
}

/// `(a ∘ b)(x) = a(b(x))`; `a`'s source frame must be `b`'s target frame.
pub fn compose(a: &Pose, b: &Pose) -> Result<Pose, GeometryError> {
    if a.frame.source() != b.frame.target() {
        return Err(GeometryError::IncompatibleFrames {
            outer: a.frame,
            inner: b.frame,
        });
    }
    Ok(Pose::new(
        a.rotation * b.rotation,
        a.rotation * b.translation + a.translation,
        FrameTag::from_frames(b.frame.source(), a.frame.target()),
    ))
}

pub fn invert(p: &Pose) -> Pose {
    p.inverse()
}

/// Nearest rotation to `m` in the Frobenius sense (polar decomposition via SVD).
pub fn orthonormalize(m: &Matrix3<f64>) -> Rotation {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    Rotation::from_matrix_unchecked(r)
}

pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Ideal pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if ![self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("intrinsics"));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics("zero image size".into()));
        }
        Ok(())
    }

    /// `K⁻¹ [u, 1]ᵀ`.
    pub fn normalized(&self, u: &Vec2) -> Vec3 {
        Vec3::new((u.x - self.cx) / self.fx, (u.y - self.cy) / self.fy, 1.0)
    }

    pub fn project(&self, p: &Vec3) -> Vec2 {
        Vec2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Geometric mean of the two focal lengths.
    pub fn mean_focal(&self) -> f64 {
        (self.fx * self.fy).sqrt()
    }

    pub fn contains(&self, u: &Vec2) -> bool {
        u.x >= 0.0 && u.y >= 0.0 && u.x <= self.width as f64 && u.y <= self.height as f64
    }
}

/// Essential matrix relating sphere-cloud bearings to query rays:
/// `bᵀ E x̂ = 0` with `b = K⁻¹[u, 1]ᵀ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix(pub Matrix3<f64>);

impl EssentialMatrix {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Epipolar line `E x` in normalized query coordinates.
    pub fn line(&self, x: &Vec3) -> Vec3 {
        self.0 * x
    }

    pub fn singular_values(&self) -> Vec3 {
        let mut s = self.0.singular_values();
        s.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
        s
    }
}

/// `E = Rᵀ[t]ₓ` for a query-to-world pose.
pub fn essential_from_pose(p: &Pose) -> Result<EssentialMatrix, GeometryError> {
    if p.frame != FrameTag::QueryToWorld {
        return Err(GeometryError::WrongFrame {
            expected: FrameTag::QueryToWorld,
            found: p.frame,
        });
    }
    if p.translation.norm() <= 1e-12 {
        return Err(GeometryError::ZeroTranslation);
    }
    Ok(EssentialMatrix(
        p.rotation.matrix().transpose() * skew(&p.translation),
    ))
}

/// `p = z K⁻¹ [u, 1]ᵀ`.
pub fn lift_keypoint(u: &Vec2, z_tof: f64, k: &Intrinsics) -> Result<Vec3, GeometryError> {
    if !(u.x.is_finite() && u.y.is_finite() && z_tof.is_finite()) {
        return Err(GeometryError::NonFinite("keypoint"));
    }
    if z_tof <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(z_tof));
    }
    Ok(k.normalized(u) * z_tof)
}

/// Geodesic angle of `R R_gtᵀ`, in degrees.
pub fn rotation_error(r: &Rotation, r_gt: &Rotation) -> f64 {
    rotation_angle(&(r * r_gt.inverse())).to_degrees()
}

/// Rotation angle in radians, accurate near 0 and π.
pub fn rotation_angle(r: &Rotation) -> f64 {
    let m = r.matrix();
    let cos = 0.5 * (m.trace() - 1.0);
    let sin = 0.5
        * Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm();
    sin.atan2(cos)
}

pub fn translation_error(t: &Vec3, t_gt: &Vec3) -> f64 {
    (t - t_gt).norm()
}
