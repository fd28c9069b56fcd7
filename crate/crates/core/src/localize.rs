//! End-to-end localization of one query image against a sphere cloud.

use thiserror::Error;

use crate::construction::SphereCloud;
use crate::geometry::{FrameTag, GeometryError, Intrinsics, Pose, Vec2, Vec3};
use crate::matching::{match_descriptors, MatchError, DEFAULT_RATIO};
use crate::pose::{estimate_pose, Correspondence, PoseError, PoseEstimate, RansacConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub u: Vec2,
    pub z_tof: f64,
    pub descriptor: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub intrinsics: Intrinsics,
    pub keypoints: Vec<Keypoint>,
    /// World-to-query ground truth, when known.
    pub gt_pose: Option<Pose>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocalizeError {
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error("keypoint {index}: {source}")]
    Keypoint { index: usize, source: GeometryError },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizeConfig {
    pub ransac: RansacConfig,
    pub ratio: f32,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self {
            ransac: RansacConfig::default(),
            ratio: DEFAULT_RATIO,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    /// World-to-query pose in map coordinates.
    pub pose: Pose,
    /// Raw estimate in the sphere frame.
    pub estimate: PoseEstimate,
    pub num_matches: usize,
}

/// Moves a world-to-query pose from the sphere frame (centre at the origin)
/// to map coordinates.
pub fn sphere_to_world(pose: &Pose, centre: &Vec3) -> Result<Pose, GeometryError> {
    let p = pose.as_frame(FrameTag::WorldToQuery)?;
    Ok(Pose::new(p.rotation, p.translation - p.rotation * centre, FrameTag::WorldToQuery))
}

/// Inverse of [`sphere_to_world`].
pub fn world_to_sphere(pose: &Pose, centre: &Vec3) -> Result<Pose, GeometryError> {
    let p = pose.as_frame(FrameTag::WorldToQuery)?;
    Ok(Pose::new(p.rotation, p.translation + p.rotation * centre, FrameTag::WorldToQuery))
}

pub fn correspondences(query: &Query, sc: &SphereCloud, ratio: f32) -> Result<Vec<Correspondence>, LocalizeError> {
    let descs: Vec<&[f32]> = query.keypoints.iter().map(|k| k.descriptor.as_slice()).collect();
    match_descriptors(&descs, sc, ratio)?
        .into_iter()
        .map(|(qi, si)| {
            let kp = &query.keypoints[qi];
            Correspondence::new(kp.u, kp.z_tof, sc.points[si].bearing, &query.intrinsics)
                .map_err(|source| LocalizeError::Keypoint { index: qi, source })
        })
        .collect()
}

pub fn localize(query: &Query, sc: &SphereCloud, cfg: &LocalizeConfig) -> Result<Localization, LocalizeError> {
    let corrs = correspondences(query, sc, cfg.ratio)?;
    let estimate = estimate_pose(&corrs, &query.intrinsics, &cfg.ransac)?;
    Ok(Localization {
        pose: sphere_to_world(&estimate.pose, &sc.centre)?,
        estimate,
        num_matches: corrs.len(),
    })
}

impl From<GeometryError> for LocalizeError {
    fn from(e: GeometryError) -> Self {
        LocalizeError::Pose(PoseError::Geometry(e))
    }
}
