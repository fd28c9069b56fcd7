//! Privacy-preserving visual localization with sphere clouds.
//!
//! A sphere cloud replaces every 3D map point by the unit bearing from the
//! map centroid towards it, diluted with fake bearings. Queries with ToF
//! depth are localized against it with p3P LO-RANSAC and LM refinement. The
//! [`attack`] module implements the density-based point recovery that line
//! clouds are vulnerable to and sphere clouds are not.

pub mod attack;
pub mod construction;
pub mod geometry;
pub mod io;
pub mod localize;
pub mod matching;
pub mod metrics;
pub mod pose;
pub mod rng;
pub mod scenegen;

pub use attack::{run_attack, AttackConfig, AttackError, AttackResult, AttackTarget, Bandwidth, Line3};
pub use construction::{
    build_sphere_cloud, build_uniform_line_cloud, ConstructionError, ConstructionParams, LineCloud, MapPoint,
    PointCloud, Provenance, ProvenanceSidecar, SphereCloud, SpherePoint,
};
pub use geometry::{
    Frame, FrameTag, GeometryError, Intrinsics, Pose, Rotation, UnitVec3, Vec2, Vec3,
};
pub use localize::{localize, Keypoint, LocalizeConfig, LocalizeError, Localization, Query};
pub use metrics::{aggregate_metrics, MetricsReport, QueryOutcome, Thresholds};
pub use pose::{estimate_pose, Correspondence, PoseError, PoseEstimate, RansacConfig};
pub use scenegen::{apply_noise, generate_scene, NoiseSpec, SceneLayout, SceneSpec, SyntheticScene};
