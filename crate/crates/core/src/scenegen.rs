//! Seeded synthetic scenes with exact ground truth.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::construction::{MapPoint, PointCloud, SphereCloud};
use crate::geometry::{FrameTag, GeometryError, Intrinsics, Pose, Rotation, Vec2, Vec3};
use crate::localize::{Keypoint, Query};
use crate::pose::Correspondence;
use crate::rng::{self, Stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("need at least 10 points, got {0}")]
    TooFewPoints(usize),
    #[error("need at least one camera")]
    NoCameras,
    #[error("extent must be positive and finite, got {0}")]
    InvalidExtent(f64),
    #[error("descriptor dimension must be positive")]
    ZeroDescriptorDim,
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("invalid noise: {0}")]
    InvalidNoise(String),
    #[error("camera {camera}: observation refers to point {index}, cloud has {len}")]
    IndexOutOfRange { camera: usize, index: usize, len: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// How points are spread over the box `[0, extent]³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneLayout {
    UniformBox,
    /// Compact clusters (objects) whose centres lie on the box walls, floor
    /// and ceiling; `spread` is the cluster standard deviation as a fraction
    /// of the extent.
    Room { clusters: usize, spread: f64 },
}

impl SceneLayout {
    pub const ROOM: SceneLayout = SceneLayout::Room {
        clusters: 40,
        spread: 0.01,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub n_points: usize,
    pub n_cameras: usize,
    pub extent: f64,
    pub descriptor_dim: usize,
    pub layout: SceneLayout,
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(n_points: usize, n_cameras: usize, extent: f64, descriptor_dim: usize, seed: u64) -> Self {
        Self {
            n_points,
            n_cameras,
            extent,
            descriptor_dim,
            layout: SceneLayout::UniformBox,
            seed,
        }
    }

    pub fn with_layout(mut self, layout: SceneLayout) -> Self {
        self.layout = layout;
        self
    }

    fn validate(&self) -> Result<(), SceneError> {
        if self.n_points < 10 {
            return Err(SceneError::TooFewPoints(self.n_points));
        }
        if self.n_cameras == 0 {
            return Err(SceneError::NoCameras);
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return Err(SceneError::InvalidExtent(self.extent));
        }
        if self.descriptor_dim == 0 {
            return Err(SceneError::ZeroDescriptorDim);
        }
        if let SceneLayout::Room { clusters, spread } = self.layout {
            if clusters == 0 || !(spread >= 0.0 && spread.is_finite()) {
                return Err(SceneError::InvalidLayout(format!(
                    "room needs clusters > 0 and spread >= 0 (clusters={clusters}, spread={spread})"
                )));
            }
        }
        Ok(())
    }
}

/// One keypoint of a synthetic query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    /// Point that produced the keypoint.
    pub point_index: usize,
    /// Point whose descriptor the keypoint carries; differs from
    /// `point_index` for injected outliers.
    pub matched_index: usize,
    pub u: Vec2,
    pub depth: f64,
}

impl Observation {
    pub fn is_outlier(&self) -> bool {
        self.point_index != self.matched_index
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCamera {
    /// World-to-query.
    pub pose: Pose,
    pub intrinsics: Intrinsics,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub point_cloud: PointCloud,
    pub cameras: Vec<SyntheticCamera>,
    pub extent: f64,
}

impl SyntheticScene {
    /// Length of the box diagonal.
    pub fn diameter(&self) -> f64 {
        self.extent * 3f64.sqrt()
    }
}

pub fn default_intrinsics() -> Intrinsics {
    Intrinsics {
        fx: 525.0,
        fy: 525.0,
        cx: 319.5,
        cy: 239.5,
        width: 640,
        height: 480,
    }
}

fn gaussian3(rng: &mut impl Rng) -> Vec3 {
    Vec3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

fn sample_positions(spec: &SceneSpec) -> Vec<Vec3> {
    let mut rng = rng::stream(spec.seed, Stream::ScenePoints);
    let e = spec.extent;
    match spec.layout {
        SceneLayout::UniformBox => (0..spec.n_points)
            .map(|_| Vec3::new(rng.random::<f64>() * e, rng.random::<f64>() * e, rng.random::<f64>() * e))
            .collect(),
        SceneLayout::Room { clusters, spread } => {
            let centres: Vec<Vec3> = (0..clusters)
                .map(|_| {
                    let face = rng.random_range(0..6usize);
                    let mut c = Vec3::new(rng.random::<f64>() * e, rng.random::<f64>() * e, rng.random::<f64>() * e);
                    c[face % 3] = if face < 3 { 0.0 } else { e };
                    c
                })
                .collect();
            (0..spec.n_points)
                .map(|i| centres[i % clusters] + gaussian3(&mut rng) * (spread * e))
                .collect()
        }
    }
}

fn random_unit_descriptor(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| (x / n) as f32).collect();
        }
    }
}

/// World-to-camera pose at `eye` looking at `target`, world `+z` up,
/// camera `x` right, `y` down, `z` forward.
pub fn look_at(eye: &Vec3, target: &Vec3) -> Pose {
    let f = (target - eye).normalize();
    let up = if f.cross(&Vec3::z()).norm() < 1e-6 {
        Vec3::y()
    } else {
        Vec3::z()
    };
    let x = f.cross(&up).normalize();
    let y = f.cross(&x);
    let r = Rotation::from_matrix_unchecked(nalgebra::Matrix3::from_rows(&[
        x.transpose(),
        y.transpose(),
        f.transpose(),
    ]));
    Pose::new(r, -(r * eye), FrameTag::WorldToQuery)
}

fn sample_cameras(spec: &SceneSpec) -> Vec<Pose> {
    let mut rng = rng::stream(spec.seed, Stream::SceneCameras);
    let e = spec.extent;
    let centre = Vec3::repeat(0.5 * e);
    (0..spec.n_cameras)
        .map(|i| {
            let phi = std::f64::consts::TAU * (i as f64 + rng.random_range(-0.25..0.25)) / spec.n_cameras as f64;
            let radius = e * rng.random_range(0.25..0.35);
            let eye = centre + Vec3::new(radius * phi.cos(), radius * phi.sin(), e * rng.random_range(-0.1..0.1));
            let target = centre + Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)) * e;
            look_at(&eye, &target)
        })
        .collect()
}

fn observe(points: &[MapPoint], pose: &Pose, k: &Intrinsics, min_depth: f64) -> Vec<Observation> {
    points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let q = pose.transform(&p.position);
            if q.z <= min_depth {
                return None;
            }
            let u = k.project(&q);
            k.contains(&u).then_some(Observation {
                point_index: i,
                matched_index: i,
                u,
                depth: q.z,
            })
        })
        .collect()
}

/// Scene in the box `[0, extent]³` with cameras orbiting inside it.
/// Visibility is a frustum test (no occlusion) with a near plane at 2% of the
/// extent.
pub fn generate_scene(spec: &SceneSpec) -> Result<SyntheticScene, SceneError> {
    spec.validate()?;
    let positions = sample_positions(spec);
    let mut rng = rng::stream(spec.seed, Stream::SceneDescriptors);
    let points: Vec<MapPoint> = positions
        .into_iter()
        .map(|position| MapPoint {
            position,
            descriptor: random_unit_descriptor(&mut rng, spec.descriptor_dim),
            color: [rng.random(), rng.random(), rng.random()],
        })
        .collect();
    let point_cloud = PointCloud {
        points,
        descriptor_dim: spec.descriptor_dim,
    };
    let k = default_intrinsics();
    let cameras = sample_cameras(spec)
        .into_iter()
        .map(|pose| SyntheticCamera {
            observations: observe(&point_cloud.points, &pose, &k, 0.02 * spec.extent),
            pose,
            intrinsics: k,
        })
        .collect();
    Ok(SyntheticScene {
        point_cloud,
        cameras,
        extent: spec.extent,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation of the multiplicative depth factor.
    pub depth_noise_rel: f64,
    pub pixel_noise_px: f64,
    /// Fraction of observations given the descriptor of a wrong point.
    pub outlier_rate: f64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        for (name, v) in [
            ("depth_noise_rel", self.depth_noise_rel),
            ("pixel_noise_px", self.pixel_noise_px),
            ("outlier_rate", self.outlier_rate),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SceneError::InvalidNoise(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.outlier_rate > 1.0 {
            return Err(SceneError::InvalidNoise(format!(
                "outlier_rate must be <= 1, got {}",
                self.outlier_rate
            )));
        }
        Ok(())
    }
}

/// Perturbs depths (`z ← z(1 + ν)`, redrawn while non-positive), pixels, and
/// rewires a fraction of observations to wrong points. Ground-truth
/// `point_index` labels are kept.
pub fn apply_noise(scene: &SyntheticScene, spec: &NoiseSpec, seed: u64) -> Result<SyntheticScene, SceneError> {
    spec.validate()?;
    let n = scene.point_cloud.len();
    let mut out = scene.clone();
    for (ci, cam) in out.cameras.iter_mut().enumerate() {
        let ci = ci as u64;
        if spec.depth_noise_rel > 0.0 {
            let mut rng = rng::indexed_stream(seed, Stream::DepthNoise, ci);
            let nu = Normal::new(0.0, spec.depth_noise_rel).expect("validated");
            for o in cam.observations.iter_mut() {
                o.depth = loop {
                    let z = o.depth * (1.0 + nu.sample(&mut rng));
                    if z > 0.0 {
                        break z;
                    }
                };
            }
        }
        if spec.pixel_noise_px > 0.0 {
            let mut rng = rng::indexed_stream(seed, Stream::PixelNoise, ci);
            let px = Normal::new(0.0, spec.pixel_noise_px).expect("validated");
            for o in cam.observations.iter_mut() {
                o.u += Vec2::new(px.sample(&mut rng), px.sample(&mut rng));
            }
        }
        if spec.outlier_rate > 0.0 && n > 1 {
            let mut rng = rng::indexed_stream(seed, Stream::Outliers, ci);
            for o in cam.observations.iter_mut() {
                if rng.random_bool(spec.outlier_rate) {
                    let j = rng.random_range(0..n - 1);
                    o.matched_index = if j >= o.point_index { j + 1 } else { j };
                }
            }
        }
    }
    Ok(out)
}

/// Query images carrying the descriptor of each observation's matched point.
pub fn queries(scene: &SyntheticScene) -> Vec<Query> {
    scene
        .cameras
        .iter()
        .map(|cam| Query {
            intrinsics: cam.intrinsics,
            keypoints: cam
                .observations
                .iter()
                .map(|o| Keypoint {
                    u: o.u,
                    z_tof: o.depth,
                    descriptor: scene.point_cloud.points[o.matched_index].descriptor.clone(),
                })
                .collect(),
            gt_pose: Some(cam.pose),
        })
        .collect()
}

/// Correspondences taken straight from the observation labels, for a sphere
/// cloud that keeps the point order of the scene (no sparsification).
pub fn indexed_correspondences(
    scene: &SyntheticScene,
    camera: usize,
    sc: &SphereCloud,
) -> Result<Vec<Correspondence>, SceneError> {
    let cam = &scene.cameras[camera];
    cam.observations
        .iter()
        .map(|o| {
            let b = sc.points.get(o.matched_index).ok_or(SceneError::IndexOutOfRange {
                camera,
                index: o.matched_index,
                len: sc.len(),
            })?;
            Ok(Correspondence::new(o.u, o.depth, b.bearing, &cam.intrinsics)?)
        })
        .collect()
}
