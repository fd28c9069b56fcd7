//! Map construction: sphere clouds (basic and with sparsification plus fake
//! points) and the uniform line cloud baseline.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{UnitVec3, Vec3, UNIT_NORM_TOL};
use crate::rng::{self, Stream};

/// Points closer than this to the sphere centre have no defined bearing.
pub const DEGENERATE_RADIUS: f64 = 1e-9;

pub const DEFAULT_ETA: f64 = 0.25;
pub const DEFAULT_SIGMA2: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstructionError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("point {index} has descriptor length {found}, cloud uses {expected}")]
    DescriptorDim {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("point {0} has a non-finite position")]
    NonFinitePosition(usize),
    #[error("point {index} lies within {DEGENERATE_RADIUS} of the sphere centre")]
    DegeneratePoint { index: usize },
    #[error("eta must lie in (0, 1], got {0}")]
    EtaOutOfRange(f64),
    #[error("eta * N = {eta} * {n} keeps no points")]
    NothingKept { eta: f64, n: usize },
    #[error("sigma2 must be finite and non-negative, got {0}")]
    InvalidSigma2(f64),
    #[error("provenance has {found} entries, cloud has {expected}")]
    ProvenanceMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapPoint {
    pub position: Vec3,
    pub descriptor: Vec<f32>,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<MapPoint>,
    pub descriptor_dim: usize,
}

impl PointCloud {
    pub fn new(points: Vec<MapPoint>, descriptor_dim: usize) -> Result<Self, ConstructionError> {
        for (index, p) in points.iter().enumerate() {
            if p.descriptor.len() != descriptor_dim {
                return Err(ConstructionError::DescriptorDim {
                    index,
                    expected: descriptor_dim,
                    found: p.descriptor.len(),
                });
            }
            if !p.position.iter().all(|v| v.is_finite()) {
                return Err(ConstructionError::NonFinitePosition(index));
            }
        }
        Ok(Self {
            points,
            descriptor_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| p.position).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpherePoint {
    pub bearing: UnitVec3,
    pub descriptor: Vec<f32>,
    pub color: [u8; 3],
}

/// Privacy-preserving map: unit bearings from a single centre.
///
/// Carries no record of which points are real; see [`ProvenanceSidecar`].
#[derive(Debug, Clone, PartialEq)]
pub struct SphereCloud {
    pub centre: Vec3,
    pub points: Vec<SpherePoint>,
    pub descriptor_dim: usize,
}

impl SphereCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Ground-truth bookkeeping for one sphere point, kept out of the map file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    TruePositive {
        position: [f64; 3],
        /// Index of the originating point in the source point cloud.
        source_index: usize,
    },
    Fake {
        /// Index (in the same cloud) of the kept point this fake was drawn around.
        source: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ProvenanceSidecar {
    pub entries: Vec<Provenance>,
}

impl ProvenanceSidecar {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn fake_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e, Provenance::Fake { .. }))
            .count()
    }

    /// Ground-truth position per entry (`None` for fakes).
    pub fn positions(&self) -> Vec<Option<Vec3>> {
        self.entries
            .iter()
            .map(|e| match e {
                Provenance::TruePositive { position, .. } => Some(Vec3::from(*position)),
                Provenance::Fake { .. } => None,
            })
            .collect()
    }

    pub fn all_true(cloud: &PointCloud) -> Self {
        Self {
            entries: cloud
                .points
                .iter()
                .enumerate()
                .map(|(i, p)| Provenance::TruePositive {
                    position: p.position.into(),
                    source_index: i,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CloudLine {
    /// Foot of the perpendicular from the world origin; never the map point itself.
    pub point: Vec3,
    pub direction: UnitVec3,
    pub descriptor: Vec<f32>,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineCloud {
    pub lines: Vec<CloudLine>,
    pub descriptor_dim: usize,
}

pub fn compute_centroid(pc: &PointCloud) -> Result<Vec3, ConstructionError> {
    if pc.is_empty() {
        return Err(ConstructionError::EmptyCloud);
    }
    let sum = pc.points.iter().fold(Vec3::zeros(), |acc, p| acc + p.position);
    Ok(sum / pc.len() as f64)
}

/// Basic sphere cloud: every point becomes its unit bearing from `centre`.
pub fn project_to_sphere(
    pc: &PointCloud,
    centre: &Vec3,
) -> Result<(SphereCloud, ProvenanceSidecar), ConstructionError> {
    let mut points = Vec::with_capacity(pc.len());
    for (index, p) in pc.points.iter().enumerate() {
        let d = p.position - centre;
        let norm = d.norm();
        if norm <= DEGENERATE_RADIUS {
            return Err(ConstructionError::DegeneratePoint { index });
        }
        points.push(SpherePoint {
            bearing: UnitVec3::new_unchecked(d / norm),
            descriptor: p.descriptor.clone(),
            color: p.color,
        });
    }
    Ok((
        SphereCloud {
            centre: *centre,
            points,
            descriptor_dim: pc.descriptor_dim,
        },
        ProvenanceSidecar::all_true(pc),
    ))
}

/// Number of true points kept for a given `eta`.
pub fn keep_count(eta: f64, n: usize) -> usize {
    (eta * n as f64).floor() as usize
}

/// Sparsification plus fake points, keeping the point count fixed.
///
/// After a seeded shuffle the first `⌊ηN⌋` points are kept. Fake `k` is drawn
/// around kept point `k mod N_keep` as `normalize(x̂ + ε)`, `ε ~ N(0, σ²I)`,
/// and takes the descriptor and colour of discarded point `k`. The union is
/// shuffled again before output.
pub fn sparsify_and_augment(
    sc: &SphereCloud,
    provenance: &ProvenanceSidecar,
    eta: f64,
    sigma2: f64,
    seed: u64,
) -> Result<(SphereCloud, ProvenanceSidecar), ConstructionError> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(ConstructionError::EtaOutOfRange(eta));
    }
    if !(sigma2.is_finite() && sigma2 >= 0.0) {
        return Err(ConstructionError::InvalidSigma2(sigma2));
    }
    if provenance.len() != sc.len() {
        return Err(ConstructionError::ProvenanceMismatch {
            expected: sc.len(),
            found: provenance.len(),
        });
    }
    let n = sc.len();
    let n_keep = keep_count(eta, n);
    if n_keep == 0 {
        return Err(ConstructionError::NothingKept { eta, n });
    }

    let mut shuffle_rng = rng::stream(seed, Stream::Shuffle);
    let mut noise_rng = rng::stream(seed, Stream::FakeNoise);
    let sigma = sigma2.sqrt();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut shuffle_rng);
    let (kept, discarded) = order.split_at(n_keep);

    // (point, provenance) where Fake.source indexes into `kept` until remapped.
    let mut staged: Vec<(SpherePoint, Provenance)> = Vec::with_capacity(n);
    for &i in kept {
        staged.push((sc.points[i].clone(), provenance.entries[i]));
    }
    for (k, &d) in discarded.iter().enumerate() {
        let i = k % n_keep;
        let anchor = sc.points[kept[i]].bearing.into_inner();
        let bearing = loop {
            let eps = Vec3::new(
                noise_rng.sample::<f64, _>(StandardNormal),
                noise_rng.sample::<f64, _>(StandardNormal),
                noise_rng.sample::<f64, _>(StandardNormal),
            ) * sigma;
            let z = anchor + eps;
            let norm = z.norm();
            if norm > 1e-9 {
                break UnitVec3::new_unchecked(z / norm);
            }
        };
        let donor = &sc.points[d];
        staged.push((
            SpherePoint {
                bearing,
                descriptor: donor.descriptor.clone(),
                color: donor.color,
            },
            Provenance::Fake { source: i },
        ));
    }

    let mut out_order: Vec<usize> = (0..n).collect();
    out_order.shuffle(&mut shuffle_rng);
    // staged index -> output index
    let mut position_of = vec![0usize; n];
    for (out, &s) in out_order.iter().enumerate() {
        position_of[s] = out;
    }

    let mut points = Vec::with_capacity(n);
    let mut entries = Vec::with_capacity(n);
    for &s in &out_order {
        let (p, prov) = &staged[s];
        points.push(p.clone());
        entries.push(match *prov {
            Provenance::Fake { source } => Provenance::Fake {
                source: position_of[source],
            },
            tp => tp,
        });
    }

    Ok((
        SphereCloud {
            centre: sc.centre,
            points,
            descriptor_dim: sc.descriptor_dim,
        },
        ProvenanceSidecar { entries },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstructionParams {
    pub eta: f64,
    pub sigma2: f64,
    pub seed: u64,
    /// Replaces the centroid as sphere centre.
    pub centre: Option<Vec3>,
}

impl Default for ConstructionParams {
    fn default() -> Self {
        Self {
            eta: DEFAULT_ETA,
            sigma2: DEFAULT_SIGMA2,
            seed: 0,
            centre: None,
        }
    }
}

pub fn build_sphere_cloud(
    pc: &PointCloud,
    params: &ConstructionParams,
) -> Result<(SphereCloud, ProvenanceSidecar), ConstructionError> {
    let centre = match params.centre {
        Some(c) => c,
        None => compute_centroid(pc)?,
    };
    if pc.is_empty() {
        return Err(ConstructionError::EmptyCloud);
    }
    let (basic, provenance) = project_to_sphere(pc, &centre)?;
    sparsify_and_augment(&basic, &provenance, params.eta, params.sigma2, params.seed)
}

/// Direction drawn uniformly on S² from a normalized 3D Gaussian.
pub(crate) fn random_direction(rng: &mut impl Rng) -> UnitVec3 {
    loop {
        let v = Vec3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-9 {
            return UnitVec3::new_unchecked(v / n);
        }
    }
}

/// Uniform line cloud: each point replaced by a line of random direction.
pub fn build_uniform_line_cloud(pc: &PointCloud, seed: u64) -> Result<LineCloud, ConstructionError> {
    if pc.is_empty() {
        return Err(ConstructionError::EmptyCloud);
    }
    let mut rng = rng::stream(seed, Stream::LineDirections);
    let lines = pc
        .points
        .iter()
        .map(|p| {
            let direction = random_direction(&mut rng);
            let d = direction.into_inner();
            CloudLine {
                point: p.position - d * p.position.dot(&d),
                direction,
                descriptor: p.descriptor.clone(),
                color: p.color,
            }
        })
        .collect();
    Ok(LineCloud {
        lines,
        descriptor_dim: pc.descriptor_dim,
    })
}

/// `|‖b‖ − 1| ≤ UNIT_NORM_TOL`.
pub fn is_unit(b: &Vec3) -> bool {
    (b.norm() - 1.0).abs() <= UNIT_NORM_TOL
}
