//! Density-based point recovery from line clouds.
//!
//! For every line, the points on it closest to its `k` nearest neighbouring
//! lines are collected as candidates. The recovered point is the mode of their
//! 1D density along the line, found with a box kernel. Lines that all meet at
//! one point (a sphere cloud) produce a single candidate at that point.

use rayon::prelude::*;
use thiserror::Error;

use crate::construction::{LineCloud, SphereCloud};
use crate::geometry::{UnitVec3, Vec3};

/// `|a.dir × b.dir|` at or below this counts as parallel.
pub const PARALLEL_TOL: f64 = 1e-10;
pub const DEFAULT_K: usize = 50;
/// Default bandwidth as a fraction of the estimated scene diameter.
pub const DEFAULT_BANDWIDTH_FRACTION: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("lines are parallel")]
    ParallelLines,
    #[error("k = {k} needs more than {k} lines, got {lines}")]
    KTooLarge { k: usize, lines: usize },
    #[error("k must be at least 2, got {0}")]
    KTooSmall(usize),
    #[error("bandwidth must be positive, got {0}")]
    InvalidBandwidth(f64),
    #[error("line {0}: every neighbour is parallel, no candidates")]
    NoCandidates(usize),
    #[error("cloud is empty")]
    EmptyCloud,
    #[error("ground truth has {found} entries, cloud has {expected}")]
    GroundTruthMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line3 {
    pub origin: Vec3,
    pub direction: UnitVec3,
}

impl Line3 {
    pub fn new(origin: Vec3, direction: UnitVec3) -> Self {
        Self { origin, direction }
    }

    pub fn at(&self, s: f64) -> Vec3 {
        self.origin + self.direction.into_inner() * s
    }

    pub fn distance_to_point(&self, p: &Vec3) -> f64 {
        (p - self.origin).cross(&self.direction).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Fixed histogram bin width in scene units.
    Absolute(f64),
    /// Fraction of the scene diameter estimated from all candidates.
    RelativeToScene(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub k_neighbors: usize,
    pub bandwidth: Bandwidth,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            k_neighbors: DEFAULT_K,
            bandwidth: Bandwidth::RelativeToScene(DEFAULT_BANDWIDTH_FRACTION),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub recovered: Vec<Vec3>,
    /// `‖g − g*‖` per line; `None` where no ground truth exists (fake points).
    pub errors: Option<Vec<Option<f64>>>,
    pub bandwidth: f64,
}

impl AttackResult {
    /// Errors of the lines that have ground truth, in line order.
    pub fn known_errors(&self) -> Vec<f64> {
        self.errors
            .as_ref()
            .map(|e| e.iter().flatten().copied().collect())
            .unwrap_or_default()
    }
}

/// Closest points `(pa, pb)` between two lines.
pub fn closest_points(a: &Line3, b: &Line3) -> Result<(Vec3, Vec3), AttackError> {
    let (s, t) = closest_params(a, b)?;
    Ok((a.at(s), b.at(t)))
}

/// Parameters `(s, t)` along `a` and `b` of the closest pair.
fn closest_params(a: &Line3, b: &Line3) -> Result<(f64, f64), AttackError> {
    let u = a.direction.into_inner();
    let v = b.direction.into_inner();
    let w0 = a.origin - b.origin;
    let c = u.dot(&v);
    let denom = 1.0 - c * c;
    if u.cross(&v).norm() <= PARALLEL_TOL {
        return Err(AttackError::ParallelLines);
    }
    let d = u.dot(&w0);
    let e = v.dot(&w0);
    Ok(((c * e - d) / denom, (e - c * d) / denom))
}

/// Skew-line distance; parallel lines fall back to point-to-line distance.
pub fn line_distance(a: &Line3, b: &Line3) -> f64 {
    let n = a.direction.cross(&b.direction);
    let nn = n.norm();
    let w = b.origin - a.origin;
    if nn <= PARALLEL_TOL {
        a.distance_to_point(&b.origin)
    } else {
        (w.dot(&n) / nn).abs()
    }
}

/// Indices of the `k` lines closest to `lines[idx]`, self excluded, ties by index.
pub fn nearest_lines(lines: &[Line3], idx: usize, k: usize) -> Result<Vec<usize>, AttackError> {
    if k >= lines.len() {
        return Err(AttackError::KTooLarge { k, lines: lines.len() });
    }
    let a = &lines[idx];
    let mut d: Vec<(f64, usize)> = lines
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != idx)
        .map(|(j, b)| (line_distance(a, b), j))
        .collect();
    let cmp = |x: &(f64, usize), y: &(f64, usize)| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1));
    if k < d.len() {
        d.select_nth_unstable_by(k, cmp);
        d.truncate(k);
    }
    d.sort_unstable_by(cmp);
    Ok(d.into_iter().map(|(_, j)| j).collect())
}

/// Signed positions along `lines[idx]` closest to each neighbour.
fn candidate_params(lines: &[Line3], idx: usize, neighbours: &[usize]) -> Vec<f64> {
    neighbours
        .iter()
        .filter_map(|&j| closest_params(&lines[idx], &lines[j]).ok().map(|(s, _)| s))
        .collect()
}

/// Mode of a 1D sample under a box kernel of width `bandwidth`: the window
/// `[s, s + bandwidth]` holding most samples (earliest on ties), reported as
/// the median of the samples inside it.
pub fn box_kernel_mode(values: &[f64], bandwidth: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let (mut best_lo, mut best_hi) = (0usize, 1usize);
    let mut hi = 0usize;
    for lo in 0..v.len() {
        hi = hi.max(lo);
        while hi < v.len() && v[hi] - v[lo] <= bandwidth {
            hi += 1;
        }
        if hi - lo > best_hi - best_lo {
            best_lo = lo;
            best_hi = hi;
        }
    }
    let window = &v[best_lo..best_hi];
    let m = window.len();
    Some(if m % 2 == 1 {
        window[m / 2]
    } else {
        0.5 * (window[m / 2 - 1] + window[m / 2])
    })
}

fn recover_from_params(line: &Line3, idx: usize, params: &[f64], bandwidth: f64) -> Result<Vec3, AttackError> {
    box_kernel_mode(params, bandwidth)
        .map(|s| line.at(s))
        .ok_or(AttackError::NoCandidates(idx))
}

pub fn recover_point(lines: &[Line3], idx: usize, k: usize, bandwidth: f64) -> Result<Vec3, AttackError> {
    if k < 2 {
        return Err(AttackError::KTooSmall(k));
    }
    if !(bandwidth > 0.0) {
        return Err(AttackError::InvalidBandwidth(bandwidth));
    }
    let nn = nearest_lines(lines, idx, k)?;
    recover_from_params(&lines[idx], idx, &candidate_params(lines, idx, &nn), bandwidth)
}

/// Diagonal of the 2nd–98th percentile box of candidate points, a robust
/// stand-in for the scene diameter that the attacker can compute.
fn candidate_extent(lines: &[Line3], params: &[Vec<f64>]) -> f64 {
    let pts: Vec<Vec3> = params
        .iter()
        .enumerate()
        .flat_map(|(i, ps)| ps.iter().map(move |&s| lines[i].at(s)))
        .collect();
    if pts.is_empty() {
        return 0.0;
    }
    let mut extent = Vec3::zeros();
    for axis in 0..3 {
        let mut c: Vec<f64> = pts.iter().map(|p| p[axis]).collect();
        c.sort_by(f64::total_cmp);
        let lo = c[(c.len() as f64 * 0.02) as usize];
        let hi = c[((c.len() as f64 * 0.98) as usize).min(c.len() - 1)];
        extent[axis] = hi - lo;
    }
    extent.norm()
}

/// Runs the attack on every line. `ground_truth[i]` is the original point of
/// line `i` when known.
pub fn run_attack_on_lines(
    lines: &[Line3],
    cfg: &AttackConfig,
    ground_truth: Option<&[Option<Vec3>]>,
) -> Result<AttackResult, AttackError> {
    if lines.is_empty() {
        return Err(AttackError::EmptyCloud);
    }
    if cfg.k_neighbors < 2 {
        return Err(AttackError::KTooSmall(cfg.k_neighbors));
    }
    if cfg.k_neighbors >= lines.len() {
        return Err(AttackError::KTooLarge {
            k: cfg.k_neighbors,
            lines: lines.len(),
        });
    }
    if let Some(gt) = ground_truth {
        if gt.len() != lines.len() {
            return Err(AttackError::GroundTruthMismatch {
                expected: lines.len(),
                found: gt.len(),
            });
        }
    }

    let params: Vec<Vec<f64>> = (0..lines.len())
        .into_par_iter()
        .map(|i| {
            let nn = nearest_lines(lines, i, cfg.k_neighbors)?;
            Ok(candidate_params(lines, i, &nn))
        })
        .collect::<Result<_, AttackError>>()?;

    let bandwidth = match cfg.bandwidth {
        Bandwidth::Absolute(b) => b,
        Bandwidth::RelativeToScene(f) => {
            let extent = candidate_extent(lines, &params);
            // All candidates coincide: any positive width gives the same mode.
            if extent > 0.0 {
                f * extent
            } else {
                1.0
            }
        }
    };
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(AttackError::InvalidBandwidth(bandwidth));
    }

    let recovered: Vec<Vec3> = params
        .par_iter()
        .enumerate()
        .map(|(i, ps)| recover_from_params(&lines[i], i, ps, bandwidth))
        .collect::<Result<_, _>>()?;

    let errors = ground_truth.map(|gt| {
        recovered
            .iter()
            .zip(gt)
            .map(|(r, g)| g.map(|g| (r - g).norm()))
            .collect()
    });
    Ok(AttackResult {
        recovered,
        errors,
        bandwidth,
    })
}

pub fn sphere_lines(sc: &SphereCloud) -> Vec<Line3> {
    sc.points
        .iter()
        .map(|p| Line3::new(sc.centre, p.bearing))
        .collect()
}

pub fn line_cloud_lines(lc: &LineCloud) -> Vec<Line3> {
    lc.lines
        .iter()
        .map(|l| Line3::new(l.point, l.direction))
        .collect()
}

/// Either map representation the attack accepts.
#[derive(Debug, Clone, Copy)]
pub enum AttackTarget<'a> {
    Sphere(&'a SphereCloud),
    Lines(&'a LineCloud),
}

pub fn run_attack(
    target: AttackTarget<'_>,
    cfg: &AttackConfig,
    ground_truth: Option<&[Option<Vec3>]>,
) -> Result<AttackResult, AttackError> {
    let lines = match target {
        AttackTarget::Sphere(sc) => sphere_lines(sc),
        AttackTarget::Lines(lc) => line_cloud_lines(lc),
    };
    run_attack_on_lines(&lines, cfg, ground_truth)
}
