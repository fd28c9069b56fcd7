//! Pose error metrics and their aggregation over a query set.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{orthonormalize, rotation_error, translation_error, FrameTag, GeometryError, Pose, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{outcomes} outcomes but {gt} ground-truth poses")]
    LengthMismatch { outcomes: usize, gt: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub rotation_deg: f64,
    pub translation_cm: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            rotation_deg: 3.0,
            translation_cm: 3.0,
        }
    }
}

/// Result of localizing one query; `pose` is world-to-query, `None` on failure.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QueryOutcome {
    pub pose: Option<Pose>,
    pub num_inliers: Option<usize>,
    pub runtime_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub index: usize,
    pub localized: bool,
    pub rotation_error_deg: Option<f64>,
    /// Distance between estimated and true camera centres.
    pub translation_error_cm: Option<f64>,
    pub rotation_ok: bool,
    pub translation_ok: bool,
    pub num_inliers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub runtime_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub num_queries: usize,
    pub num_localized: usize,
    pub num_failed: usize,
    /// Over localized queries only.
    pub median_rotation_deg: Option<f64>,
    pub median_translation_cm: Option<f64>,
    /// Over all queries; failures count as misses.
    pub recall_rotation: f64,
    pub recall_translation: f64,
    pub recall_both: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_runtime_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub thresholds: Thresholds,
    pub summary: Summary,
    pub queries: Vec<QueryMetrics>,
}

/// Median with the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

fn camera_centre(p: &Pose) -> Result<Vec3, GeometryError> {
    let q2w = p.as_frame(FrameTag::QueryToWorld)?;
    Ok(q2w.translation)
}

/// `(ΔR in degrees, Δt in cm)` of a world-to-query pose against ground truth.
pub fn pose_errors(est: &Pose, gt: &Pose) -> Result<(f64, f64), GeometryError> {
    let e = est.as_frame(FrameTag::WorldToQuery)?;
    let g = gt.as_frame(FrameTag::WorldToQuery)?;
    let dr = rotation_error(&e.rotation, &g.rotation);
    let dt = translation_error(&camera_centre(&e)?, &camera_centre(&g)?) * 100.0;
    Ok((dr, dt))
}

pub fn aggregate_metrics(
    outcomes: &[QueryOutcome],
    gt: &[Pose],
    th: &Thresholds,
) -> Result<MetricsReport, MetricsError> {
    if outcomes.len() != gt.len() {
        return Err(MetricsError::LengthMismatch {
            outcomes: outcomes.len(),
            gt: gt.len(),
        });
    }
    let mut queries = Vec::with_capacity(outcomes.len());
    for (index, (o, g)) in outcomes.iter().zip(gt).enumerate() {
        let errs = o.pose.as_ref().map(|p| pose_errors(p, g)).transpose()?;
        queries.push(QueryMetrics {
            index,
            localized: errs.is_some(),
            rotation_error_deg: errs.map(|e| e.0),
            translation_error_cm: errs.map(|e| e.1),
            rotation_ok: errs.is_some_and(|e| e.0 < th.rotation_deg),
            translation_ok: errs.is_some_and(|e| e.1 < th.translation_cm),
            num_inliers: o.num_inliers,
            runtime_ms: o.runtime_ms,
        });
    }

    let n = queries.len();
    let rate = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let dr: Vec<f64> = queries.iter().filter_map(|q| q.rotation_error_deg).collect();
    let dt: Vec<f64> = queries.iter().filter_map(|q| q.translation_error_cm).collect();
    let runtimes: Vec<f64> = queries.iter().filter_map(|q| q.runtime_ms).collect();
    let summary = Summary {
        num_queries: n,
        num_localized: dr.len(),
        num_failed: n - dr.len(),
        median_rotation_deg: median(&dr),
        median_translation_cm: median(&dt),
        recall_rotation: rate(queries.iter().filter(|q| q.rotation_ok).count()),
        recall_translation: rate(queries.iter().filter(|q| q.translation_ok).count()),
        recall_both: rate(queries.iter().filter(|q| q.rotation_ok && q.translation_ok).count()),
        mean_runtime_ms: (!runtimes.is_empty()).then(|| runtimes.iter().sum::<f64>() / runtimes.len() as f64),
    };
    Ok(MetricsReport {
        thresholds: *th,
        summary,
        queries,
    })
}

/// World-to-query pose as plain arrays.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    /// Row-major.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl PoseRecord {
    pub fn from_pose(p: &Pose) -> Result<Self, GeometryError> {
        let p = p.as_frame(FrameTag::WorldToQuery)?;
        let m = p.rotation.matrix();
        Ok(Self {
            rotation: std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)])),
            translation: p.translation.into(),
        })
    }

    pub fn to_pose(&self) -> Pose {
        let m = nalgebra::Matrix3::from_fn(|r, c| self.rotation[r][c]);
        Pose::new(orthonormalize(&m), Vec3::from(self.translation), FrameTag::WorldToQuery)
    }
}

/// What `localize` knows about one query, before any thresholds are applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRecord {
    pub index: usize,
    pub pose: Option<PoseRecord>,
    pub gt_pose: Option<PoseRecord>,
    pub error: Option<String>,
    pub num_matches: usize,
    pub num_inliers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub runtime_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LocalizationReport {
    pub queries: Vec<LocalizationRecord>,
}

impl LocalizationReport {
    pub fn num_localized(&self) -> usize {
        self.queries.iter().filter(|q| q.pose.is_some()).count()
    }

    /// Metrics over the queries that carry ground truth.
    pub fn metrics(&self, th: &Thresholds) -> Result<MetricsReport, MetricsError> {
        let with_gt: Vec<&LocalizationRecord> = self.queries.iter().filter(|q| q.gt_pose.is_some()).collect();
        let outcomes: Vec<QueryOutcome> = with_gt
            .iter()
            .map(|q| QueryOutcome {
                pose: q.pose.map(|p| p.to_pose()),
                num_inliers: q.num_inliers,
                runtime_ms: q.runtime_ms,
            })
            .collect();
        let gt: Vec<Pose> = with_gt.iter().map(|q| q.gt_pose.expect("filtered").to_pose()).collect();
        let mut report = aggregate_metrics(&outcomes, &gt, th)?;
        for (m, q) in report.queries.iter_mut().zip(&with_gt) {
            m.index = q.index;
        }
        Ok(report)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// One row per query.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("index,localized,rotation_error_deg,translation_error_cm,rotation_ok,translation_ok,num_inliers,runtime_ms\n");
        for q in &self.queries {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                q.index,
                q.localized,
                opt(q.rotation_error_deg),
                opt(q.translation_error_cm),
                q.rotation_ok,
                q.translation_ok,
                opt(q.num_inliers),
                opt(q.runtime_ms),
            ));
        }
        out
    }
}
