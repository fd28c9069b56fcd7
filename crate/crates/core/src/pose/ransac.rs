//! LO-RANSAC over p3P hypotheses with MSAC scoring.

use std::time::Instant;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::p3p::{cheirality_filter, p3p_solve};
use super::refine::refine_pose;
use super::residuals::{msac_score, MsacScore, MsacThresholds};
use super::{Correspondence, PoseError};
use crate::geometry::{FrameTag, Intrinsics, Pose};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    /// Epipolar inlier threshold in pixels; divided by the focal length.
    pub tau_epipolar_px: f64,
    /// Inlier threshold on `|β − 1|`.
    pub tau_depth: f64,
    /// Weight of the depth term.
    pub lambda: f64,
    pub max_iter: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            tau_epipolar_px: 1.5,
            tau_depth: 0.1,
            lambda: 1e-4,
            max_iter: 10_000,
            confidence: 0.9999,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), PoseError> {
        let bad = |msg: &str| Err(PoseError::InvalidConfig(msg.to_string()));
        if !(self.tau_epipolar_px > 0.0 && self.tau_epipolar_px.is_finite()) {
            return bad("tau_epipolar_px must be positive");
        }
        if !(self.tau_depth > 0.0 && self.tau_depth.is_finite()) {
            return bad("tau_depth must be positive");
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive");
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return bad("confidence must lie in (0, 1)");
        }
        Ok(())
    }

    /// Thresholds in normalized image units for a camera.
    pub fn thresholds(&self, k: &Intrinsics) -> MsacThresholds {
        let tau_e = self.tau_epipolar_px / k.mean_focal();
        MsacThresholds {
            epipolar_sq: tau_e * tau_e,
            depth_sq: self.tau_depth * self.tau_depth,
            lambda: self.lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    /// World-to-query pose in the sphere frame (sphere centre at the origin).
    pub pose: Pose,
    pub inlier_mask: Vec<bool>,
    pub msac_score: f64,
    pub num_lo_refinements: usize,
    pub iterations: usize,
    pub runtime_ms: f64,
}

impl PoseEstimate {
    pub fn num_inliers(&self) -> usize {
        self.inlier_mask.iter().filter(|&&b| b).count()
    }
}

struct Model {
    pose: Pose,
    score: MsacScore,
}

fn inliers_of(corrs: &[Correspondence], mask: &[bool]) -> Vec<Correspondence> {
    corrs
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(c, _)| *c)
        .collect()
}

/// Iterations needed to draw one all-inlier triple with the configured
/// confidence, given the inlier ratio of the best model so far.
fn required_iterations(inlier_ratio: f64, confidence: f64, max_iter: usize) -> usize {
    let w3 = inlier_ratio.powi(3);
    if w3 >= 1.0 {
        return 1;
    }
    if w3 <= 0.0 {
        return max_iter;
    }
    let n = ((1.0 - confidence).ln() / (1.0 - w3).ln()).ceil();
    if n.is_finite() {
        (n.max(1.0) as usize).min(max_iter)
    } else {
        max_iter
    }
}

/// Robust world-to-query pose from 2D–3D correspondences with depth.
///
/// Each iteration samples three correspondences, keeps the p3P solutions that
/// pass cheirality on the sample, and scores them. A candidate that does not
/// lose on inlier count or score against the running local-optimization
/// reference is refined with LM; the global best only changes on a strict
/// score improvement. A final LM pass runs on the best inlier set.
pub fn estimate_pose(
    corrs: &[Correspondence],
    k: &Intrinsics,
    cfg: &RansacConfig,
) -> Result<PoseEstimate, PoseError> {
    let started = Instant::now();
    cfg.validate()?;
    k.validate()?;
    let n = corrs.len();
    if n < 3 {
        return Err(PoseError::TooFewCorrespondences { needed: 3, found: n });
    }
    let th = cfg.thresholds(k);
    let mut rng = rng::stream(cfg.seed, Stream::Ransac);

    let mut best: Option<Model> = None;
    let mut lo_inliers = 0usize;
    let mut lo_score = f64::INFINITY;
    let mut num_lo = 0usize;
    let mut needed = cfg.max_iter;
    let mut iterations = 0usize;

    let best_score = |best: &Option<Model>| best.as_ref().map_or(f64::INFINITY, |m| m.score.score);

    while iterations < needed {
        iterations += 1;
        let sample = index::sample(&mut rng, n, 3);
        let triple = [corrs[sample.index(0)], corrs[sample.index(1)], corrs[sample.index(2)]];
        let candidates = cheirality_filter(&p3p_solve(&triple), &triple);

        let mut lo_candidate: Option<Model> = None;
        for pose in candidates {
            let score = msac_score(corrs, &pose, &th);
            let n_in = score.num_inliers();
            if lo_inliers <= n_in || score.score <= lo_score {
                lo_inliers = n_in;
                lo_score = score.score;
                if score.score < best_score(&best) {
                    best = Some(Model {
                        pose,
                        score: score.clone(),
                    });
                }
                lo_candidate = Some(Model { pose, score });
            }
        }

        if let Some(cand) = lo_candidate {
            let inliers = inliers_of(corrs, &cand.score.inlier_mask);
            if inliers.len() >= 4 {
                if let Ok(refined) = refine_pose(&inliers, &cand.pose, cfg.lambda) {
                    num_lo += 1;
                    let score = msac_score(corrs, &refined, &th);
                    if score.score < best_score(&best) {
                        best = Some(Model {
                            pose: refined,
                            score,
                        });
                    }
                }
            }
        }

        if let Some(m) = &best {
            let ratio = m.score.num_inliers() as f64 / n as f64;
            needed = required_iterations(ratio, cfg.confidence, cfg.max_iter);
        }
    }

    let Some(mut best) = best else {
        return Err(PoseError::NoConsensus { best_inliers: 0 });
    };

    // Final refinement on the best inlier set, repeated while the score improves.
    for _ in 0..4 {
        let inliers = inliers_of(corrs, &best.score.inlier_mask);
        let Ok(refined) = refine_pose(&inliers, &best.pose, cfg.lambda) else {
            break;
        };
        let score = msac_score(corrs, &refined, &th);
        if score.score < best.score.score {
            best = Model {
                pose: refined,
                score,
            };
        } else {
            break;
        }
    }

    let n_in = best.score.num_inliers();
    if n_in < 4 {
        return Err(PoseError::NoConsensus { best_inliers: n_in });
    }

    Ok(PoseEstimate {
        pose: best.pose.as_frame(FrameTag::WorldToQuery)?,
        inlier_mask: best.score.inlier_mask,
        msac_score: best.score.score,
        num_lo_refinements: num_lo,
        iterations,
        runtime_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}
