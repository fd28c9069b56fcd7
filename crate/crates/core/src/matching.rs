//! Brute-force descriptor matching between query keypoints and a sphere cloud.

use rayon::prelude::*;
use thiserror::Error;

use crate::construction::SphereCloud;

pub const DEFAULT_RATIO: f32 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("query descriptor {index} has length {found}, map uses {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
}

fn dist2(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mutual nearest neighbours under L2 that also pass Lowe's ratio test.
///
/// Returns `(query_idx, sphere_idx)` pairs ordered by query index.
pub fn match_descriptors<D: AsRef<[f32]> + Sync>(
    query_descs: &[D],
    sc: &SphereCloud,
    ratio: f32,
) -> Result<Vec<(usize, usize)>, MatchError> {
    for (index, d) in query_descs.iter().enumerate() {
        if d.as_ref().len() != sc.descriptor_dim {
            return Err(MatchError::DimensionMismatch {
                index,
                expected: sc.descriptor_dim,
                found: d.as_ref().len(),
            });
        }
    }
    if query_descs.is_empty() || sc.is_empty() {
        return Ok(Vec::new());
    }

    // Per query: (best sphere idx, best d², second best d²).
    let forward: Vec<(usize, f32, f32)> = query_descs
        .par_iter()
        .map(|q| {
            let q = q.as_ref();
            let mut best = (usize::MAX, f32::INFINITY, f32::INFINITY);
            for (j, s) in sc.points.iter().enumerate() {
                let d = dist2(q, &s.descriptor);
                if d < best.1 {
                    best = (j, d, best.1);
                } else if d < best.2 {
                    best.2 = d;
                }
            }
            best
        })
        .collect();

    // Reverse direction only needed for sphere points someone matched to.
    let mut candidates: Vec<usize> = forward.iter().map(|f| f.0).collect();
    candidates.sort_unstable();
    candidates.dedup();
    let reverse: Vec<(usize, usize)> = candidates
        .par_iter()
        .map(|&j| {
            let s = &sc.points[j].descriptor;
            let mut best = (usize::MAX, f32::INFINITY);
            for (i, q) in query_descs.iter().enumerate() {
                let d = dist2(q.as_ref(), s);
                if d < best.1 {
                    best = (i, d);
                }
            }
            (j, best.0)
        })
        .collect();
    let reverse_of = |j: usize| {
        reverse
            .binary_search_by_key(&j, |r| r.0)
            .map(|k| reverse[k].1)
            .ok()
    };

    let r2 = ratio * ratio;
    Ok(forward
        .iter()
        .enumerate()
        .filter(|(i, (j, d1, d2))| {
            *d1 < r2 * *d2 && reverse_of(*j) == Some(*i)
        })
        .map(|(i, (j, _, _))| (i, *j))
        .collect())
}
