//! Lambda Twist p3P (Persson & Nordberg, ECCV 2018) in f64.
//!
//! Solves `λᵢ yᵢ = R xᵢ + t` for three points `xᵢ` and unit bearings `yᵢ`.
//! Here the "camera" is the virtual sphere camera at the sphere centre, the
//! points are the lifted query keypoints and the bearings are sphere points,
//! so the solutions are query-to-sphere poses.

use nalgebra::Matrix3;

use super::Correspondence;
use crate::geometry::{orthonormalize, FrameTag, Pose, Vec3};

/// Maximum bearing misalignment (radians) of an accepted solution.
pub const P3P_ALIGNMENT_TOL: f64 = 1e-6;

pub fn p3p_solve(triple: &[Correspondence; 3]) -> Vec<Pose> {
    let x = [triple[0].p, triple[1].p, triple[2].p];
    let y = [
        triple[0].bearing.into_inner(),
        triple[1].bearing.into_inner(),
        triple[2].bearing.into_inner(),
    ];
    solve(&x, &y)
        .into_iter()
        .map(|(r, t)| Pose::new(r, t, FrameTag::QueryToWorld))
        .filter(|pose| {
            (0..3).all(|i| {
                let v = pose.transform(&x[i]);
                let cos = v.dot(&y[i]) / v.norm();
                let sin = v.cross(&y[i]).norm() / v.norm();
                sin.atan2(cos) <= P3P_ALIGNMENT_TOL
            })
        })
        .collect()
}

/// Keeps poses under which every lifted point lies on the positive side of
/// its bearing: `αᵢ = x̂ᵢ · (R pᵢ + t) > 0`.
pub fn cheirality_filter(poses: &[Pose], corrs: &[Correspondence]) -> Vec<Pose> {
    poses
        .iter()
        .filter(|pose| {
            let Ok(q2w) = super::q2w(pose) else {
                return false;
            };
            corrs
                .iter()
                .all(|c| c.bearing.dot(&q2w.transform(&c.p)) > 0.0)
        })
        .copied()
        .collect()
}

#[allow(clippy::many_single_char_names)]
fn solve(x: &[Vec3; 3], y: &[Vec3; 3]) -> Vec<(crate::geometry::Rotation, Vec3)> {
    let y1 = y[0].normalize();
    let y2 = y[1].normalize();
    let y3 = y[2].normalize();

    let d12 = x[0] - x[1];
    let d13 = x[0] - x[2];
    let d23 = x[1] - x[2];
    let d12xd13 = d12.cross(&d13);

    let a12 = d12.norm_squared();
    let a13 = d13.norm_squared();
    let a23 = d23.norm_squared();
    let scale = a12.max(a13).max(a23);
    if scale <= 0.0 || d12xd13.norm_squared() <= 1e-20 * scale * scale {
        return Vec::new();
    }

    let c12 = y1.dot(&y2);
    let c23 = y2.dot(&y3);
    let c31 = y3.dot(&y1);
    if 1.0 - c12 <= 1e-12 || 1.0 - c23 <= 1e-12 || 1.0 - c31 <= 1e-12 {
        return Vec::new();
    }
    let blob = c12 * c23 * c31 - 1.0;

    let s12_sq = 1.0 - c12 * c12;
    let s23_sq = 1.0 - c23 * c23;
    let s31_sq = 1.0 - c31 * c31;

    let b12 = -2.0 * c12;
    let b13 = -2.0 * c31;
    let b23 = -2.0 * c23;

    // Cubic whose root makes the pencil D1 + γ D2 singular.
    let p3 = a13 * (a23 * s31_sq - a13 * s23_sq);
    let p2 = 2.0 * blob * a23 * a13 + a13 * (2.0 * a12 + a13) * s23_sq + a23 * (a23 - a12) * s31_sq;
    let p1 = a23 * (a13 - a23) * s12_sq - a12 * a12 * s23_sq - 2.0 * a12 * (blob * a23 + a13 * s23_sq);
    let p0 = a12 * (a12 * s23_sq - a23 * s12_sq);
    if p3.abs() <= 1e-14 * scale * scale {
        return Vec::new();
    }
    let g = cubic_root(p2 / p3, p1 / p3, p0 / p3);

    let d0 = Matrix3::new(
        a23 * (1.0 - g),
        -(a23 * c12),
        a23 * c31 * g,
        -(a23 * c12),
        a23 - a12 + a13 * g,
        -c23 * (a13 * g - a12),
        a23 * c31 * g,
        -c23 * (a13 * g - a12),
        g * (a13 - a23) - a12,
    );
    let (e, sigma) = eigen_singular(&d0);
    let ratio = (-sigma[1] / sigma[0]).max(0.0).sqrt();

    let mut lambdas: Vec<Vec3> = Vec::with_capacity(4);
    for s in [ratio, -ratio] {
        let w2 = 1.0 / (s * e[(0, 1)] - e[(0, 0)]);
        let w0 = w2 * (e[(1, 0)] - s * e[(1, 1)]);
        let w1 = w2 * (e[(2, 0)] - s * e[(2, 1)]);

        let a = 1.0 / ((a13 - a12) * w1 * w1 - a12 * b13 * w1 - a12);
        let b = a * (a13 * b12 * w1 - a12 * b13 * w0 - 2.0 * w0 * w1 * (a12 - a13));
        let c = a * ((a13 - a12) * w0 * w0 + a13 * b12 * w0 + a13);
        if !(b * b - 4.0 * c >= 0.0) {
            continue;
        }
        let Some((tau1, tau2)) = quadratic_roots(b, c) else {
            continue;
        };
        for tau in [tau1, tau2] {
            if tau <= 0.0 {
                continue;
            }
            let d = a23 / (tau * (b23 + tau) + 1.0);
            if d <= 0.0 {
                continue;
            }
            let l2 = d.sqrt();
            let l3 = tau * l2;
            let l1 = w0 * l2 + w1 * l3;
            if l1 >= 0.0 {
                lambdas.push(Vec3::new(l1, l2, l3));
            }
        }
    }

    let Some(x_inv) = Matrix3::from_columns(&[d12, d13, d12xd13]).try_inverse() else {
        return Vec::new();
    };

    lambdas
        .into_iter()
        .filter_map(|l| {
            let l = refine_lambda(l, a12, a13, a23, b12, b13, b23);
            if !l.iter().all(|v| v.is_finite()) {
                return None;
            }
            let ry1 = y1 * l[0];
            let ry2 = y2 * l[1];
            let ry3 = y3 * l[2];
            let yd1 = ry1 - ry2;
            let yd2 = ry1 - ry3;
            let ymat = Matrix3::from_columns(&[yd1, yd2, yd1.cross(&yd2)]);
            let rot = orthonormalize(&(ymat * x_inv));
            let t = ry1 - rot * x[0];
            Some((rot, t))
        })
        .collect()
}

/// Real roots of `r² + b r + c = 0`, computed without cancellation.
fn quadratic_roots(b: f64, c: f64) -> Option<(f64, f64)> {
    let disc = b * b - 4.0 * c;
    if disc < 0.0 {
        return None;
    }
    let y = disc.sqrt();
    if b < 0.0 {
        Some((0.5 * (-b + y), 0.5 * (-b - y)))
    } else {
        Some((2.0 * c / (-b + y), 2.0 * c / (-b - y)))
    }
}

/// One real root of `r³ + b r² + c r + d`, chosen where the derivative is
/// large, polished with Newton iterations.
fn cubic_root(b: f64, c: f64, d: f64) -> f64 {
    let h = |r: f64| ((r + b) * r + c) * r + d;
    let dh = |r: f64| (3.0 * r + 2.0 * b) * r + c;

    let mut r0;
    if b * b >= 3.0 * c {
        let v = (b * b - 3.0 * c).sqrt();
        let t1 = (-b - v) / 3.0;
        let k = h(t1);
        if k > 0.0 {
            r0 = t1 - (-k / (3.0 * t1 + b)).sqrt();
        } else {
            let t2 = (-b + v) / 3.0;
            let k = h(t2);
            r0 = t2 + (-k / (3.0 * t2 + b)).sqrt();
        }
    } else {
        r0 = -b / 3.0;
        if dh(r0).abs() < 1e-4 {
            r0 += 1.0;
        }
    }

    for i in 0..50 {
        let fx = h(r0);
        if i >= 7 && fx.abs() <= 1e-13 {
            break;
        }
        let fpx = dh(r0);
        if fpx == 0.0 {
            break;
        }
        r0 -= fx / fpx;
    }
    r0
}

/// Eigen-decomposition of a symmetric matrix with one zero eigenvalue.
/// Columns of the returned matrix are eigenvectors for `(σ₀, σ₁, 0)`, with
/// `|σ₀| ≥ |σ₁|`.
fn eigen_singular(x: &Matrix3<f64>) -> (Matrix3<f64>, [f64; 2]) {
    let (m11, m12, m13) = (x[(0, 0)], x[(0, 1)], x[(0, 2)]);
    let (m22, m23, m33) = (x[(1, 1)], x[(1, 2)], x[(2, 2)]);

    let v3 = Vec3::new(m12 * m23 - m13 * m22, m13 * m12 - m23 * m11, m22 * m11 - m12 * m12);
    let v3 = v3.normalize();

    let b = -m11 - m22 - m33;
    let c = -m12 * m12 - m13 * m13 - m23 * m23 + m11 * (m22 + m33) + m22 * m33;
    let (mut e1, mut e2) = match quadratic_roots(b, c) {
        Some(r) => r,
        None => (-0.5 * b, -0.5 * b),
    };
    if e1.abs() < e2.abs() {
        std::mem::swap(&mut e1, &mut e2);
    }

    let mx0011 = -m11 * m22;
    let prec_0 = m12 * m23 - m13 * m22;
    let prec_1 = m12 * m13 - m11 * m23;
    let vector = |e: f64| {
        let tmp = 1.0 / (e * (m11 + m22) + mx0011 - e * e + m12 * m12);
        let a1 = -(e * m13 + prec_0) * tmp;
        let a2 = -(e * m23 + prec_1) * tmp;
        let rnorm = 1.0 / (a1 * a1 + a2 * a2 + 1.0).sqrt();
        Vec3::new(a1 * rnorm, a2 * rnorm, rnorm)
    };
    (
        Matrix3::from_columns(&[vector(e1), vector(e2), v3]),
        [e1, e2],
    )
}

/// Gauss–Newton polish of the depth triplet on the three law-of-cosines
/// constraints `λᵢ² + λⱼ² + bᵢⱼ λᵢ λⱼ = aᵢⱼ`.
#[allow(clippy::too_many_arguments)]
fn refine_lambda(l: Vec3, a12: f64, a13: f64, a23: f64, b12: f64, b13: f64, b23: f64) -> Vec3 {
    let residual = |l: &Vec3| {
        Vec3::new(
            l[0] * l[0] + l[1] * l[1] + b12 * l[0] * l[1] - a12,
            l[0] * l[0] + l[2] * l[2] + b13 * l[0] * l[2] - a13,
            l[1] * l[1] + l[2] * l[2] + b23 * l[1] * l[2] - a23,
        )
    };
    let l1_norm = |v: &Vec3| v.iter().map(|x| x.abs()).sum::<f64>();

    let mut l = l;
    let mut r = residual(&l);
    for _ in 0..8 {
        if l1_norm(&r) < 1e-14 * (a12 + a13 + a23) {
            break;
        }
        let j = Matrix3::new(
            2.0 * l[0] + b12 * l[1],
            2.0 * l[1] + b12 * l[0],
            0.0,
            2.0 * l[0] + b13 * l[2],
            0.0,
            2.0 * l[2] + b13 * l[0],
            0.0,
            2.0 * l[1] + b23 * l[2],
            2.0 * l[2] + b23 * l[1],
        );
        let Some(step) = j.lu().solve(&r) else {
            break;
        };
        let candidate = l - step;
        let rc = residual(&candidate);
        if l1_norm(&rc) >= l1_norm(&r) {
            break;
        }
        l = candidate;
        r = rc;
    }
    l
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rotation_error, Intrinsics, Rotation, UnitVec3, Vec2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> Intrinsics {
        Intrinsics::new(525.0, 525.0, 319.5, 239.5, 640, 480).unwrap()
    }

    /// Forward-generates three correspondences from a query-to-sphere pose.
    fn minimal_problem(rng: &mut impl Rng) -> (Pose, [Correspondence; 3]) {
        let k = k();
        let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let t = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let pose = Pose::new(Rotation::new(axis * 1.5), t, FrameTag::QueryToWorld);
        let corr = |rng: &mut dyn rand::RngCore| {
            let u = Vec2::new(rng.random_range(20.0..620.0), rng.random_range(20.0..460.0));
            let z = rng.random_range(1.0..5.0);
            let p = crate::geometry::lift_keypoint(&u, z, &k).unwrap();
            let b = UnitVec3::new_normalize(pose.transform(&p));
            Correspondence::new(u, z, b, &k).unwrap()
        };
        let c = [corr(rng), corr(rng), corr(rng)];
        (pose, c)
    }

    fn contains(solutions: &[Pose], gt: &Pose, tol: f64) -> bool {
        solutions.iter().any(|s| {
            rotation_error(&s.rotation, &gt.rotation).to_radians() <= tol
                && (s.translation - gt.translation).norm() <= tol
        })
    }

    #[test]
    fn recovers_ground_truth_from_noiseless_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut checked = 0;
        for _ in 0..500 {
            let (gt, c) = minimal_problem(&mut rng);
            // Skip near-degenerate draws (nearly collinear lifted points).
            let area = (c[0].p - c[1].p).cross(&(c[0].p - c[2].p)).norm();
            if area < 0.05 {
                continue;
            }
            let sols = p3p_solve(&c);
            assert!(!sols.is_empty() && sols.len() <= 4);
            assert!(contains(&sols, &gt, 1e-9), "gt missing: {gt:?} vs {sols:?}");
            checked += 1;
        }
        assert!(checked > 400);
    }

    #[test]
    fn identity_pose_when_query_frame_is_sphere_frame() {
        let k = k();
        let pts = [Vec3::new(0.3, -0.2, 2.0), Vec3::new(-0.5, 0.4, 3.0), Vec3::new(0.8, 0.6, 4.5)];
        let c = pts.map(|p| {
            let u = k.project(&p);
            Correspondence::new(u, p.z, UnitVec3::new_normalize(p), &k).unwrap()
        });
        let sols = p3p_solve(&c);
        assert!(contains(&sols, &Pose::identity(FrameTag::QueryToWorld), 1e-9));
    }

    #[test]
    fn collinear_points_are_rejected() {
        let k = k();
        let pts = [Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.0, 2.0), Vec3::new(0.0, 0.0, 3.0)];
        let bearings = [Vec3::new(1.0, 0.0, 0.2), Vec3::new(0.0, 1.0, 0.1), Vec3::new(-1.0, 0.3, 0.0)];
        let c: Vec<Correspondence> = pts
            .iter()
            .zip(&bearings)
            .map(|(p, b)| Correspondence::new(k.project(p), p.z, UnitVec3::new_normalize(*b), &k).unwrap())
            .collect();
        assert!(p3p_solve(&[c[0], c[1], c[2]]).is_empty());
    }

    #[test]
    fn solutions_align_all_three_bearings() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let (_, c) = minimal_problem(&mut rng);
            for s in p3p_solve(&c) {
                for ci in &c {
                    let v = s.transform(&ci.p);
                    let ang = v.normalize().cross(&ci.bearing).norm().asin();
                    assert!(ang <= P3P_ALIGNMENT_TOL);
                    assert!(v.dot(&ci.bearing) > 0.0);
                }
            }
        }
    }

    #[test]
    fn cheirality_keeps_true_pose_rejects_reversed() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (gt, c) = minimal_problem(&mut rng);
        assert_eq!(cheirality_filter(&[gt], &c).len(), 1);
        // Half-turn about the normal of the plane holding the three aligned points
        // maps each αᵢx̂ᵢ to −αᵢx̂ᵢ.
        let q: Vec<Vec3> = c.iter().map(|ci| gt.transform(&ci.p)).collect();
        let n = (q[1] - q[0]).cross(&(q[2] - q[0])).normalize();
        let dist = n.dot(&q[0]);
        let half = Rotation::from_axis_angle(&UnitVec3::new_normalize(n), std::f64::consts::PI);
        let reversed = Pose::new(half * gt.rotation, half * gt.translation - n * (2.0 * dist), FrameTag::QueryToWorld);
        for ci in &c {
            let v = reversed.transform(&ci.p);
            assert!(v.dot(&ci.bearing) < 0.0);
        }
        assert!(cheirality_filter(&[reversed], &c).is_empty());
        assert!(cheirality_filter(&[], &c).is_empty());
    }
}
