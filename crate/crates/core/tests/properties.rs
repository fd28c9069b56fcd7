use proptest::prelude::*;

use spherecloud_core::attack::{closest_points, recover_point, run_attack_on_lines, AttackConfig, Bandwidth, Line3};
use spherecloud_core::construction::{build_sphere_cloud, ConstructionParams, MapPoint, PointCloud};
use spherecloud_core::geometry::{
    compose, essential_from_pose, invert, lift_keypoint, rotation_error, FrameTag, Intrinsics, Pose, Rotation,
    UnitVec3, Vec2, Vec3,
};
use spherecloud_core::io::{encode_cloud, Cloud};
use spherecloud_core::pose::{
    cheirality_depth, epipolar_residual, estimate_pose, msac_score, p3p_solve, predicted_depth, refine_pose_with,
    total_cost, Correspondence, LmOptions, MsacThresholds, RansacConfig, P3P_ALIGNMENT_TOL,
};

fn intrinsics() -> Intrinsics {
    Intrinsics::new(525.0, 525.0, 319.5, 239.5, 640, 480).unwrap()
}

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn rotation() -> impl Strategy<Value = Rotation> {
    vec3(3.0).prop_map(Rotation::new)
}

fn pose(frame: FrameTag) -> impl Strategy<Value = Pose> {
    (rotation(), vec3(3.0)).prop_map(move |(r, t)| Pose::new(r, t, frame))
}

fn direction() -> impl Strategy<Value = UnitVec3> {
    vec3(1.0)
        .prop_filter("non-degenerate", |v| v.norm() > 0.1)
        .prop_map(UnitVec3::new_normalize)
}

/// Keypoint with depth and its exact bearing under a query-to-sphere pose.
fn keypoint() -> impl Strategy<Value = (Vec2, f64)> {
    (0.0..640.0, 0.0..480.0, 0.5..5.0).prop_map(|(x, y, z)| (Vec2::new(x, y), z))
}

fn consistent(pose: &Pose, kps: &[(Vec2, f64)]) -> Vec<Correspondence> {
    let k = intrinsics();
    kps.iter()
        .filter_map(|(u, z)| {
            let p = lift_keypoint(u, *z, &k).unwrap();
            let q = pose.transform(&p);
            (q.norm() > 1e-3).then(|| Correspondence::new(*u, *z, UnitVec3::new_normalize(q), &k).unwrap())
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn epipolar_residual_is_scale_blind(
        p in pose(FrameTag::QueryToWorld),
        truth in pose(FrameTag::QueryToWorld),
        kp in keypoint(),
        s in 0.01f64..100.0,
    ) {
        prop_assume!(p.translation.norm() > 1e-3);
        let c = &consistent(&truth, &[kp]);
        prop_assume!(!c.is_empty());
        let scaled = Pose::new(p.rotation, p.translation * s, p.frame);
        if let (Ok(a), Ok(b)) = (epipolar_residual(&c[0], &p), epipolar_residual(&c[0], &scaled)) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300), "{a} vs {b}");
        }
    }

    #[test]
    fn invert_is_an_involution(p in pose(FrameTag::WorldToQuery)) {
        let back = invert(&invert(&p));
        prop_assert_eq!(back.frame, p.frame);
        prop_assert!((back.rotation.matrix() - p.rotation.matrix()).amax() <= 1e-12);
        prop_assert!((back.translation - p.translation).norm() <= 1e-12);
    }

    #[test]
    fn compose_is_associative(
        a in pose(FrameTag::WorldToWorld),
        b in pose(FrameTag::WorldToWorld),
        c in pose(FrameTag::WorldToWorld),
    ) {
        let l = compose(&compose(&a, &b).unwrap(), &c).unwrap();
        let r = compose(&a, &compose(&b, &c).unwrap()).unwrap();
        prop_assert!((l.rotation.matrix() - r.rotation.matrix()).amax() <= 1e-10);
        prop_assert!((l.translation - r.translation).norm() <= 1e-10);
    }

    #[test]
    fn rotation_error_is_symmetric(a in rotation(), b in rotation()) {
        prop_assert!((rotation_error(&a, &b) - rotation_error(&b, &a)).abs() <= 1e-9);
    }

    #[test]
    fn essential_has_rank_two(p in pose(FrameTag::QueryToWorld)) {
        prop_assume!(p.translation.norm() > 1e-3);
        let sv = essential_from_pose(&p).unwrap().singular_values();
        prop_assert!(sv[2] <= 1e-12 * sv[0]);
        prop_assert!((sv[0] - sv[1]).abs() <= 1e-9 * sv[0]);
    }

    #[test]
    fn p3p_solutions_are_aligned(truth in pose(FrameTag::QueryToWorld), kps in prop::array::uniform3(keypoint())) {
        let c = consistent(&truth, &kps);
        prop_assume!(c.len() == 3);
        let triple = [c[0], c[1], c[2]];
        for sol in p3p_solve(&triple) {
            for corr in &triple {
                let q = sol.transform(&corr.p);
                let angle = q.normalize().dot(&corr.bearing).clamp(-1.0, 1.0).acos();
                prop_assert!(angle <= P3P_ALIGNMENT_TOL, "angle {angle}");
            }
        }
    }

    #[test]
    fn msac_inliers_grow_with_thresholds(
        truth in pose(FrameTag::QueryToWorld),
        offset in vec3(0.05),
        kps in prop::collection::vec(keypoint(), 10..40),
        scale in 1.0f64..10.0,
    ) {
        let c = consistent(&truth, &kps);
        let p = truth.perturbed(&offset, &offset);
        let small = MsacThresholds { epipolar_sq: 1e-6, depth_sq: 1e-3, lambda: 1e-4 };
        let large = MsacThresholds {
            epipolar_sq: small.epipolar_sq * scale,
            depth_sq: small.depth_sq * scale,
            lambda: small.lambda,
        };
        prop_assert!(msac_score(&c, &p, &large).num_inliers() >= msac_score(&c, &p, &small).num_inliers());
    }

    #[test]
    fn refinement_never_increases_cost(
        truth in pose(FrameTag::QueryToWorld),
        omega in vec3(0.05),
        delta in vec3(0.1),
        kps in prop::collection::vec(keypoint(), 8..40),
        noise in prop::collection::vec(-0.02f64..0.02, 40),
    ) {
        let mut c = consistent(&truth, &kps);
        let k = intrinsics();
        for (corr, n) in c.iter_mut().zip(&noise) {
            *corr = Correspondence::new(corr.u, corr.z_tof * (1.0 + n), corr.bearing, &k).unwrap();
        }
        let init = truth.perturbed(&omega, &delta);
        if let Ok(rep) = refine_pose_with(&c, &init, 1e-4, &LmOptions::default()) {
            prop_assert!(rep.final_cost <= rep.initial_cost);
            let before = total_cost(&c, &init, 1e-4).unwrap();
            let after = total_cost(&c, &rep.pose, 1e-4).unwrap();
            prop_assert!(after <= before * (1.0 + 1e-12));
        }
    }

    #[test]
    fn closest_points_are_symmetric_and_incident(
        oa in vec3(5.0), ob in vec3(5.0), da in direction(), db in direction(),
    ) {
        let a = Line3::new(oa, da);
        let b = Line3::new(ob, db);
        if let (Ok((pa, pb)), Ok((qb, qa))) = (closest_points(&a, &b), closest_points(&b, &a)) {
            prop_assert!(((pa - pb).norm() - (qa - qb).norm()).abs() <= 1e-9);
            prop_assert!(a.distance_to_point(&pa) <= 1e-12 * (1.0 + pa.norm()));
            prop_assert!(b.distance_to_point(&pb) <= 1e-12 * (1.0 + pb.norm()));
        }
    }

    #[test]
    fn lines_through_one_point_recover_it(
        c in vec3(10.0),
        dirs in prop::collection::vec(direction(), 5..60),
        k_frac in 0.0f64..1.0,
        bw in 1e-6f64..100.0,
    ) {
        let lines: Vec<Line3> = dirs.iter().map(|d| Line3::new(c, *d)).collect();
        let k = 2 + ((lines.len() - 3) as f64 * k_frac) as usize;
        for idx in [0, lines.len() - 1] {
            if let Ok(p) = recover_point(&lines, idx, k, bw) {
                prop_assert!((p - c).norm() <= 1e-9);
            }
        }
    }

    #[test]
    fn attack_is_equivariant(
        pts in prop::collection::vec((vec3(2.0), direction()), 30..60),
        r in rotation(),
        t in vec3(10.0),
    ) {
        let lines: Vec<Line3> = pts.iter().map(|(o, d)| Line3::new(*o, *d)).collect();
        let cfg = AttackConfig { k_neighbors: 10, bandwidth: Bandwidth::Absolute(0.2) };
        let base = run_attack_on_lines(&lines, &cfg, None).unwrap();
        let moved: Vec<Line3> = lines
            .iter()
            .map(|l| Line3::new(r * l.origin + t, UnitVec3::new_unchecked(r * l.direction.into_inner())))
            .collect();
        let out = run_attack_on_lines(&moved, &cfg, None).unwrap();
        for (a, b) in base.recovered.iter().zip(&out.recovered) {
            prop_assert!(((r * a + t) - b).norm() <= 1e-9 * (1.0 + b.norm()));
        }
    }

    #[test]
    fn construction_is_deterministic(
        pts in prop::collection::vec(vec3(5.0), 10..50),
        eta in 0.2f64..1.0,
        seed in any::<u64>(),
    ) {
        let pc = PointCloud::new(
            pts.iter().enumerate().map(|(i, p)| MapPoint {
                position: *p + Vec3::repeat(0.01 * i as f64),
                descriptor: vec![i as f32],
                color: [0, 0, 0],
            }).collect(),
            1,
        ).unwrap();
        let params = ConstructionParams { eta, seed, ..Default::default() };
        if let (Ok((a, sa)), Ok((b, sb))) = (build_sphere_cloud(&pc, &params), build_sphere_cloud(&pc, &params)) {
            prop_assert_eq!(encode_cloud(&Cloud::Sphere(a)).unwrap(), encode_cloud(&Cloud::Sphere(b)).unwrap());
            prop_assert_eq!(sa, sb);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn estimates_pass_cheirality_on_inliers_and_ignore_thread_count(
        truth in pose(FrameTag::QueryToWorld),
        kps in prop::collection::vec(keypoint(), 60..120),
        junk in prop::collection::vec(direction(), 30),
        seed in any::<u64>(),
    ) {
        let mut c = consistent(&truth, &kps);
        prop_assume!(c.len() >= 40);
        // Replace some bearings with unrelated directions.
        for (corr, d) in c.iter_mut().step_by(3).zip(&junk) {
            corr.bearing = *d;
        }
        let k = intrinsics();
        let cfg = RansacConfig { seed, ..Default::default() };
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
                .install(|| estimate_pose(&c, &k, &cfg))
        };
        let one = run(1);
        let four = run(4);
        match (&one, &four) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.pose, b.pose);
                prop_assert_eq!(&a.inlier_mask, &b.inlier_mask);
                prop_assert_eq!(a.msac_score.to_bits(), b.msac_score.to_bits());
                for (corr, _) in c.iter().zip(&a.inlier_mask).filter(|(_, m)| **m) {
                    prop_assert!(cheirality_depth(corr, &a.pose).unwrap() > 0.0);
                    prop_assert!(predicted_depth(corr, &a.pose).unwrap() > 0.0);
                }
            }
            (Err(a), Err(b)) => prop_assert_eq!(a, b),
            _ => prop_assert!(false, "thread count changed the outcome"),
        }
    }
}
