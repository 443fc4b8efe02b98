use corrfield::corres::{filter_projection, triangulate_cloud, Correspondence};
use corrfield::geometry::{pixel_to_ray, project, projected_ray_distance, Camera, CameraSet, PixelCoord};
use corrfield::linalg::Vec3;
use corrfield::synth::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn v(x: f64, y: f64, z: f64) -> Vec3<f64> {
    Vec3::new(x, y, z)
}

fn axis_camera(size: u32, distance: f64) -> Camera<f64> {
    Camera::look_at(v(0.0, 0.0, -distance), Vec3::zero(), v(0.0, 1.0, 0.0), 1.3 * size as f64, size, size).unwrap()
}

fn lone_sphere() -> AnalyticScene {
    AnalyticScene {
        name: "sphere".into(),
        primitives: vec![Primitive::Sphere {
            center: Vec3::zero(),
            radius: 1.0,
            texture: Texture::Constant { color: [0.5, 0.5, 0.5] },
        }],
        background: [0.0; 3],
        near: 1.0,
        far: 10.0,
    }
}

/// Distance from `p` to the nearest primitive surface.
fn surface_distance(scene: &AnalyticScene, p: &Vec3<f64>) -> f64 {
    scene
        .primitives
        .iter()
        .map(|prim| match prim {
            Primitive::Sphere { center, radius, .. } => ((*p - *center).norm() - radius).abs(),
            Primitive::Plane { point, normal, .. } => (*p - *point).dot(normal).abs() / normal.norm(),
            Primitive::Box { min, max, .. } => {
                let c = (*min + *max) * 0.5;
                let h = (*max - *min) * 0.5;
                let q = Vec3::new((p.x() - c.x()).abs() - h.x(), (p.y() - c.y()).abs() - h.y(), (p.z() - c.z()).abs() - h.z());
                let outside = Vec3::new(q.x().max(0.0), q.y().max(0.0), q.z().max(0.0)).norm();
                (outside + q.x().max(q.y()).max(q.z()).min(0.0)).abs()
            }
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn plane_filling_the_frame_renders_constant() {
    let scene = AnalyticScene {
        name: "wall".into(),
        primitives: vec![Primitive::Plane {
            point: v(0.0, 0.0, 2.0),
            normal: v(0.0, 0.0, -1.0),
            texture: Texture::Constant { color: [0.2, 0.4, 0.6] },
        }],
        background: [0.0; 3],
        near: 1.0,
        far: 10.0,
    };
    // orthographic-like check: every ray hits the plane, depth along the ray
    // equals 3 / cos(angle to the axis)
    let cam = axis_camera(16, 1.0);
    let (img, depth) = render_ground_truth(&scene, &cam).unwrap();
    assert!(img.pixels.iter().all(|p| *p == [0.2, 0.4, 0.6]));
    for vv in 0..16 {
        for u in 0..16 {
            let ray = pixel_to_ray(&cam, &PixelCoord::new(u as f64, vv as f64), 0.0, 1.0).unwrap();
            let want = 3.0 / ray.direction().z();
            let got = depth.values[(vv * 16 + u) as usize];
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }
}

#[test]
fn sphere_center_depth() {
    let cam = axis_camera(65, 4.0);
    let (_, depth) = render_ground_truth(&lone_sphere(), &cam).unwrap();
    let center = depth.values[32 * 65 + 32];
    assert!((center - 3.0).abs() < 1e-12, "{center}");
    assert!(depth.values[0].is_infinite());
}

#[test]
fn sphere_silhouette_matches_projected_disk() {
    let size = 256;
    let d = 4.0;
    let cam = axis_camera(size, d);
    let (_, depth) = render_ground_truth(&lone_sphere(), &cam).unwrap();
    let hits = depth.values.iter().filter(|z| z.is_finite()).count() as f64;
    // tangent cone half-angle asin(r/d); its image is a disk of radius f tan(alpha)
    let f = 1.3 * size as f64;
    let alpha = (1.0f64 / d).asin();
    let area = std::f64::consts::PI * (f * alpha.tan()).powi(2);
    assert!((hits - area).abs() / area < 0.02, "{hits} vs {area}");
}

#[test]
fn scene_json_round_trip() {
    for kind in SceneKind::ALL {
        let scene = canonical_scene(kind);
        assert!(scene.validate().is_ok());
        let back = AnalyticScene::from_json(&scene.to_json()).unwrap();
        assert_eq!(back, scene);
    }
    assert!(AnalyticScene::from_json(r#"{"name":"x","primitives":[],"background":[0,0,0],"near":1,"far":2,"extra":1}"#).is_err());
}

#[test]
fn default_rig_has_three_train_and_eight_test_views() {
    let rig = camera_rig(&RigConfig::default()).unwrap();
    assert_eq!(rig.ids_with_split("train").len(), 3);
    assert_eq!(rig.ids_with_split("test").len(), 8);
}

fn two_views() -> (AnalyticScene, CameraSet) {
    let scene = canonical_scene(SceneKind::PlaneSphere);
    let cams = camera_rig(&RigConfig { width: 48, height: 48, ..Default::default() }).unwrap();
    (scene, cams)
}

#[test]
fn clean_matches_are_consistent_and_on_the_surface() {
    let (scene, cams) = two_views();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (cq, cs) = (cams.get(0).unwrap(), cams.get(1).unwrap());
    let m = synthesize_correspondences(&scene, cq, cs, (0, 1), 2, &CorruptionSpec::clean(), &mut rng);
    assert!(m.correspondences.len() > 300);
    assert!(!m.no_covisible);
    for c in &m.correspondences {
        let d = projected_ray_distance(cq, cs, &c.p_q, &c.p_s).unwrap();
        assert!(d < 1e-6, "{d}");
        assert_eq!(c.confidence, 1.0);
    }
    let (kept, _) = filter_projection(&m.correspondences, &cams, 1e-3).unwrap();
    assert_eq!(kept.len(), m.correspondences.len());

    let cloud = triangulate_cloud(&m.correspondences, &cams).unwrap();
    assert_eq!(cloud.skipped, 0);
    for p in &cloud.points {
        assert!(surface_distance(&scene, p) < 1e-6);
    }
}

#[test]
fn clean_sphere_matches_triangulate_onto_the_sphere() {
    let scene = lone_sphere();
    let cams = camera_rig(&RigConfig { width: 64, height: 64, ..Default::default() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = synthesize_correspondences(&scene, cams.get(0).unwrap(), cams.get(2).unwrap(), (0, 2), 1, &CorruptionSpec::clean(), &mut rng);
    assert!(m.correspondences.len() > 500);
    let cloud = triangulate_cloud(&m.correspondences, &cams).unwrap();
    for p in &cloud.points {
        assert!((p.norm() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn no_shared_surface_gives_empty_flagged_set() {
    let cams = camera_rig(&RigConfig { width: 16, height: 16, ..Default::default() }).unwrap();
    let empty = AnalyticScene { primitives: vec![], ..lone_sphere() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let m = synthesize_correspondences(&empty, cams.get(0).unwrap(), cams.get(1).unwrap(), (0, 1), 1, &CorruptionSpec::clean(), &mut rng);
    assert!(m.correspondences.is_empty());
    assert!(m.no_covisible);
}

#[test]
fn outlier_count_follows_the_binomial() {
    let scene = AnalyticScene {
        primitives: vec![Primitive::Plane { point: Vec3::zero(), normal: v(0.0, 0.0, -1.0), texture: Texture::Constant { color: [1.0; 3] } }],
        ..lone_sphere()
    };
    let cams = camera_rig(&RigConfig::default()).unwrap();
    let (cq, cs) = (cams.get(0).unwrap(), cams.get(1).unwrap());
    let queries: Vec<PixelCoord<f64>> = (0..1000).map(|i| PixelCoord::new((i % 40) as f64 + 10.0, (i / 40) as f64 + 10.0)).collect();
    let spec = CorruptionSpec { outlier_fraction: 0.1, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m = synthesize_at(&scene, cq, cs, (0, 1), &queries, &spec, &mut rng);
    assert_eq!(m.correspondences.len(), 1000);
    let sigma = (1000.0f64 * 0.1 * 0.9).sqrt();
    assert!((m.outliers as f64 - 100.0).abs() <= 3.0 * sigma, "{}", m.outliers);
    // outliers are the pairs whose support pixel moved
    let moved = m
        .correspondences
        .iter()
        .filter(|c| {
            let ray = pixel_to_ray(cq, &c.p_q, 0.0, 1.0).unwrap();
            let x = scene.intersect(&ray.origin(), &ray.direction()).unwrap().point;
            project(cs, &x).unwrap().distance(&c.p_s) > 1e-9
        })
        .count();
    assert_eq!(moved, m.outliers);
}

/// Two-sample Kolmogorov–Smirnov statistic.
fn ks(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Projected ray distance by an independent route: closest points from the
/// 2x2 normal equations, projection through `K [R | t]` written out.
fn d_proj_oracle(cq: &Camera<f64>, cs: &Camera<f64>, pq: &PixelCoord<f64>, ps: &PixelCoord<f64>) -> f64 {
    let dir = |c: &Camera<f64>, p: &PixelCoord<f64>| {
        let k = c.intrinsics().0;
        let xc = v((p.u - k[0][2]) / k[0][0], (p.v - k[1][2]) / k[1][1], 1.0);
        c.rotation().tr_mul_vec(&xc)
    };
    let (o1, d1, o2, d2) = (cq.center(), dir(cq, pq), cs.center(), dir(cs, ps));
    let w = o1 - o2;
    let (a, b, c, d, e) = (d1.dot(&d1), d1.dot(&d2), d2.dot(&d2), d1.dot(&w), d2.dot(&w));
    let den = a * c - b * b;
    let t1 = (b * e - c * d) / den;
    let t2 = (a * e - b * d) / den;
    let (x1, x2) = (o1 + d1 * t1, o2 + d2 * t2);
    let proj = |cam: &Camera<f64>, x: &Vec3<f64>| {
        let y = cam.intrinsics().mul_vec(&(cam.rotation().mul_vec(x) + *cam.translation()));
        PixelCoord::new(y.x() / y.z(), y.y() / y.z())
    };
    0.5 * (proj(cq, &x2).distance(pq) + proj(cs, &x1).distance(ps))
}

#[test]
fn noisy_projection_distance_matches_pushforward() {
    let (scene, cams) = two_views();
    let (cq, cs) = (cams.get(0).unwrap(), cams.get(1).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let clean = synthesize_correspondences(&scene, cq, cs, (0, 1), 1, &CorruptionSpec::clean(), &mut rng);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let noisy = synthesize_correspondences(&scene, cq, cs, (0, 1), 1, &CorruptionSpec::with_noise(1.0), &mut rng);
    assert_eq!(clean.correspondences.len(), noisy.correspondences.len());
    let empirical: Vec<f64> = noisy
        .correspondences
        .iter()
        .filter_map(|c| projected_ray_distance(cq, cs, &c.p_q, &c.p_s).ok())
        .collect();
    // brute force: fresh noise on the clean support pixels, four draws each,
    // dropping draws that leave the image as the empirical side does
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut orng = ChaCha8Rng::seed_from_u64(99);
    let oracle: Vec<f64> = clean
        .correspondences
        .iter()
        .flat_map(|c: &Correspondence| {
            (0..4)
                .filter_map(|_| {
                    let ps = PixelCoord::new(c.p_s.u + normal.sample(&mut orng), c.p_s.v + normal.sample(&mut orng));
                    cs.contains(&ps).then(|| d_proj_oracle(cq, cs, &c.p_q, &ps))
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let (n, m) = (empirical.len() as f64, oracle.len() as f64);
    // 99.9% critical value of the two-sample KS test
    let crit = 1.95 * ((n + m) / (n * m)).sqrt();
    let stat = ks(empirical, oracle);
    assert!(stat < crit, "KS {stat} >= {crit}");
}

proptest! {
    #[test]
    fn albedo_stays_in_unit_cube(x in -50.0..50.0f64, y in -50.0..50.0f64, z in -50.0..50.0f64) {
        let p = v(x, y, z);
        for kind in SceneKind::ALL {
            for prim in canonical_scene(kind).primitives {
                let c = prim.texture().albedo(&p);
                prop_assert!(c.iter().all(|c| (0.0..=1.0).contains(c)));
            }
        }
    }

    #[test]
    fn intersection_is_the_nearest_positive_hit(
        ox in -3.0..3.0f64, oy in -3.0..3.0f64, dx in -1.0..1.0f64, dy in -1.0..1.0f64, kind in 0usize..3,
    ) {
        let scene = canonical_scene(SceneKind::ALL[kind]);
        let o = v(ox, oy, -5.0);
        let d = v(dx, dy, 1.0).normalized().unwrap();
        if let Some(hit) = scene.intersect(&o, &d) {
            prop_assert!(hit.t > 0.0);
            prop_assert!(surface_distance(&scene, &hit.point) < 1e-9);
            // march from the origin: nothing solid strictly before the hit
            let steps = 2000;
            for i in 1..steps {
                let t = hit.t * i as f64 / steps as f64;
                let p = o + d * t;
                let inside = scene.primitives.iter().any(|prim| match prim {
                    Primitive::Sphere { center, radius, .. } => (p - *center).norm() < radius - 1e-9,
                    Primitive::Box { min, max, .. } => (0..3).all(|k| p[k] > min[k] + 1e-9 && p[k] < max[k] - 1e-9),
                    Primitive::Plane { .. } => false,
                });
                prop_assert!(!inside, "solid at t = {t} before hit {}", hit.t);
            }
        }
    }

    #[test]
    fn confidence_is_clamped_and_monotone(e1 in 0.0..50.0f64, e2 in 0.0..50.0f64) {
        let m = ConfidenceModel::default();
        let (a, b) = (m.confidence(e1), m.confidence(e2));
        prop_assert!((0.5..=1.0).contains(&a));
        if e1 <= e2 { prop_assert!(a >= b); }
    }
}
