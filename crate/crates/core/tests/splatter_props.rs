mod common;

use egavatar::desk::{random_cloud, scene_camera};
use egavatar::gaussgen::{GaussianCloud, Group, Splat};
use egavatar::math::{Quat, Vec3};
use egavatar::splatter::{rasterize, rasterize_reference, RasterConfig, CH_MASK};
use proptest::prelude::*;

fn disk(z: f64, group: Group) -> Splat<f64> {
    Splat {
        position: Vec3::new(0.0, 0.0, z),
        normal: Vec3::new(0.0, 0.0, -1.0),
        color: Vec3::new(0.5, 0.5, 0.5),
        scale: Vec3::new(0.2, 0.2, 1e-4),
        rotation: Quat::identity(),
        opacity: 1.0,
        group,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn coverage_equals_accumulated_weight(n in 0usize..600, seed in any::<u64>()) {
        let cloud = random_cloud::<f64>(n, 1.0, seed);
        let buf = rasterize(&cloud, &scene_camera(48, 48), &RasterConfig::default());
        for i in 0..buf.len() {
            let a = buf.alpha[i];
            prop_assert!((0.0..=1.0).contains(&a));
            let m = buf.mask(i);
            prop_assert!(m.iter().all(|c| (0.0..=1.0 + 1e-12).contains(c)));
            prop_assert!((m.iter().sum::<f64>() - a).abs() < 1e-9);
        }
    }

    #[test]
    fn tiles_match_the_reference(n in 1usize..800, seed in any::<u64>(), w in 16usize..80, h in 16usize..80) {
        let cloud = random_cloud::<f64>(n, w as f64 / h as f64, seed);
        let cam = scene_camera(w, h);
        let cfg = RasterConfig::default();
        let d = rasterize(&cloud, &cam, &cfg).max_abs_diff(&rasterize_reference(&cloud, &cam, &cfg));
        prop_assert!(d < 1e-4, "{d}");
    }

    #[test]
    fn rendering_is_deterministic_across_thread_counts(n in 1usize..2000, seed in any::<u64>()) {
        let cloud = random_cloud::<f32>(n, 1.0, seed);
        let cam = scene_camera(64, 64);
        let cfg = RasterConfig::default();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = rasterize(&cloud, &cam, &cfg);
        let b = pool.install(|| rasterize(&cloud, &cam, &cfg));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn depth_comes_from_the_nearer_opaque_surface(near in 0.3..0.6f64, gap in 0.05..0.4f64, near_first in any::<bool>()) {
        let cam = scene_camera(33, 33);
        let mut cloud = GaussianCloud::new();
        let (a, b) = (disk(near, Group::Face), disk(near + gap, Group::Hair));
        if near_first { cloud.push(a); cloud.push(b); } else { cloud.push(b); cloud.push(a); }
        let buf = rasterize(&cloud, &cam, &RasterConfig::default());
        let centre = 16 * 33 + 16;
        let d = buf.surface_distance(centre).unwrap();
        // The 0.99 opacity clamp lets about 1% of the far layer through.
        prop_assert!(d >= near - 1e-9 && d - near <= 0.011 * gap, "{d} vs {near}");
        prop_assert!(buf.mask(centre)[1] > 0.98);
    }
}

#[test]
fn face_only_clouds_leave_the_hair_channel_empty() {
    let av = common::small_avatar();
    let g = av.generate(&av.params).unwrap();
    let mut face = GaussianCloud::new();
    for k in 0..g.n_face() {
        face.push(g.cloud.get(k));
    }
    assert!(!face.is_empty());
    let cam = av.orbit_camera(0.4, 0.5, 96, 96).unwrap();
    let buf = rasterize(&face, &cam, &RasterConfig::default());
    assert!(buf.alpha.iter().any(|a| *a > 0.5));
    assert!(buf.payload.iter().all(|p| p[CH_MASK + 2] == 0.0));
}
