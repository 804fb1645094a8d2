mod common;

use egavatar::headmodel::pose_mesh;
use egavatar::math::Vec3;
use egavatar::uvmaps::{apply_bump, fine_normals, sample_map, UvGeometry, UvMap};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn coarse() -> UvGeometry<f64> {
    let av = common::small_avatar();
    let mesh = pose_mesh(&av.rig, &av.params).unwrap();
    av.raster_uv().interpolate(&mesh, &av.rig)
}

fn noise_map(res: usize, amp: f64, seed: u64) -> UvMap<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    UvMap::from_fn(res, |_, _| rng.random_range(-amp..amp))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn doubling_the_bump_doubles_the_offset(seed in any::<u64>()) {
        let geom = coarse();
        let bump = noise_map(geom.res(), 1e-3, seed);
        let twice = bump.map(|b| 2.0 * b);
        let one = apply_bump(geom.clone(), &bump);
        let two = apply_bump(geom.clone(), &twice);
        for k in 0..geom.valid.data.len() {
            let d1 = one.fine_pos.data[k] - geom.coarse_pos.data[k];
            let d2 = two.fine_pos.data[k] - geom.coarse_pos.data[k];
            prop_assert!((d2 - d1 * 2.0).norm() < 1e-15, "texel {k}");
        }
    }

    #[test]
    fn validity_ignores_bump_and_normals(seed in any::<u64>(), amp in 0.0..5e-3f64) {
        let geom = coarse();
        let valid = geom.valid.clone();
        let fine = fine_normals(apply_bump(geom, &noise_map(valid.res, amp, seed)));
        prop_assert_eq!(&fine.valid, &valid);
        for (k, &ok) in valid.data.iter().enumerate() {
            let (c, f) = (fine.coarse_normal.data[k], fine.fine_normal.data[k]);
            if ok {
                prop_assert!((c.norm() - 1.0).abs() < 1e-5 && (f.norm() - 1.0).abs() < 1e-5);
            } else {
                prop_assert_eq!(f, Vec3::zero());
            }
        }
    }

    #[test]
    fn sampling_is_linear_in_the_map(
        res in 2usize..12,
        seed in any::<u64>(),
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
        u in 0.0..=1.0f64,
        v in 0.0..=1.0f64,
    ) {
        let m1 = noise_map(res, 1.0, seed);
        let m2 = noise_map(res, 1.0, seed ^ 1);
        let mix = UvMap::from_fn(res, |i, j| a * m1.get(i, j) + b * m2.get(i, j));
        let lhs: f64 = sample_map(&mix, u, v);
        let rhs = a * sample_map(&m1, u, v) + b * sample_map(&m2, u, v);
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }
}

#[test]
fn albedo_edits_leave_geometry_alone() {
    let av = common::small_avatar();
    let mut edited = av.clone();
    let mut tex = edited.textures.clone();
    tex.albedo = tex.albedo.map(|c| Vec3::new(1.0, 1.0, 1.0) - *c);
    edited.set_textures(tex).unwrap();
    let a = av.generate(&av.params).unwrap().cloud;
    let b = edited.generate(&av.params).unwrap().cloud;
    assert_eq!(a.positions, b.positions);
    assert_eq!(a.normals, b.normals);
}
