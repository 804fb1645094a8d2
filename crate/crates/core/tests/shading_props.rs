mod common;

use std::sync::OnceLock;

use egavatar::desk::scene_camera;
use egavatar::gaussgen::{GaussianCloud, Group, Splat};
use egavatar::math::{Quat, Vec3};
use egavatar::pipeline::Frame;
use egavatar::shading::{occlusion_map, shade_unclamped, sh_irradiance, sh_irradiance_unclamped, Background, OcclusionConfig, ShLighting};
use egavatar::splatter::{rasterize, RasterConfig};
use proptest::prelude::*;

fn lighting() -> impl Strategy<Value = ShLighting<f64>> {
    proptest::collection::vec(-1.0..1.0f64, 27).prop_map(|v| ShLighting::from_flat(&v).unwrap())
}

fn base_frame() -> &'static Frame<f64> {
    static F: OnceLock<Frame<f64>> = OnceLock::new();
    F.get_or_init(|| {
        let av = common::small_avatar();
        let cloud = av.generate(&av.params).unwrap().cloud;
        let cam = av.orbit_camera(0.3, 0.55, 64, 64).unwrap();
        av.render_cloud(&cloud, &cam, &av.lighting).unwrap()
    })
}

fn flat(x: f64, y: f64, z: f64, scale: f64) -> Splat<f64> {
    Splat {
        position: Vec3::new(x, y, z),
        normal: Vec3::new(0.0, 0.0, -1.0),
        color: Vec3::new(0.7, 0.7, 0.7),
        scale: Vec3::new(scale, scale, 1e-4),
        rotation: Quat::identity(),
        opacity: 1.0,
        group: Group::Face,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn shading_is_linear_in_the_lighting(l1 in lighting(), l2 in lighting(), a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let buf = &base_frame().buffers;
        let occ = occlusion_map(buf, &common::small_avatar().orbit_camera(0.3, 0.55, 64, 64).unwrap(), &OcclusionConfig::default());
        let black = Background::Constant(Vec3::zero());
        let mix = ShLighting::from_flat(&l1.to_flat().iter().zip(l2.to_flat()).map(|(x, y)| a * x + b * y).collect::<Vec<_>>()).unwrap();
        let i1 = shade_unclamped(buf, &l1, &black, &occ).unwrap();
        let i2 = shade_unclamped(buf, &l2, &black, &occ).unwrap();
        let im = shade_unclamped(buf, &mix, &black, &occ).unwrap();
        let lit = |l: &ShLighting<f64>, n: Vec3<f64>| {
            let e = sh_irradiance_unclamped(l, n);
            e.x >= 0.0 && e.y >= 0.0 && e.z >= 0.0
        };
        let mut checked = 0;
        for k in 0..im.pixels.len() {
            // Linearity holds where no irradiance hits the max(0, ·) clamp.
            if let Some(n) = buf.normal(k).normalized() {
                if !(lit(&l1, n) && lit(&l2, n) && lit(&mix, n)) {
                    continue;
                }
            }
            checked += 1;
            let want = i1.pixels[k] * a + i2.pixels[k] * b;
            prop_assert!((im.pixels[k] - want).max_abs() < 1e-9);
        }
        prop_assert!(checked > 0);
    }

    #[test]
    fn relighting_leaves_buffers_untouched(l in lighting()) {
        let av = common::small_avatar();
        let cloud = av.generate(&av.params).unwrap().cloud;
        let cam = av.orbit_camera(0.3, 0.55, 64, 64).unwrap();
        let lit = av.render_cloud(&cloud, &cam, &l).unwrap();
        prop_assert_eq!(&lit.buffers, &base_frame().buffers);
    }

    #[test]
    fn irradiance_is_never_negative(l in lighting(), x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64) {
        if let Some(n) = Vec3::new(x, y, z).normalized() {
            let e = sh_irradiance(&l, n);
            prop_assert!(e.x >= 0.0 && e.y >= 0.0 && e.z >= 0.0);
        }
    }

    #[test]
    fn occluders_above_the_surface_never_brighten(
        blobs in proptest::collection::vec((-0.2..0.2f64, -0.2..0.2f64, 0.02..0.2f64, 0.005..0.03f64), 1..6),
    ) {
        let cam = scene_camera::<f64>(48, 48);
        let cfg = OcclusionConfig::default();
        let depth = 0.6;
        let mut plane = GaussianCloud::new();
        plane.push(flat(0.0, 0.0, depth, 1.0));
        let before = occlusion_map(&rasterize(&plane, &cam, &RasterConfig::default()), &cam, &cfg);
        for &(x, y, lift, s) in &blobs {
            plane.push(flat(x, y, depth - lift, s));
        }
        let buf = rasterize(&plane, &cam, &RasterConfig::default());
        let after = occlusion_map(&buf, &cam, &cfg);
        for (k, (a, b)) in after.iter().zip(&before).enumerate() {
            prop_assert!((0.0..=1.0).contains(a));
            prop_assert!(*a <= *b + 1e-12, "pixel {}: {} > {}", k, a, b);
        }
    }
}

#[test]
fn flat_plane_alone_is_unoccluded() {
    let cam = scene_camera::<f64>(48, 48);
    let mut plane = GaussianCloud::new();
    plane.push(flat(0.0, 0.0, 0.6, 1.0));
    let occ = occlusion_map(&rasterize(&plane, &cam, &RasterConfig::default()), &cam, &OcclusionConfig::default());
    assert!(occ.iter().all(|o| *o == 1.0));
}
