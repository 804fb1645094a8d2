mod common;

use std::sync::OnceLock;

use egavatar::gradients::{
    backward, forward, r1_penalty, reg_bump_l1, reg_smoothness, reg_symmetry, GradScene, LeafClass, OcclusionSource, ParamSet, Trace,
};
use egavatar::math::Vec3;
use egavatar::shading::{Background, OcclusionConfig};
use egavatar::splatter::RasterConfig;
use egavatar::uvmaps::UvMap;
use proptest::prelude::*;

struct Fixture {
    scene: GradScene<f64>,
    params: ParamSet<f64>,
    trace: Trace<f64>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let av = common::small_avatar();
        let cam = av.orbit_camera(0.2, 0.55, 32, 32).unwrap();
        let scene = GradScene::new(
            &av.rig,
            av.raster_uv(),
            &av.params,
            av.settings.alpha_head,
            av.epsilon(),
            cam,
            RasterConfig::default(),
            Background::Constant(Vec3::new(1.0, 1.0, 1.0)),
            OcclusionSource::Estimate(OcclusionConfig::default()),
        )
        .unwrap();
        let params = ParamSet::new(&av.textures, &av.lighting);
        let trace = forward(&scene, &params).unwrap();
        Fixture { scene, params, trace }
    })
}

fn adjoint(seed: u64) -> Vec<Vec3<f64>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..32 * 32)
        .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

fn map(res: usize) -> impl Strategy<Value = UvMap<f64>> {
    proptest::collection::vec(-1.0..1.0f64, res * res).prop_map(move |data| UvMap { res, data })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn backward_is_linear_in_the_adjoint(s1 in any::<u64>(), s2 in any::<u64>(), a in -2.0..2.0f64) {
        let f = fixture();
        let (d1, d2) = (adjoint(s1), adjoint(s2));
        let mix: Vec<Vec3<f64>> = d1.iter().zip(&d2).map(|(x, y)| *x * a + *y).collect();
        let g1 = backward(&f.scene, &f.params, &f.trace, &d1).unwrap();
        let g2 = backward(&f.scene, &f.params, &f.trace, &d2).unwrap();
        let gm = backward(&f.scene, &f.params, &f.trace, &mix).unwrap();
        for class in LeafClass::ALL {
            let (v1, v2, vm) = (g1.flat(class), g2.flat(class), gm.flat(class));
            let scale = vm.iter().chain(&v1).chain(&v2).fold(1e-300f64, |m, x| m.max(x.abs()));
            for k in 0..vm.len() {
                prop_assert!((vm[k] - (a * v1[k] + v2[k])).abs() <= 1e-10 * scale, "{} {}", class.name(), k);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn regularizers_are_non_negative(m in map(9), grads in proptest::collection::vec(proptest::collection::vec(-3.0..3.0f64, 4), 0..4)) {
        prop_assert!(reg_smoothness::<f64, f64>(&m, None) >= 0.0);
        prop_assert!(reg_symmetry::<f64, f64>(&m, None) >= 0.0);
        prop_assert!(reg_bump_l1(&m, None) >= 0.0);
        prop_assert!(r1_penalty(&grads, 10.0) >= 0.0);
    }

    #[test]
    fn regularizers_vanish_on_their_null_spaces(c in -1.0..1.0f64, m in map(8)) {
        let constant = UvMap::filled(8, c);
        prop_assert_eq!(reg_smoothness::<f64, f64>(&constant, None), 0.0);
        let mirrored = UvMap::from_fn(8, |i, j| m.get(i, j) + m.get(7 - i, j));
        prop_assert_eq!(reg_symmetry::<f64, f64>(&mirrored, None), 0.0);
        prop_assert_eq!(reg_bump_l1(&UvMap::filled(8, 0.0), None), 0.0);
        prop_assert_eq!(r1_penalty(&[vec![0.0; 5]], 10.0), 0.0);
    }
}
