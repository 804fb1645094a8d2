//! Deterministic procedural head: a rig, textures and hair model that stand
//! in for trained assets so everything runs offline.
//!
//! The head is a gently deformed ellipsoid tessellated from a subdivided
//! icosahedron. UVs are an azimuthal-equidistant map centered on the face
//! (`+z`), so the atlas is a single disk with no seams; the back cap beyond
//! `THETA_MAX` is cut away.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gaussgen::{grid_side, Dense, GaussianCloud, Group, HairDecoder, Splat, TriPlane, HAIR_HEAD_WIDTH};
use crate::error::Result;
use crate::headmodel::{EyeJoint, HeadParams, HeadRig, JawJoint};
use crate::math::{Mat3, Quat, Vec3};
use crate::pipeline::{Avatar, RenderSettings};
use crate::real::{logit, Real};
use crate::shading::ShLighting;
use crate::splatter::Camera;
use crate::uvmaps::{texel_center, TextureSet, UvMap};

/// Polar angle (from `+z`) past which the head surface is dropped.
pub const THETA_MAX: f64 = 0.8 * PI;
/// UV radius of the atlas disk.
pub const UV_RADIUS: f64 = 0.49;

const RADII: [f64; 3] = [0.085, 0.1, 0.095];

#[derive(Clone, Debug, PartialEq)]
pub struct DeskOptions {
    pub subdivisions: usize,
    pub t_tex: usize,
    pub alpha_head: f64,
    pub t_tri: usize,
    pub alpha_hair: f64,
    pub feature_dim: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for DeskOptions {
    fn default() -> Self {
        Self {
            subdivisions: 5,
            t_tex: 256,
            alpha_head: 0.5,
            t_tri: 64,
            alpha_hair: 1.0,
            feature_dim: 32,
            hidden: 64,
            seed: 0,
        }
    }
}

fn dir(x: f64, y: f64, z: f64) -> Vec3<f64> {
    Vec3::new(x, y, z).normalized().unwrap()
}

fn blob(d: Vec3<f64>, c: Vec3<f64>, sigma: f64) -> f64 {
    (-(d - c).norm_sq() / (2.0 * sigma * sigma)).exp()
}

fn nose_dir() -> Vec3<f64> {
    dir(0.0, 0.05, 1.0)
}

fn eye_dir(side: f64) -> Vec3<f64> {
    dir(side * 0.35, 0.2, 0.92)
}

const EYE_RADIUS: f64 = 0.14;

/// Head surface radius along unit direction `d`.
pub fn surface_radius(d: Vec3<f64>) -> f64 {
    let [a, b, c] = RADII;
    let ell = 1.0 / ((d.x / a).powi(2) + (d.y / b).powi(2) + (d.z / c).powi(2)).sqrt();
    ell + 0.006 * blob(d, nose_dir(), 0.25)
}

/// Unit direction of the surface point at atlas coordinates `(u, v)`.
pub fn uv_to_dir(u: f64, v: f64) -> Vec3<f64> {
    let (du, dv) = (u - 0.5, 0.5 - v);
    let r = (du * du + dv * dv).sqrt();
    let theta = r / UV_RADIUS * THETA_MAX;
    let phi = dv.atan2(du);
    Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
}

/// Atlas coordinates of unit direction `d`.
pub fn dir_to_uv(d: Vec3<f64>) -> [f64; 2] {
    let theta = d.z.clamp(-1.0, 1.0).acos();
    let phi = d.y.atan2(d.x);
    let r = UV_RADIUS * theta / THETA_MAX;
    [0.5 + r * phi.cos(), 0.5 - r * phi.sin()]
}

fn icosphere(levels: usize) -> (Vec<Vec3<f64>>, Vec<[u32; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vec3<f64>> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| dir(x, y, z))
    .collect();
    let mut f: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(f.len() * 4);
        let mut midpoint = |a: u32, b: u32, v: &mut Vec<Vec3<f64>>| -> u32 {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                v.push(((v[a as usize] + v[b as usize]) * 0.5).normalized().unwrap());
                (v.len() - 1) as u32
            })
        };
        for &[a, b, c] in &f {
            let ab = midpoint(a, b, &mut v);
            let bc = midpoint(b, c, &mut v);
            let ca = midpoint(c, a, &mut v);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = next;
    }
    (v, f)
}

type Field = fn(Vec3<f64>) -> Vec3<f64>;

fn identity_fields() -> [Field; 8] {
    [
        |d| d * 0.006,
        |d| d * (0.006 * (d.x * d.x - 0.33)),
        |d| d * (0.006 * (d.y * d.y - 0.33)),
        |d| d * (0.005 * (d.z * d.z - 0.33)),
        |d| d * (0.004 * d.y * d.z),
        |d| d * (0.004 * blob(d, nose_dir(), 0.22)),
        |d| d * (0.003 * (3.0 * d.y * d.y - 1.0) * d.z),
        |d| d * (0.003 * (blob(d, dir(0.55, -0.2, 0.8), 0.25) + blob(d, dir(-0.55, -0.2, 0.8), 0.25))),
    ]
}

fn mirrored(d: Vec3<f64>, c: [f64; 3], sigma: f64, v: [f64; 3]) -> Vec3<f64> {
    let mut out = Vec3::zero();
    for s in [1.0, -1.0] {
        let w = blob(d, dir(s * c[0], c[1], c[2]), sigma);
        out += Vec3::new(s * v[0], v[1], v[2]) * w;
    }
    out
}

fn expression_fields() -> [Field; 8] {
    [
        |d| mirrored(d, [0.35, -0.42, 0.84], 0.18, [0.4, 0.6, -0.2]) * 0.005,
        |d| mirrored(d, [0.3, 0.42, 0.86], 0.2, [0.0, 1.0, 0.0]) * 0.005,
        |d| d * (0.005 * (blob(d, dir(0.55, -0.2, 0.8), 0.22) + blob(d, dir(-0.55, -0.2, 0.8), 0.22))),
        |d| d * (0.006 * blob(d, dir(0.0, -0.45, 0.89), 0.15)),
        |d| mirrored(d, [0.18, 0.36, 0.92], 0.15, [-0.5, -0.6, 0.0]) * 0.004,
        |d| mirrored(d, [0.35, -0.42, 0.84], 0.18, [1.0, 0.0, 0.0]) * 0.005,
        |d| Vec3::new(0.0, 0.6, -0.4) * (0.003 * blob(d, dir(0.0, 0.1, 1.0), 0.15)),
        |d| d * (0.005 * blob(d, dir(0.0, -0.72, 0.69), 0.2)),
    ]
}

fn basis(dirs: &[Vec3<f64>], fields: &[Field]) -> Vec<f64> {
    let n = fields.len();
    let mut out = vec![0.0; dirs.len() * 3 * n];
    for (v, &d) in dirs.iter().enumerate() {
        for (k, f) in fields.iter().enumerate() {
            let disp = f(d).to_array();
            for axis in 0..3 {
                out[(v * 3 + axis) * n + k] = disp[axis];
            }
        }
    }
    out
}

/// Procedural rig: `n_id = n_exp = 8`, binary jaw set, two eye patches.
pub fn desk_rig(opts: &DeskOptions) -> HeadRig<f64> {
    let (sphere, faces) = icosphere(opts.subdivisions);
    let keep: Vec<bool> = sphere.iter().map(|d| d.z.clamp(-1.0, 1.0).acos() <= THETA_MAX).collect();
    let faces: Vec<[u32; 3]> = faces.into_iter().filter(|t| t.iter().all(|&i| keep[i as usize])).collect();
    let mut used = vec![false; sphere.len()];
    for &i in faces.iter().flatten() {
        used[i as usize] = true;
    }
    let mut remap = vec![u32::MAX; sphere.len()];
    let mut dirs = Vec::new();
    for (i, d) in sphere.iter().enumerate() {
        if used[i] {
            remap[i] = dirs.len() as u32;
            dirs.push(*d);
        }
    }
    let faces: Vec<[u32; 3]> = faces.iter().map(|t| t.map(|i| remap[i as usize])).collect();
    let template: Vec<Vec3<f64>> = dirs.iter().map(|&d| d * surface_radius(d)).collect();
    let uv: Vec<[f64; 2]> = dirs.iter().map(|&d| dir_to_uv(d)).collect();
    let jaw_vertices = (0..dirs.len() as u32)
        .filter(|&i| {
            let d = dirs[i as usize];
            d.y < -0.25 && d.z > 0.1
        })
        .collect();
    let eye_vertices = [1.0, -1.0].map(|s| {
        let e = eye_dir(s);
        (0..dirs.len() as u32)
            .filter(|&i| dirs[i as usize].dot(e).clamp(-1.0, 1.0).acos() < EYE_RADIUS)
            .collect::<Vec<u32>>()
    });
    let eyes = [1.0, -1.0].map(|s| {
        let e = eye_dir(s);
        EyeJoint {
            pivot: e * (surface_radius(e) - 0.012),
            yaw_axis: Vec3::new(0.0, 1.0, 0.0),
            pitch_axis: Vec3::new(1.0, 0.0, 0.0),
        }
    });
    let mut rig = HeadRig {
        n_id: 8,
        n_exp: 8,
        identity_basis: basis(&dirs, &identity_fields()),
        expression_basis: basis(&dirs, &expression_fields()),
        template,
        jaw: JawJoint {
            pivot: Vec3::new(0.0, -0.01, -0.01),
            axis: Vec3::new(1.0, 0.0, 0.0),
        },
        jaw_vertices,
        eyes,
        eye_vertices,
        faces,
        uv,
        eye_uv_mask: UvMap::filled(0, false),
    };
    rig.rebuild_eye_mask(opts.t_tex);
    rig
}

fn mix(a: Vec3<f64>, b: Vec3<f64>, t: f64) -> Vec3<f64> {
    a * (1.0 - t) + b * t
}

fn quantize(c: Vec3<f64>) -> Vec3<f64> {
    c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

fn albedo_at(d: Vec3<f64>, noise: f64) -> Vec3<f64> {
    let mut c = Vec3::new(0.80, 0.60, 0.50);
    let scalp = ((d.y - 0.55) / 0.15).clamp(0.0, 1.0).max(((-d.z - 0.1) / 0.3).clamp(0.0, 1.0));
    c = mix(c, Vec3::new(0.33, 0.24, 0.19), scalp);
    let blush = blob(d, dir(0.55, -0.2, 0.8), 0.15) + blob(d, dir(-0.55, -0.2, 0.8), 0.15);
    c = mix(c, Vec3::new(0.85, 0.50, 0.48), 0.35 * blush.min(1.0));
    let lips = blob(d, dir(0.0, -0.45, 0.89), 0.09) * (-((d.y + 0.41) / 0.045).powi(2)).exp().max(0.3);
    c = mix(c, Vec3::new(0.70, 0.32, 0.33), lips.min(1.0));
    for s in [1.0, -1.0] {
        let brow = (-((d.x - s * 0.3) / 0.12).powi(2) - ((d.y - 0.45) / 0.03).powi(2)).exp();
        c = mix(c, Vec3::new(0.25, 0.17, 0.12), brow * (d.z > 0.0) as u8 as f64);
        let a = d.dot(eye_dir(s)).clamp(-1.0, 1.0).acos();
        if a < EYE_RADIUS * 0.85 {
            c = if a < 0.025 {
                Vec3::new(0.05, 0.05, 0.05)
            } else if a < 0.06 {
                Vec3::new(0.25, 0.35, 0.50)
            } else {
                Vec3::new(0.92, 0.92, 0.90)
            };
        }
    }
    quantize(c.map(|v| v + noise))
}

fn bump_at(d: Vec3<f64>) -> f64 {
    let forehead = blob(d, dir(0.0, 0.45, 0.9), 0.2);
    0.0003 * (140.0 * d.y).sin() * forehead
}

/// Procedural albedo (8-bit quantized), bump and disk scales.
pub fn desk_textures(opts: &DeskOptions) -> TextureSet<f64> {
    let res = opts.t_tex;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x00A1_BED0);
    let albedo = UvMap::from_fn(res, |i, j| {
        let d = uv_to_dir(texel_center(i, res), texel_center(j, res));
        albedo_at(d, rng.random_range(-0.015..0.015))
    });
    let bump = UvMap::from_fn(res, |i, j| bump_at(uv_to_dir(texel_center(i, res), texel_center(j, res))));
    // Radial arc length of one grid step at the front of the face.
    let n = grid_side(opts.alpha_head, res).max(1) as f64;
    let step = THETA_MAX * RADII[2] / UV_RADIUS / n;
    TextureSet {
        albedo,
        bump,
        disk_scale: [0.75 * step, 0.75 * step],
    }
}

fn hair_region(d: Vec3<f64>) -> bool {
    d.y > 0.55 || (d.z < 0.2 && d.y > -0.3) || d.z < -0.3
}

/// Hair decoder and tri-plane with seeded weights.
pub fn desk_hair(opts: &DeskOptions, cond_dim: usize) -> (HairDecoder<f64>, TriPlane<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x4A_12);
    let n_hair = grid_side(opts.alpha_hair, opts.t_tri).pow(2);
    let mut bias = Vec::with_capacity(n_hair);
    while bias.len() < n_hair {
        let d = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0f64),
        );
        let r2 = d.norm_sq();
        if !(r2 > 1e-6 && r2 <= 1.0) {
            continue;
        }
        let d = d * (1.0 / r2.sqrt());
        let lift = rng.random_range(1.02..1.12);
        if hair_region(d) {
            bias.push(d * (surface_radius(d) * lift));
        }
    }
    let pos_weights = (0..n_hair * 3 * cond_dim).map(|_| rng.random_range(-0.03..0.03)).collect();
    let (f, h) = (opts.feature_dim, opts.hidden);
    let dense = |i: usize, o: usize, gain: f64, rng: &mut ChaCha8Rng| Dense {
        inputs: i,
        outputs: o,
        weights: (0..i * o).map(|_| rng.random_range(-1.0..1.0) * gain / (i as f64).sqrt()).collect(),
        bias: vec![0.0; o],
    };
    let l0 = dense(f, h, 1.5, &mut rng);
    let l1 = dense(h, h, 1.5, &mut rng);
    let mut l2 = dense(h, HAIR_HEAD_WIDTH, 0.3, &mut rng);
    let base = [0.17, 0.11, 0.07].map(logit);
    l2.bias[..3].copy_from_slice(&base);
    l2.bias[6..9].copy_from_slice(&[0.5, 0.5, 0.5]);
    l2.bias[13] = 1.5;
    let dec = HairDecoder {
        cond_dim,
        pos_weights,
        bias,
        output_scale: 0.05,
        layers: [l0, l1, l2],
        scale_unit: 0.004,
    };
    let side = 0.36;
    let mut tp = TriPlane::zeros(opts.t_tri, f, Vec3::new(0.0, 0.01, 0.0), side);
    for plane in tp.planes.iter_mut() {
        let waves: Vec<[f64; 5]> = (0..f * 3)
            .map(|_| {
                [
                    rng.random_range(1.0..6.0),
                    rng.random_range(1.0..6.0),
                    rng.random_range(0.0..2.0 * PI),
                    rng.random_range(0.2..0.6),
                    0.0,
                ]
            })
            .collect();
        let res = opts.t_tri;
        for j in 0..res {
            for i in 0..res {
                let (x, y) = (texel_center::<f64>(i, res), texel_center::<f64>(j, res));
                for c in 0..f {
                    let mut v = 0.0;
                    for w in &waves[c * 3..c * 3 + 3] {
                        v += w[3] * (2.0 * PI * (w[0] * x + w[1] * y) + w[2]).sin();
                    }
                    plane[(j * res + i) * f + c] = v;
                }
            }
        }
    }
    (dec, tp)
}

/// Soft frontal key light over a warm ambient term.
pub fn desk_lighting() -> ShLighting<f64> {
    let mut l = ShLighting::zero();
    let key = [1.05, 1.0, 0.95];
    for (c, ch) in l.coeffs.iter_mut().enumerate() {
        ch[0] = key[c];
        ch[2] = 0.25 * key[c];
        ch[3] = 0.1 * key[c];
        ch[1] = 0.15 * key[c];
        ch[6] = -0.05;
    }
    l
}

/// Complete desk avatar in the requested precision.
pub fn desk_avatar<T: Real>(opts: &DeskOptions) -> Result<Avatar<T>> {
    let rig = desk_rig(opts);
    let tex = desk_textures(opts);
    let (dec, tp) = desk_hair(opts, rig.n_id + rig.n_exp);
    Avatar::new(
        rig.cast(),
        tex.cast(),
        dec.cast(),
        tp.cast(),
        desk_params().cast(),
        desk_lighting().cast(),
        RenderSettings {
            alpha_head: opts.alpha_head,
            ..RenderSettings::default()
        },
    )
}

/// Neutral parameters for the desk rig.
pub fn desk_params() -> HeadParams<f64> {
    HeadParams::zeros(8, 8)
}

/// Camera at the origin looking down +z with a 60° horizontal field of view.
pub fn scene_camera<T: Real>(width: usize, height: usize) -> Camera<T> {
    let f = T::lit(width as f64 / 2.0 / (PI / 6.0).tan());
    Camera {
        fx: f,
        fy: f,
        cx: T::lit(width as f64 / 2.0),
        cy: T::lit(height as f64 / 2.0),
        width,
        height,
        rotation: Mat3::identity(),
        translation: Vec3::zero(),
    }
}

/// Seeded cloud of `n` random Gaussians filling the view of
/// [`scene_camera`] at depths 0.3 to 0.9, with anisotropic log-uniform
/// scales, random orientations, colors, opacities and groups.
pub fn random_cloud<T: Real>(n: usize, aspect: f64, seed: u64) -> GaussianCloud<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = (PI / 6.0).tan();
    let mut cloud = GaussianCloud::<f64>::with_capacity(n);
    for _ in 0..n {
        let z = rng.random_range(0.3..0.9);
        let x = rng.random_range(-1.0..1.0) * z * half;
        let y = rng.random_range(-1.0..1.0) * z * half / aspect;
        let mut unit = || loop {
            let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if let Some(u) = v.normalized().filter(|_| v.norm() <= 1.0) {
                break u;
            }
        };
        let normal = unit();
        let axis = unit();
        let angle: f64 = rng.random_range(0.0..PI);
        let (s, c) = (angle / 2.0).sin_cos();
        let rotation = Quat::from_array([c, axis.x * s, axis.y * s, axis.z * s]);
        let scale = Vec3::new(
            10f64.powf(rng.random_range(-2.7..-1.6)),
            10f64.powf(rng.random_range(-2.7..-1.6)),
            10f64.powf(rng.random_range(-2.7..-1.6)),
        );
        let color = Vec3::new(rng.random(), rng.random(), rng.random());
        let splat = Splat {
            position: Vec3::new(x, y, z),
            normal,
            color,
            scale,
            rotation,
            opacity: rng.random_range(0.05..1.0),
            group: Group::from_u8(rng.random_range(0..3)).unwrap_or(Group::Face),
        };
        cloud.push(splat);
    }
    cloud.cast()
}
