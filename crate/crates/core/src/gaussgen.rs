//! Gaussian generation: face disks sampled from UV maps, hair points from a
//! bounded position decoder with tri-plane attributes, merging, and the
//! attribute cache used for identity-preserving animation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::headmodel::{pose_mesh, HeadParams, HeadRig};
use crate::math::{Quat, Vec3};
use crate::real::{sigmoid, softplus, Real};
use crate::uvmaps::{apply_bump, fine_normals, footprint, sample_valid, TextureSet, UvGeometry, UvMap, UvRaster};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Group {
    Eye = 0,
    Face = 1,
    Hair = 2,
}

impl Group {
    /// One-hot mask channels: red, green, blue for eye, face, hair.
    pub fn one_hot<T: Real>(self) -> [T; 3] {
        let mut m = [T::zero(); 3];
        m[self as usize] = T::one();
        m
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Group::Eye),
            1 => Some(Group::Face),
            2 => Some(Group::Hair),
            _ => None,
        }
    }
}

/// Structure-of-arrays Gaussian point cloud.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct GaussianCloud<T> {
    pub positions: Vec<Vec3<T>>,
    pub normals: Vec<Vec3<T>>,
    pub colors: Vec<Vec3<T>>,
    pub scales: Vec<Vec3<T>>,
    pub rotations: Vec<Quat<T>>,
    pub opacities: Vec<T>,
    pub groups: Vec<Group>,
}

/// One Gaussian, for building clouds point by point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat<T> {
    pub position: Vec3<T>,
    pub normal: Vec3<T>,
    pub color: Vec3<T>,
    pub scale: Vec3<T>,
    pub rotation: Quat<T>,
    pub opacity: T,
    pub group: Group,
}

impl<T: Real> GaussianCloud<T> {
    pub fn new() -> Self {
        Self {
            positions: Vec::new(),
            normals: Vec::new(),
            colors: Vec::new(),
            scales: Vec::new(),
            rotations: Vec::new(),
            opacities: Vec::new(),
            groups: Vec::new(),
        }
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            positions: Vec::with_capacity(n),
            normals: Vec::with_capacity(n),
            colors: Vec::with_capacity(n),
            scales: Vec::with_capacity(n),
            rotations: Vec::with_capacity(n),
            opacities: Vec::with_capacity(n),
            groups: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(&mut self, s: Splat<T>) {
        self.positions.push(s.position);
        self.normals.push(s.normal);
        self.colors.push(s.color);
        self.scales.push(s.scale);
        self.rotations.push(s.rotation);
        self.opacities.push(s.opacity);
        self.groups.push(s.group);
    }

    pub fn get(&self, i: usize) -> Splat<T> {
        Splat {
            position: self.positions[i],
            normal: self.normals[i],
            color: self.colors[i],
            scale: self.scales[i],
            rotation: self.rotations[i],
            opacity: self.opacities[i],
            group: self.groups[i],
        }
    }

    pub fn extend(&mut self, other: &Self) {
        self.positions.extend_from_slice(&other.positions);
        self.normals.extend_from_slice(&other.normals);
        self.colors.extend_from_slice(&other.colors);
        self.scales.extend_from_slice(&other.scales);
        self.rotations.extend_from_slice(&other.rotations);
        self.opacities.extend_from_slice(&other.opacities);
        self.groups.extend_from_slice(&other.groups);
    }

    /// Counts per group in `[eye, face, hair]` order.
    pub fn group_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for g in &self.groups {
            c[*g as usize] += 1;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let lens = [
            self.normals.len(),
            self.colors.len(),
            self.scales.len(),
            self.rotations.len(),
            self.opacities.len(),
            self.groups.len(),
        ];
        if let Some(&bad) = lens.iter().find(|&&l| l != n) {
            return Err(Error::Dimension {
                what: "gaussian attribute array",
                expected: n,
                got: bad,
            });
        }
        let tol = T::lit(1e-6);
        for i in 0..n {
            let s = self.get(i);
            if (s.rotation.norm() - T::one()).abs() > tol {
                return Err(Error::invalid("gaussian", format!("point {i}: quaternion not unit")));
            }
            if (s.normal.norm() - T::one()).abs() > tol {
                return Err(Error::invalid("gaussian", format!("point {i}: normal not unit")));
            }
            if !(s.scale.x > T::zero() && s.scale.y > T::zero() && s.scale.z > T::zero()) {
                return Err(Error::invalid("gaussian", format!("point {i}: non-positive scale")));
            }
            if !(s.opacity >= T::zero() && s.opacity <= T::one()) {
                return Err(Error::invalid("gaussian", format!("point {i}: opacity outside [0,1]")));
            }
            if !s.position.is_finite() {
                return Err(Error::invalid("gaussian", format!("point {i}: non-finite position")));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> GaussianCloud<U> {
        GaussianCloud {
            positions: self.positions.iter().map(|v| v.cast()).collect(),
            normals: self.normals.iter().map(|v| v.cast()).collect(),
            colors: self.colors.iter().map(|v| v.cast()).collect(),
            scales: self.scales.iter().map(|v| v.cast()).collect(),
            rotations: self.rotations.iter().map(|q| q.cast()).collect(),
            opacities: self.opacities.iter().map(|o| U::lit(o.to_f64_lossy())).collect(),
            groups: self.groups.clone(),
        }
    }
}

/// Minimal rotation taking `+z` to `n`. Non-unit input is normalized first;
/// `n ≈ -z` resolves to a half turn about `x`.
pub fn quat_from_normal<T: Real>(n: Vec3<T>) -> Result<Quat<T>> {
    let n = n.normalized().ok_or(Error::ZeroVector)?;
    let d = n.z;
    if d < T::lit(-1.0 + 1e-6) {
        return Ok(Quat::new(T::zero(), T::one(), T::zero(), T::zero()));
    }
    // q ∝ (1 + z·n, z × n) with z × n = (-n.y, n.x, 0)
    let q = Quat::new(T::one() + d, -n.y, n.x, T::zero());
    Ok(q.normalized().unwrap_or(Quat::identity()))
}

/// Adjoint of [`quat_from_normal`] for a unit `n` away from the tie-break.
pub fn quat_from_normal_backward<T: Real>(n: Vec3<T>, dq: [T; 4]) -> Vec3<T> {
    if n.z < T::lit(-1.0 + 1e-6) {
        return Vec3::zero();
    }
    let raw = [T::one() + n.z, -n.y, n.x, T::zero()];
    let len = raw.iter().map(|v| *v * *v).sum::<T>().sqrt();
    let unit = raw.map(|v| v / len);
    let dot: T = unit.iter().zip(&dq).map(|(a, b)| *a * *b).sum();
    let draw: Vec<T> = (0..4).map(|k| (dq[k] - unit[k] * dot) / len).collect();
    Vec3::new(draw[2], -draw[1], draw[0])
}

/// Fixed sample coordinates: a regular `n × n` grid of cell centers with
/// `n = round(alpha · t_tex)`.
pub fn sample_grid<T: Real>(alpha: f64, t_tex: usize) -> Vec<[T; 2]> {
    let n = grid_side(alpha, t_tex);
    let mut out = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            out.push([
                (T::from_usize(i) + T::half()) / T::from_usize(n),
                (T::from_usize(j) + T::half()) / T::from_usize(n),
            ]);
        }
    }
    out
}

pub fn grid_side(alpha: f64, t: usize) -> usize {
    (alpha * t as f64).round().max(0.0) as usize
}

/// Face cloud together with the UV coordinates each point was sampled at.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceGaussians<T> {
    pub cloud: GaussianCloud<T>,
    pub uv: Vec<[T; 2]>,
}

/// Samples face disks from the fine maps at `(u_k, v_k)` of a regular grid,
/// dropping samples that touch invalid texels.
pub fn gen_face_gaussians<T: Real>(
    geom: &UvGeometry<T>,
    tex: &TextureSet<T>,
    rig: &HeadRig<T>,
    alpha_head: f64,
    epsilon: T,
) -> Result<FaceGaussians<T>> {
    if !(alpha_head > 0.0 && alpha_head <= 1.0) {
        return Err(Error::invalid("alpha_head", format!("{alpha_head} not in (0, 1]")));
    }
    if tex.resolution() != geom.res() {
        return Err(Error::Dimension {
            what: "texture resolution",
            expected: geom.res(),
            got: tex.resolution(),
        });
    }
    let uv: Vec<[T; 2]> = sample_grid::<T>(alpha_head, geom.res())
        .into_iter()
        .filter(|&[u, v]| sample_valid(&geom.valid, u, v))
        .collect();
    let cloud = face_gaussians_at(geom, tex, rig, &uv, epsilon);
    Ok(FaceGaussians { cloud, uv })
}

/// Face disks at given UV coordinates (assumed valid).
pub fn face_gaussians_at<T: Real>(
    geom: &UvGeometry<T>,
    tex: &TextureSet<T>,
    rig: &HeadRig<T>,
    uv: &[[T; 2]],
    epsilon: T,
) -> GaussianCloud<T> {
    let mut cloud = GaussianCloud::with_capacity(uv.len());
    let scale = Vec3::new(tex.disk_scale[0], tex.disk_scale[1], epsilon);
    for &[u, v] in uv {
        let fp = footprint(geom.res(), u, v);
        let position = fp.apply(&geom.fine_pos.data);
        let normal = fp
            .apply(&geom.fine_normal.data)
            .normalized()
            .unwrap_or(Vec3::unit_z());
        let color = fp.apply(&tex.albedo.data);
        let rotation = quat_from_normal(normal).unwrap_or(Quat::identity());
        let group = if rig.is_eye_uv(u, v) { Group::Eye } else { Group::Face };
        cloud.push(Splat {
            position,
            normal,
            color,
            scale,
            rotation,
            opacity: T::one(),
            group,
        });
    }
    cloud
}

/// Three axis-aligned feature planes over a cube.
#[derive(Clone, Debug, PartialEq)]
pub struct TriPlane<T> {
    pub res: usize,
    pub channels: usize,
    pub center: Vec3<T>,
    /// Cube side length, meters.
    pub side: T,
    /// Planes `xy`, `xz`, `yz`; texel `(i, j)` channel `c` at `(j·res + i)·channels + c`.
    pub planes: [Vec<T>; 3],
}

impl<T: Real> TriPlane<T> {
    pub fn zeros(res: usize, channels: usize, center: Vec3<T>, side: T) -> Self {
        let n = res * res * channels;
        Self {
            res,
            channels,
            center,
            side,
            planes: [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]],
        }
    }

    pub fn cast<U: Real>(&self) -> TriPlane<U> {
        TriPlane {
            res: self.res,
            channels: self.channels,
            center: self.center.cast(),
            side: U::lit(self.side.to_f64_lossy()),
            planes: self.planes.clone().map(|p| p.iter().map(|v| U::lit(v.to_f64_lossy())).collect()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.res * self.res * self.channels;
        for p in &self.planes {
            if p.len() != n {
                return Err(Error::Dimension {
                    what: "tri-plane plane size",
                    expected: n,
                    got: p.len(),
                });
            }
        }
        if !(self.side > T::zero()) {
            return Err(Error::invalid("tri-plane", "cube side must be positive"));
        }
        Ok(())
    }

    /// Plane coordinates of `p` in `[0,1]` (clamped) for each plane.
    pub fn plane_coords(&self, p: Vec3<T>) -> [[T; 2]; 3] {
        let half = self.side * T::half();
        let n = |x: T, c: T| ((x - (c - half)) / self.side).max(T::zero()).min(T::one());
        let (x, y, z) = (n(p.x, self.center.x), n(p.y, self.center.y), n(p.z, self.center.z));
        [[x, y], [x, z], [y, z]]
    }
}

/// Sum of the bilinear samples of the three planes at the projections of `p`.
pub fn sample_triplane<T: Real>(tp: &TriPlane<T>, p: Vec3<T>) -> Vec<T> {
    let mut out = vec![T::zero(); tp.channels];
    for (plane, [u, v]) in tp.planes.iter().zip(tp.plane_coords(p)) {
        let fp = footprint(tp.res, u, v);
        for k in 0..4 {
            let w = fp.w[k];
            if w == T::zero() {
                continue;
            }
            let base = fp.idx[k] * tp.channels;
            for (o, &f) in out.iter_mut().zip(&plane[base..base + tp.channels]) {
                *o += f * w;
            }
        }
    }
    out
}

/// Dense layer `y = W x + b`, `W` row-major `outputs × inputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        (0..self.outputs)
            .map(|o| {
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                self.bias[o] + row.iter().zip(x).map(|(w, v)| *w * *v).sum::<T>()
            })
            .collect()
    }

    pub fn cast<U: Real>(&self) -> Dense<U> {
        Dense {
            inputs: self.inputs,
            outputs: self.outputs,
            weights: self.weights.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
            bias: self.bias.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.weights.len() != self.inputs * self.outputs || self.bias.len() != self.outputs {
            return Err(Error::Dimension {
                what: "dense layer weights",
                expected: self.inputs * self.outputs,
                got: self.weights.len(),
            });
        }
        Ok(())
    }
}

/// Raw head width of the attribute decoder: color 3, normal 3, scale 3,
/// rotation 4, opacity 1.
pub const HAIR_HEAD_WIDTH: usize = 14;

/// Hair position decoder plus the per-point attribute perceptron.
#[derive(Clone, Debug, PartialEq)]
pub struct HairDecoder<T> {
    pub cond_dim: usize,
    /// `(n_hair·3) × cond_dim`, row-major.
    pub pos_weights: Vec<T>,
    /// Rest positions `b`, one per hair point.
    pub bias: Vec<Vec3<T>>,
    /// Half-width of the box positions may drift from `b`, meters.
    pub output_scale: T,
    /// Attribute perceptron: features → hidden → hidden → raw heads.
    pub layers: [Dense<T>; 3],
    /// Scale head unit, meters per softplus unit.
    pub scale_unit: T,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HairAttrs<T> {
    pub color: Vec3<T>,
    pub normal: Vec3<T>,
    pub scale: Vec3<T>,
    pub rotation: Quat<T>,
    pub opacity: T,
}

impl<T: Real> HairDecoder<T> {
    pub fn n_hair(&self) -> usize {
        self.bias.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn cast<U: Real>(&self) -> HairDecoder<U> {
        HairDecoder {
            cond_dim: self.cond_dim,
            pos_weights: self.pos_weights.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
            bias: self.bias.iter().map(|b| b.cast()).collect(),
            output_scale: U::lit(self.output_scale.to_f64_lossy()),
            layers: [self.layers[0].cast(), self.layers[1].cast(), self.layers[2].cast()],
            scale_unit: U::lit(self.scale_unit.to_f64_lossy()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rows = self.bias.len() * 3;
        if self.pos_weights.len() != rows * self.cond_dim {
            return Err(Error::Dimension {
                what: "hair position weights",
                expected: rows * self.cond_dim,
                got: self.pos_weights.len(),
            });
        }
        for l in &self.layers {
            l.check()?;
        }
        if self.layers[1].inputs != self.layers[0].outputs || self.layers[2].inputs != self.layers[1].outputs {
            return Err(Error::invalid("hair decoder", "hidden layer widths do not chain"));
        }
        if self.layers[2].outputs != HAIR_HEAD_WIDTH {
            return Err(Error::Dimension {
                what: "hair decoder head",
                expected: HAIR_HEAD_WIDTH,
                got: self.layers[2].outputs,
            });
        }
        if !(self.output_scale >= T::zero() && self.scale_unit > T::zero()) {
            return Err(Error::invalid("hair decoder", "scales must be positive"));
        }
        Ok(())
    }
}

/// `μ = output_scale · tanh(Wᵀ cond) + b`; stays within `output_scale` of `b`.
pub fn gen_hair_positions<T: Real>(dec: &HairDecoder<T>, cond: &[T]) -> Result<Vec<Vec3<T>>> {
    if cond.len() != dec.cond_dim {
        return Err(Error::Dimension {
            what: "hair conditioning vector",
            expected: dec.cond_dim,
            got: cond.len(),
        });
    }
    let d = dec.cond_dim;
    let act = |row: usize| -> T {
        let w = &dec.pos_weights[row * d..(row + 1) * d];
        dec.output_scale * w.iter().zip(cond).map(|(a, b)| *a * *b).sum::<T>().tanh()
    };
    Ok(dec
        .bias
        .iter()
        .enumerate()
        .map(|(k, b)| *b + Vec3::new(act(3 * k), act(3 * k + 1), act(3 * k + 2)))
        .collect())
}

/// Attribute heads: logistic color and opacity, softplus scale, normal and
/// rotation normalized around `+z` and the identity rotation.
pub fn decode_hair_attrs<T: Real>(feat: &[T], dec: &HairDecoder<T>) -> HairAttrs<T> {
    let relu = |v: Vec<T>| v.into_iter().map(|x| x.max(T::zero())).collect::<Vec<_>>();
    let h1 = relu(dec.layers[0].forward(feat));
    let h2 = relu(dec.layers[1].forward(&h1));
    let raw = dec.layers[2].forward(&h2);
    let color = Vec3::new(sigmoid(raw[0]), sigmoid(raw[1]), sigmoid(raw[2]));
    let normal = (Vec3::unit_z() + Vec3::new(raw[3], raw[4], raw[5]))
        .normalized()
        .unwrap_or(Vec3::unit_z());
    let floor = T::lit(1e-8);
    let scale = Vec3::new(raw[6], raw[7], raw[8]).map(|x| (dec.scale_unit * softplus(x)).max(floor));
    let rotation = Quat::new(T::one() + raw[9], raw[10], raw[11], raw[12])
        .normalized()
        .unwrap_or(Quat::identity());
    let opacity = sigmoid(raw[13]);
    HairAttrs {
        color,
        normal,
        scale,
        rotation,
        opacity,
    }
}

/// Hair cloud for a conditioning vector: shared positions, tri-plane attributes.
pub fn gen_hair_gaussians<T: Real>(dec: &HairDecoder<T>, tp: &TriPlane<T>, cond: &[T]) -> Result<GaussianCloud<T>> {
    if tp.channels != dec.feature_dim() {
        return Err(Error::Dimension {
            what: "tri-plane channels",
            expected: dec.feature_dim(),
            got: tp.channels,
        });
    }
    let positions = gen_hair_positions(dec, cond)?;
    let mut cloud = GaussianCloud::with_capacity(positions.len());
    for p in positions {
        let a = decode_hair_attrs(&sample_triplane(tp, p), dec);
        cloud.push(Splat {
            position: p,
            normal: a.normal,
            color: a.color,
            scale: a.scale,
            rotation: a.rotation,
            opacity: a.opacity,
            group: Group::Hair,
        });
    }
    Ok(cloud)
}

/// Face block followed by hair block.
pub fn merge_clouds<T: Real>(face: &GaussianCloud<T>, hair: &GaussianCloud<T>) -> GaussianCloud<T> {
    let mut out = GaussianCloud::with_capacity(face.len() + hair.len());
    out.extend(face);
    out.extend(hair);
    out
}

/// Frozen non-position attributes of a merged cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeCache<T> {
    pub normals: Vec<Vec3<T>>,
    pub colors: Vec<Vec3<T>>,
    pub scales: Vec<Vec3<T>>,
    pub rotations: Vec<Quat<T>>,
    pub opacities: Vec<T>,
    pub groups: Vec<Group>,
    /// Sample coordinates of the leading face block.
    pub face_uv: Vec<[T; 2]>,
    /// Decoder rows of the trailing hair block.
    pub hair_ids: Vec<u32>,
    pub rig_vertices: usize,
    pub rig_faces: usize,
}

impl<T: Real> AttributeCache<T> {
    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }
}

/// Copies every attribute but position. `face_uv` indexes the leading face
/// points, `hair_ids` the trailing hair points.
pub fn cache_attributes<T: Real>(
    cloud: &GaussianCloud<T>,
    rig: &HeadRig<T>,
    face_uv: &[[T; 2]],
    hair_ids: &[u32],
) -> Result<AttributeCache<T>> {
    if face_uv.len() + hair_ids.len() != cloud.len() {
        return Err(Error::Dimension {
            what: "cache metadata",
            expected: cloud.len(),
            got: face_uv.len() + hair_ids.len(),
        });
    }
    Ok(AttributeCache {
        normals: cloud.normals.clone(),
        colors: cloud.colors.clone(),
        scales: cloud.scales.clone(),
        rotations: cloud.rotations.clone(),
        opacities: cloud.opacities.clone(),
        groups: cloud.groups.clone(),
        face_uv: face_uv.to_vec(),
        hair_ids: hair_ids.to_vec(),
        rig_vertices: rig.vertex_count(),
        rig_faces: rig.faces.len(),
    })
}

/// Fine UV geometry of a pose: pose → UV raster → bump → fine normals.
pub fn posed_geometry<T: Real>(
    rig: &HeadRig<T>,
    raster: &UvRaster<T>,
    params: &HeadParams<T>,
    bump: &UvMap<T>,
) -> Result<UvGeometry<T>> {
    let mesh = pose_mesh(rig, params)?;
    Ok(fine_normals(apply_bump(raster.interpolate(&mesh, rig), bump)))
}

/// Re-derives positions for new head parameters, keeping every cached
/// attribute; face normals and rotations follow the re-derived fine normals.
pub fn animate_cached<T: Real>(
    cache: &AttributeCache<T>,
    rig: &HeadRig<T>,
    raster: &UvRaster<T>,
    params: &HeadParams<T>,
    bump: &UvMap<T>,
    dec: &HairDecoder<T>,
) -> Result<GaussianCloud<T>> {
    if cache.rig_vertices != rig.vertex_count() || cache.rig_faces != rig.faces.len() {
        return Err(Error::invalid(
            "attribute cache",
            format!(
                "taken from a rig with {} vertices / {} faces, got {} / {}",
                cache.rig_vertices,
                cache.rig_faces,
                rig.vertex_count(),
                rig.faces.len()
            ),
        ));
    }
    let geom = posed_geometry(rig, raster, params, bump)?;
    let hair_pos = gen_hair_positions(dec, &params.conditioning())?;
    let n_face = cache.face_uv.len();
    let mut cloud = GaussianCloud::with_capacity(cache.len());
    for (k, &[u, v]) in cache.face_uv.iter().enumerate() {
        let fp = footprint(geom.res(), u, v);
        let normal = fp.apply(&geom.fine_normal.data).normalized().unwrap_or(Vec3::unit_z());
        cloud.push(Splat {
            position: fp.apply(&geom.fine_pos.data),
            normal,
            color: cache.colors[k],
            scale: cache.scales[k],
            rotation: quat_from_normal(normal).unwrap_or(Quat::identity()),
            opacity: cache.opacities[k],
            group: cache.groups[k],
        });
    }
    for (h, &row) in cache.hair_ids.iter().enumerate() {
        let k = n_face + h;
        let position = *hair_pos.get(row as usize).ok_or_else(|| {
            Error::invalid("attribute cache", format!("hair row {row} outside decoder"))
        })?;
        cloud.push(Splat {
            position,
            normal: cache.normals[k],
            color: cache.colors[k],
            scale: cache.scales[k],
            rotation: cache.rotations[k],
            opacity: cache.opacities[k],
            group: cache.groups[k],
        });
    }
    Ok(cloud)
}
