//! Linear blendshape head rig: template + identity/expression bases, a
//! rigid jaw and two eyes, posed into a coarse mesh with vertex normals.
//!
//! # Rig file layout
//!
//! All integers are `u32` and all floats `f32`, little-endian.
//!
//! | block            | contents                                            |
//! |------------------|-----------------------------------------------------|
//! | header           | magic `EGRIG\0`, version, `V`, `F`, `n_id`, `n_exp` |
//! | vertex block     | template positions, `V × 3`                         |
//! | identity block   | `V × 3 × n_id`, index `(v·3 + axis)·n_id + k`       |
//! | expression block | `V × 3 × n_exp`, same indexing                      |
//! | joint block      | jaw pivot, jaw axis; per eye: pivot, yaw axis, pitch axis |
//! | face block       | `F × 3` vertex indices                              |
//! | uv block         | `V × 2`                                             |
//! | index sets       | jaw set, eye set 0, eye set 1; each `count` then indices |
//! | eye mask         | `res`, then `ceil(res²/8)` bytes, LSB-first, row-major |

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assets::binio::{self, Reader, Writer};
use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};
use crate::real::Real;
use crate::uvmaps::{UvMap, texel_center};

pub const RIG_MAGIC: &[u8; 6] = b"EGRIG\0";
pub const RIG_VERSION: u32 = 1;

/// Single-axis hinge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JawJoint<T> {
    pub pivot: Vec3<T>,
    pub axis: Vec3<T>,
}

/// Two-axis eye joint: yaw then pitch about the same pivot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EyeJoint<T> {
    pub pivot: Vec3<T>,
    pub yaw_axis: Vec3<T>,
    pub pitch_axis: Vec3<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadRig<T> {
    pub template: Vec<Vec3<T>>,
    pub n_id: usize,
    pub n_exp: usize,
    pub identity_basis: Vec<T>,
    pub expression_basis: Vec<T>,
    pub jaw: JawJoint<T>,
    /// Vertices that follow the jaw rigidly.
    pub jaw_vertices: Vec<u32>,
    pub eyes: [EyeJoint<T>; 2],
    pub eye_vertices: [Vec<u32>; 2],
    pub faces: Vec<[u32; 3]>,
    pub uv: Vec<[T; 2]>,
    pub eye_uv_mask: UvMap<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadParams<T> {
    pub identity: Vec<T>,
    pub expression: Vec<T>,
    /// Jaw opening, radians.
    pub jaw: T,
    /// `(yaw, pitch)` per eye, radians.
    pub eyes: [[T; 2]; 2],
}

impl<T: Real> HeadParams<T> {
    pub fn zeros(n_id: usize, n_exp: usize) -> Self {
        Self {
            identity: vec![T::zero(); n_id],
            expression: vec![T::zero(); n_exp],
            jaw: T::zero(),
            eyes: [[T::zero(); 2]; 2],
        }
    }

    /// Conditioning vector of the hair position decoder: identity then expression.
    pub fn conditioning(&self) -> Vec<T> {
        self.identity.iter().chain(&self.expression).copied().collect()
    }

    pub fn cast<U: Real>(&self) -> HeadParams<U> {
        let c = |x: &T| U::lit(x.to_f64_lossy());
        HeadParams {
            identity: self.identity.iter().map(c).collect(),
            expression: self.expression.iter().map(c).collect(),
            jaw: c(&self.jaw),
            eyes: self.eyes.map(|e| e.map(|x| c(&x))),
        }
    }

    pub fn validate(&self, rig: &HeadRig<T>) -> Result<()> {
        if self.identity.len() != rig.n_id {
            return Err(Error::Dimension {
                what: "identity coefficients",
                expected: rig.n_id,
                got: self.identity.len(),
            });
        }
        if self.expression.len() != rig.n_exp {
            return Err(Error::Dimension {
                what: "expression coefficients",
                expected: rig.n_exp,
                got: self.expression.len(),
            });
        }
        let angles = std::iter::once(self.jaw).chain(self.eyes.iter().flatten().copied());
        if self.identity.iter().chain(&self.expression).copied().chain(angles).any(|x| !x.is_finite()) {
            return Err(Error::invalid("head params", "non-finite coefficient or angle"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoarseMesh<T> {
    pub vertices: Vec<Vec3<T>>,
    pub vertex_normals: Vec<Vec3<T>>,
}

impl<T: Real> HeadRig<T> {
    pub fn vertex_count(&self) -> usize {
        self.template.len()
    }

    pub fn zero_params(&self) -> HeadParams<T> {
        HeadParams::zeros(self.n_id, self.n_exp)
    }

    /// Largest distance from the template centroid to a template vertex.
    pub fn bounding_radius(&self) -> T {
        let c = self.centroid();
        self.template
            .iter()
            .map(|&p| (p - c).norm())
            .fold(T::zero(), T::max)
    }

    pub fn centroid(&self) -> Vec3<T> {
        let mut c = Vec3::zero();
        for &p in &self.template {
            c += p;
        }
        c * (T::one() / T::from_usize(self.template.len().max(1)))
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.template.len();
        if self.identity_basis.len() != v * 3 * self.n_id {
            return Err(Error::Dimension {
                what: "identity basis",
                expected: v * 3 * self.n_id,
                got: self.identity_basis.len(),
            });
        }
        if self.expression_basis.len() != v * 3 * self.n_exp {
            return Err(Error::Dimension {
                what: "expression basis",
                expected: v * 3 * self.n_exp,
                got: self.expression_basis.len(),
            });
        }
        if self.uv.len() != v {
            return Err(Error::Dimension {
                what: "uv coordinates",
                expected: v,
                got: self.uv.len(),
            });
        }
        if let Some(f) = self.faces.iter().flatten().find(|&&i| i as usize >= v) {
            return Err(Error::invalid("rig faces", format!("vertex index {f} >= {v}")));
        }
        for (k, uv) in self.uv.iter().enumerate() {
            if !uv.iter().all(|&c| c >= T::zero() && c <= T::one()) {
                return Err(Error::invalid(
                    "rig uv",
                    format!("vertex {k} has uv ({}, {}) outside [0,1]²", uv[0], uv[1]),
                ));
            }
        }
        for set in [&self.jaw_vertices, &self.eye_vertices[0], &self.eye_vertices[1]] {
            if let Some(i) = set.iter().find(|&&i| i as usize >= v) {
                return Err(Error::invalid("rig index set", format!("vertex index {i} >= {v}")));
            }
        }
        let mut in_left = vec![false; v];
        for &i in &self.eye_vertices[0] {
            in_left[i as usize] = true;
        }
        if self.eye_vertices[1].iter().any(|&i| in_left[i as usize]) {
            return Err(Error::invalid("rig eye sets", "eye vertex sets overlap"));
        }
        if self.eye_uv_mask.data.len() != self.eye_uv_mask.res * self.eye_uv_mask.res {
            return Err(Error::invalid("rig eye mask", "mask size does not match its resolution"));
        }
        let axes = [self.jaw.axis]
            .into_iter()
            .chain(self.eyes.iter().flat_map(|e| [e.yaw_axis, e.pitch_axis]));
        for a in axes {
            if a.normalized().is_none() {
                return Err(Error::invalid("rig joints", "zero rotation axis"));
            }
        }
        Ok(())
    }

    /// Whether the eye mask covers `(u, v)` (nearest texel).
    pub fn is_eye_uv(&self, u: T, v: T) -> bool {
        let res = self.eye_uv_mask.res;
        if res == 0 {
            return false;
        }
        let to_idx = |c: T| {
            (c * T::from_usize(res))
                .floor()
                .to_isize()
                .unwrap_or(0)
                .clamp(0, res as isize - 1) as usize
        };
        *self.eye_uv_mask.get(to_idx(u), to_idx(v))
    }

    pub fn cast<U: Real>(&self) -> HeadRig<U> {
        let c = |x: &T| U::lit(x.to_f64_lossy());
        HeadRig {
            template: self.template.iter().map(|p| p.cast()).collect(),
            n_id: self.n_id,
            n_exp: self.n_exp,
            identity_basis: self.identity_basis.iter().map(c).collect(),
            expression_basis: self.expression_basis.iter().map(c).collect(),
            jaw: JawJoint {
                pivot: self.jaw.pivot.cast(),
                axis: self.jaw.axis.cast(),
            },
            jaw_vertices: self.jaw_vertices.clone(),
            eyes: self.eyes.map(|e| EyeJoint {
                pivot: e.pivot.cast(),
                yaw_axis: e.yaw_axis.cast(),
                pitch_axis: e.pitch_axis.cast(),
            }),
            eye_vertices: self.eye_vertices.clone(),
            faces: self.faces.clone(),
            uv: self.uv.iter().map(|uv| uv.map(|x| c(&x))).collect(),
            eye_uv_mask: self.eye_uv_mask.clone(),
        }
    }

    /// Rebuilds the eye UV mask by marking texels whose centers fall inside
    /// triangles made entirely of eye vertices.
    pub fn rebuild_eye_mask(&mut self, res: usize) {
        let v = self.template.len();
        let mut is_eye = vec![false; v];
        for &i in self.eye_vertices.iter().flatten() {
            is_eye[i as usize] = true;
        }
        let mut mask = UvMap::filled(res, false);
        for tri in &self.faces {
            if !tri.iter().all(|&i| is_eye[i as usize]) {
                continue;
            }
            let p = tri.map(|i| self.uv[i as usize]);
            let area = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
            if area == T::zero() {
                continue;
            }
            for j in 0..res {
                let y = texel_center::<T>(j, res);
                for i in 0..res {
                    let x = texel_center::<T>(i, res);
                    let e = |a: [T; 2], b: [T; 2]| ((b[0] - a[0]) * (y - a[1]) - (x - a[0]) * (b[1] - a[1])) / area;
                    if e(p[1], p[2]) >= T::zero() && e(p[2], p[0]) >= T::zero() && e(p[0], p[1]) >= T::zero() {
                        mask.set(i, j, true);
                    }
                }
            }
        }
        self.eye_uv_mask = mask;
    }

    /// Per-vertex one-ring adjacency (vertices sharing a face).
    pub fn vertex_neighbors(&self) -> Vec<Vec<u32>> {
        let mut nb = vec![Vec::new(); self.template.len()];
        for tri in &self.faces {
            for a in 0..3 {
                for b in 0..3 {
                    if a != b {
                        nb[tri[a] as usize].push(tri[b]);
                    }
                }
            }
        }
        for list in &mut nb {
            list.sort_unstable();
            list.dedup();
        }
        nb
    }
}

/// Poses the rig: blendshapes, then the jaw hinge, then both eyes.
pub fn pose_mesh<T: Real>(rig: &HeadRig<T>, params: &HeadParams<T>) -> Result<CoarseMesh<T>> {
    params.validate(rig)?;
    let mut vertices = rig.template.clone();
    add_blendshapes(&mut vertices, &rig.identity_basis, rig.n_id, &params.identity);
    add_blendshapes(&mut vertices, &rig.expression_basis, rig.n_exp, &params.expression);

    if params.jaw != T::zero() {
        let axis = rig.jaw.axis.normalized().ok_or(Error::ZeroVector)?;
        rotate_set(&mut vertices, &rig.jaw_vertices, rig.jaw.pivot, &Mat3::rotation(axis, params.jaw));
    }
    for (e, joint) in rig.eyes.iter().enumerate() {
        let [yaw, pitch] = params.eyes[e];
        if yaw == T::zero() && pitch == T::zero() {
            continue;
        }
        let ya = joint.yaw_axis.normalized().ok_or(Error::ZeroVector)?;
        let pa = joint.pitch_axis.normalized().ok_or(Error::ZeroVector)?;
        let r = Mat3::rotation(ya, yaw).mul_mat(&Mat3::rotation(pa, pitch));
        rotate_set(&mut vertices, &rig.eye_vertices[e], joint.pivot, &r);
    }

    let vertex_normals = vertex_normals(&vertices, &rig.faces);
    Ok(CoarseMesh {
        vertices,
        vertex_normals,
    })
}

fn add_blendshapes<T: Real>(vertices: &mut [Vec3<T>], basis: &[T], n: usize, coeffs: &[T]) {
    if n == 0 || coeffs.iter().all(|c| *c == T::zero()) {
        return;
    }
    for (v, p) in vertices.iter_mut().enumerate() {
        let mut d = [T::zero(); 3];
        for (axis, slot) in d.iter_mut().enumerate() {
            let row = &basis[(v * 3 + axis) * n..(v * 3 + axis + 1) * n];
            *slot = row.iter().zip(coeffs).map(|(b, c)| *b * *c).sum();
        }
        *p += Vec3::from_array(d);
    }
}

fn rotate_set<T: Real>(vertices: &mut [Vec3<T>], set: &[u32], pivot: Vec3<T>, r: &Mat3<T>) {
    for &i in set {
        let p = &mut vertices[i as usize];
        *p = pivot + r.mul_vec(*p - pivot);
    }
}

/// Area-weighted vertex normals. A vertex touched by no face gets the
/// direction from the mesh centroid.
pub fn vertex_normals<T: Real>(vertices: &[Vec3<T>], faces: &[[u32; 3]]) -> Vec<Vec3<T>> {
    let mut acc = vec![Vec3::zero(); vertices.len()];
    for tri in faces {
        let [a, b, c] = tri.map(|i| vertices[i as usize]);
        // |cross| is twice the area, so the sum is area-weighted
        let n = (b - a).cross(c - a);
        for &i in tri {
            acc[i as usize] += n;
        }
    }
    let mut centroid = Vec3::zero();
    for &p in vertices {
        centroid += p;
    }
    centroid = centroid * (T::one() / T::from_usize(vertices.len().max(1)));
    acc.iter()
        .zip(vertices)
        .map(|(n, &p)| {
            n.normalized()
                .or_else(|| (p - centroid).normalized())
                .unwrap_or(Vec3::unit_z())
        })
        .collect()
}

impl HeadRig<f32> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(RIG_MAGIC);
        w.u32(RIG_VERSION);
        w.u32s([
            self.template.len() as u32,
            self.faces.len() as u32,
            self.n_id as u32,
            self.n_exp as u32,
        ]);
        w.f32s(self.template.iter().flat_map(|p| p.to_array()));
        w.f32s(self.identity_basis.iter().copied());
        w.f32s(self.expression_basis.iter().copied());
        w.f32s(self.jaw.pivot.to_array().into_iter().chain(self.jaw.axis.to_array()));
        for e in &self.eyes {
            w.f32s(
                e.pivot
                    .to_array()
                    .into_iter()
                    .chain(e.yaw_axis.to_array())
                    .chain(e.pitch_axis.to_array()),
            );
        }
        w.u32s(self.faces.iter().flatten().copied());
        w.f32s(self.uv.iter().flatten().copied());
        for set in [&self.jaw_vertices, &self.eye_vertices[0], &self.eye_vertices[1]] {
            w.u32(set.len() as u32);
            w.u32s(set.iter().copied());
        }
        w.u32(self.eye_uv_mask.res as u32);
        w.bytes(&binio::pack_bits(&self.eye_uv_mask.data));
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, Error::CorruptRig);
        r.expect_magic(RIG_MAGIC, "rig")?;
        let version = r.u32("header")?;
        if version != RIG_VERSION {
            return Err(Error::Version {
                found: version,
                expected: RIG_VERSION,
            });
        }
        let v = r.u32("header")? as usize;
        let f = r.u32("header")? as usize;
        let n_id = r.u32("header")? as usize;
        let n_exp = r.u32("header")? as usize;

        let vec3s = |xs: Vec<f32>| -> Vec<Vec3<f32>> {
            xs.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
        };
        let template = vec3s(r.f32s(v * 3, "vertex block")?);
        let identity_basis = r.f32s(v * 3 * n_id, "identity block")?;
        let expression_basis = r.f32s(v * 3 * n_exp, "expression block")?;
        let joints = vec3s(r.f32s(2 * 3 + 2 * 9, "joint block")?);
        let faces = r
            .u32s(f * 3, "face block")?
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        let uv = r
            .f32s(v * 2, "uv block")?
            .chunks_exact(2)
            .map(|c| [c[0], c[1]])
            .collect();
        let mut sets = Vec::with_capacity(3);
        for _ in 0..3 {
            let n = r.u32("index sets")? as usize;
            sets.push(r.u32s(n, "index sets")?);
        }
        let res = r.u32("eye mask")? as usize;
        let packed = r.take((res * res).div_ceil(8), "eye mask")?;
        let mask = UvMap {
            res,
            data: binio::unpack_bits(packed, res * res),
        };
        let eye1 = sets.pop().unwrap_or_default();
        let eye0 = sets.pop().unwrap_or_default();
        let jaw_set = sets.pop().unwrap_or_default();
        let rig = HeadRig {
            template,
            n_id,
            n_exp,
            identity_basis,
            expression_basis,
            jaw: JawJoint {
                pivot: joints[0],
                axis: joints[1],
            },
            jaw_vertices: jaw_set,
            eyes: [
                EyeJoint {
                    pivot: joints[2],
                    yaw_axis: joints[3],
                    pitch_axis: joints[4],
                },
                EyeJoint {
                    pivot: joints[5],
                    yaw_axis: joints[6],
                    pitch_axis: joints[7],
                },
            ],
            eye_vertices: [eye0, eye1],
            faces,
            uv,
            eye_uv_mask: mask,
        };
        rig.validate()?;
        Ok(rig)
    }
}

/// Reads and validates a rig file.
pub fn load_rig(path: impl AsRef<Path>) -> Result<HeadRig<f32>> {
    HeadRig::from_bytes(&binio::read_file(path.as_ref())?)
}

pub fn save_rig(rig: &HeadRig<f32>, path: impl AsRef<Path>) -> Result<()> {
    binio::write_file(path.as_ref(), &rig.to_bytes())
}
