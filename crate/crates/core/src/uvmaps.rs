//! UV-space geometry: coarse position/normal maps rasterized from the posed
//! mesh, bump displacement along the coarse normal, and fine normals from
//! discrete differentials of the displaced position map.
//!
//! Maps are square, `res × res`, stored row-major with row `j` holding
//! texels whose centers sit at `v = (j + 0.5) / res` (row 0 is `v = 0`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::headmodel::{CoarseMesh, HeadRig};
use crate::math::Vec3;
use crate::real::Real;

/// Square texture map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UvMap<V> {
    pub res: usize,
    pub data: Vec<V>,
}

impl<V: Clone> UvMap<V> {
    pub fn filled(res: usize, value: V) -> Self {
        Self {
            res,
            data: vec![value; res * res],
        }
    }

    pub fn from_fn(res: usize, mut f: impl FnMut(usize, usize) -> V) -> Self {
        let mut data = Vec::with_capacity(res * res);
        for j in 0..res {
            for i in 0..res {
                data.push(f(i, j));
            }
        }
        Self { res, data }
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.res + i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> &V {
        &self.data[j * self.res + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: V) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    pub fn map<W>(&self, f: impl Fn(&V) -> W) -> UvMap<W> {
        UvMap {
            res: self.res,
            data: self.data.iter().map(f).collect(),
        }
    }
}

/// Center of texel `i` along one axis in normalized coordinates.
#[inline]
pub fn texel_center<T: Real>(i: usize, res: usize) -> T {
    (T::from_usize(i) + T::half()) / T::from_usize(res)
}

/// Values that can be blended by bilinear sampling.
pub trait Texel<T: Real>: Copy {
    fn zero() -> Self;
    fn add_scaled(self, other: Self, w: T) -> Self;
}

impl<T: Real> Texel<T> for T {
    #[inline]
    fn zero() -> Self {
        T::zero()
    }
    #[inline]
    fn add_scaled(self, other: Self, w: T) -> Self {
        self + other * w
    }
}

impl<T: Real> Texel<T> for Vec3<T> {
    #[inline]
    fn zero() -> Self {
        Vec3::zero()
    }
    #[inline]
    fn add_scaled(self, other: Self, w: T) -> Self {
        self + other * w
    }
}

/// The four texels (and weights) a bilinear lookup touches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Footprint<T> {
    pub idx: [usize; 4],
    pub w: [T; 4],
}

/// Bilinear footprint with half-texel centers, clamped at the borders.
pub fn footprint<T: Real>(res: usize, u: T, v: T) -> Footprint<T> {
    let max = T::from_usize(res - 1);
    let axis = |c: T| {
        let c = if c.is_finite() { c } else { T::zero() };
        let x = (c * T::from_usize(res) - T::half()).max(T::zero()).min(max);
        let i0 = x.floor().to_usize().unwrap_or(0).min(res - 1);
        let i1 = (i0 + 1).min(res - 1);
        (i0, i1, x - T::from_usize(i0))
    };
    let (i0, i1, fx) = axis(u);
    let (j0, j1, fy) = axis(v);
    let one = T::one();
    Footprint {
        idx: [j0 * res + i0, j0 * res + i1, j1 * res + i0, j1 * res + i1],
        w: [
            (one - fx) * (one - fy),
            fx * (one - fy),
            (one - fx) * fy,
            fx * fy,
        ],
    }
}

impl<T: Real> Footprint<T> {
    pub fn apply<V: Texel<T>>(&self, data: &[V]) -> V {
        let mut acc = V::zero();
        for k in 0..4 {
            acc = acc.add_scaled(data[self.idx[k]], self.w[k]);
        }
        acc
    }

    /// Texels with nonzero weight.
    pub fn touched(&self) -> impl Iterator<Item = usize> + '_ {
        (0..4).filter(|&k| self.w[k] != T::zero()).map(|k| self.idx[k])
    }
}

/// Bilinear texture query at `(u, v)`; coordinates outside `[0,1]²` clamp.
pub fn sample_map<T: Real, V: Texel<T>>(map: &UvMap<V>, u: T, v: T) -> V {
    footprint(map.res, u, v).apply(&map.data)
}

/// Validity of a bilinear query: every texel with nonzero weight must be valid.
pub fn sample_valid<T: Real>(mask: &UvMap<bool>, u: T, v: T) -> bool {
    footprint(mask.res, u, v).touched().all(|k| mask.data[k])
}

/// Editable appearance and fine-geometry textures of one avatar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureSet<T> {
    /// RGB albedo in `[0,1]`.
    pub albedo: UvMap<Vec3<T>>,
    /// Signed displacement along the coarse normal, meters.
    pub bump: UvMap<T>,
    /// Disk radii along the local x and y axes, meters.
    pub disk_scale: [T; 2],
}

impl<T: Real> TextureSet<T> {
    pub fn resolution(&self) -> usize {
        self.albedo.res
    }

    pub fn cast<U: Real>(&self) -> TextureSet<U> {
        TextureSet {
            albedo: self.albedo.map(|c| c.cast()),
            bump: self.bump.map(|b| U::lit(b.to_f64_lossy())),
            disk_scale: self.disk_scale.map(|d| U::lit(d.to_f64_lossy())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bump.res != self.albedo.res {
            return Err(Error::Dimension {
                what: "bump resolution",
                expected: self.albedo.res,
                got: self.bump.res,
            });
        }
        if self.albedo.data.len() != self.albedo.res * self.albedo.res {
            return Err(Error::invalid("albedo", "data length does not match resolution"));
        }
        for c in &self.albedo.data {
            for x in c.to_array() {
                if !(x >= T::zero() && x <= T::one()) {
                    return Err(Error::invalid("albedo", format!("channel value {x} outside [0,1]")));
                }
            }
        }
        if self.bump.data.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("bump", "non-finite displacement"));
        }
        if !(self.disk_scale[0] > T::zero() && self.disk_scale[1] > T::zero()) {
            return Err(Error::invalid("disk_scale", "scales must be positive"));
        }
        Ok(())
    }
}

/// Position/normal maps of the head surface in UV space.
#[derive(Clone, Debug, PartialEq)]
pub struct UvGeometry<T> {
    pub coarse_pos: UvMap<Vec3<T>>,
    pub coarse_normal: UvMap<Vec3<T>>,
    pub fine_pos: UvMap<Vec3<T>>,
    pub fine_normal: UvMap<Vec3<T>>,
    pub valid: UvMap<bool>,
}

impl<T: Real> UvGeometry<T> {
    pub fn res(&self) -> usize {
        self.valid.res
    }

    /// Geometry from explicit coarse maps; fine maps start zeroed.
    pub fn from_coarse(
        coarse_pos: UvMap<Vec3<T>>,
        coarse_normal: UvMap<Vec3<T>>,
        valid: UvMap<bool>,
    ) -> Self {
        let res = valid.res;
        Self {
            coarse_pos,
            coarse_normal,
            fine_pos: UvMap::filled(res, Vec3::zero()),
            fine_normal: UvMap::filled(res, Vec3::zero()),
            valid,
        }
    }
}

const NO_FACE: u32 = u32::MAX;

/// Texel coverage of a rig's UV atlas at one resolution.
///
/// Coverage depends only on the UVs, so it is computed once per rig and
/// reused for every pose.
#[derive(Clone, Debug)]
pub struct UvRaster<T> {
    pub res: usize,
    /// Covering face per texel, `u32::MAX` where uncovered.
    pub face: Vec<u32>,
    pub bary: Vec<[T; 3]>,
    /// UV triangles skipped for having zero area.
    pub degenerate_faces: usize,
}

impl<T: Real> UvRaster<T> {
    pub fn build(rig: &HeadRig<T>, res: usize) -> Self {
        let n = res * res;
        let mut face = vec![NO_FACE; n];
        let mut bary = vec![[T::zero(); 3]; n];
        let mut degenerate = 0usize;
        let scale = T::from_usize(res);
        let eps = T::lit(1e-7);
        for (fi, tri) in rig.faces.iter().enumerate() {
            let p: [[T; 2]; 3] = [0, 1, 2].map(|k| {
                let uv = rig.uv[tri[k] as usize];
                [uv[0] * scale, uv[1] * scale]
            });
            let area = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
                - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
            if area.abs() < T::lit(1e-12) {
                degenerate += 1;
                continue;
            }
            let inv_area = T::one() / area;
            let (mut lo_x, mut hi_x) = (p[0][0], p[0][0]);
            let (mut lo_y, mut hi_y) = (p[0][1], p[0][1]);
            for q in &p[1..] {
                lo_x = lo_x.min(q[0]);
                hi_x = hi_x.max(q[0]);
                lo_y = lo_y.min(q[1]);
                hi_y = hi_y.max(q[1]);
            }
            let range = |lo: T, hi: T| {
                // texel i has its center at i + 0.5
                let a = (lo - T::half()).ceil().max(T::zero());
                let b = (hi - T::half()).floor().min(T::from_usize(res - 1));
                (a.to_usize().unwrap_or(0), b.to_isize().unwrap_or(-1))
            };
            let (i0, i1) = range(lo_x, hi_x);
            let (j0, j1) = range(lo_y, hi_y);
            if i1 < 0 || j1 < 0 {
                continue;
            }
            for j in j0..=(j1 as usize) {
                let y = T::from_usize(j) + T::half();
                for i in i0..=(i1 as usize) {
                    let x = T::from_usize(i) + T::half();
                    let edge = |a: [T; 2], b: [T; 2]| {
                        ((b[0] - a[0]) * (y - a[1]) - (x - a[0]) * (b[1] - a[1])) * inv_area
                    };
                    let b0 = edge(p[1], p[2]);
                    let b1 = edge(p[2], p[0]);
                    let b2 = edge(p[0], p[1]);
                    if b0 >= -eps && b1 >= -eps && b2 >= -eps {
                        let k = j * res + i;
                        face[k] = fi as u32;
                        bary[k] = [b0, b1, b2];
                    }
                }
            }
        }
        if degenerate > 0 {
            log::warn!("uv raster: skipped {degenerate} zero-area UV triangles");
        }
        Self {
            res,
            face,
            bary,
            degenerate_faces: degenerate,
        }
    }

    pub fn valid(&self) -> UvMap<bool> {
        UvMap {
            res: self.res,
            data: self.face.iter().map(|&f| f != NO_FACE).collect(),
        }
    }

    /// Interpolates posed vertex data into coarse position/normal maps.
    pub fn interpolate(&self, mesh: &CoarseMesh<T>, rig: &HeadRig<T>) -> UvGeometry<T> {
        let n = self.res * self.res;
        let mut pos = vec![Vec3::zero(); n];
        let mut nrm = vec![Vec3::zero(); n];
        for k in 0..n {
            let f = self.face[k];
            if f == NO_FACE {
                continue;
            }
            let tri = rig.faces[f as usize];
            let b = self.bary[k];
            let mut p = Vec3::zero();
            let mut q = Vec3::zero();
            for c in 0..3 {
                let v = tri[c] as usize;
                p += mesh.vertices[v] * b[c];
                q += mesh.vertex_normals[v] * b[c];
            }
            pos[k] = p;
            nrm[k] = q.normalized().unwrap_or_else(|| {
                let [a, b2, c] = tri.map(|v| mesh.vertices[v as usize]);
                (b2 - a).cross(c - a).normalized().unwrap_or(Vec3::unit_z())
            });
        }
        UvGeometry::from_coarse(
            UvMap { res: self.res, data: pos },
            UvMap { res: self.res, data: nrm },
            self.valid(),
        )
    }
}

/// Projects the posed mesh into coarse UV position and normal maps.
///
/// Coverage is decided by texel center; uncovered texels stay zero and
/// invalid.
pub fn rasterize_uv<T: Real>(mesh: &CoarseMesh<T>, rig: &HeadRig<T>, res: usize) -> UvGeometry<T> {
    UvRaster::build(rig, res).interpolate(mesh, rig)
}

/// `fine_pos = coarse_pos + bump · coarse_normal` on valid texels.
pub fn apply_bump<T: Real>(mut geom: UvGeometry<T>, bump: &UvMap<T>) -> UvGeometry<T> {
    assert_eq!(bump.res, geom.res(), "bump resolution must match the geometry");
    for k in 0..geom.valid.data.len() {
        geom.fine_pos.data[k] = if geom.valid.data[k] {
            geom.coarse_pos.data[k] + geom.coarse_normal.data[k] * bump.data[k]
        } else {
            Vec3::zero()
        };
    }
    geom
}

/// Difference stencil along one UV axis at a texel: `Δ = (P[plus] - P[minus]) · scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stencil<T> {
    pub plus: usize,
    pub minus: usize,
    pub scale: T,
}

/// Central difference where both neighbors are valid, one-sided at the
/// border of the valid region, `None` for an isolated texel.
pub fn diff_stencil<T: Real>(valid: &UvMap<bool>, i: usize, j: usize, along_u: bool) -> Option<Stencil<T>> {
    let res = valid.res;
    let here = j * res + i;
    let (c, step) = if along_u { (i, 1) } else { (j, res) };
    let next = (c + 1 < res && valid.data[here + step]).then(|| here + step);
    let prev = (c > 0 && valid.data[here - step]).then(|| here - step);
    match (next, prev) {
        (Some(p), Some(m)) => Some(Stencil { plus: p, minus: m, scale: T::half() }),
        (Some(p), None) => Some(Stencil { plus: p, minus: here, scale: T::one() }),
        (None, Some(m)) => Some(Stencil { plus: here, minus: m, scale: T::one() }),
        (None, None) => None,
    }
}

/// Per-texel record of how the fine normal was formed.
#[derive(Clone, Copy, Debug)]
pub enum NormalSource<T> {
    /// Texel outside the atlas.
    Invalid,
    /// Degenerate differentials; the coarse normal was copied.
    Coarse,
    /// `normal = sign · normalize(Δu × Δv)`.
    Cross {
        du: Stencil<T>,
        dv: Stencil<T>,
        cross: Vec3<T>,
        sign: T,
    },
}

/// Fine normals and their provenance.
pub fn fine_normals_traced<T: Real>(geom: &mut UvGeometry<T>) -> Vec<NormalSource<T>> {
    let res = geom.res();
    let mut sources = Vec::with_capacity(res * res);
    for j in 0..res {
        for i in 0..res {
            let k = j * res + i;
            if !geom.valid.data[k] {
                geom.fine_normal.data[k] = Vec3::zero();
                sources.push(NormalSource::Invalid);
                continue;
            }
            let stencils = (
                diff_stencil::<T>(&geom.valid, i, j, true),
                diff_stencil::<T>(&geom.valid, i, j, false),
            );
            let p = &geom.fine_pos.data;
            let src = match stencils {
                (Some(du), Some(dv)) => {
                    let a = (p[du.plus] - p[du.minus]) * du.scale;
                    let b = (p[dv.plus] - p[dv.minus]) * dv.scale;
                    let cross = a.cross(b);
                    match cross.normalized() {
                        Some(n) => {
                            let sign = if n.dot(geom.coarse_normal.data[k]) < T::zero() {
                                -T::one()
                            } else {
                                T::one()
                            };
                            geom.fine_normal.data[k] = n * sign;
                            NormalSource::Cross { du, dv, cross, sign }
                        }
                        None => NormalSource::Coarse,
                    }
                }
                _ => NormalSource::Coarse,
            };
            if let NormalSource::Coarse = src {
                geom.fine_normal.data[k] = geom.coarse_normal.data[k];
            }
            sources.push(src);
        }
    }
    sources
}

/// Fine normal map from discrete differentials of the fine position map,
/// oriented to agree with the coarse normal.
pub fn fine_normals<T: Real>(mut geom: UvGeometry<T>) -> UvGeometry<T> {
    fine_normals_traced(&mut geom);
    geom
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane_geometry(res: usize) -> UvGeometry<f64> {
        let pos = UvMap::from_fn(res, |i, j| Vec3::new(i as f64 * 0.01, j as f64 * 0.01, 0.0));
        let nrm = UvMap::filled(res, Vec3::unit_z());
        UvGeometry::from_coarse(pos, nrm, UvMap::filled(res, true))
    }

    #[test]
    fn constant_map_samples_constant() {
        let m = UvMap::filled(8, 0.25f64);
        for &(u, v) in &[(0.0, 0.0), (0.3, 0.9), (1.0, 1.0), (-2.0, 5.0)] {
            assert_eq!(sample_map(&m, u, v), 0.25);
        }
    }

    #[test]
    fn texel_center_returns_texel_value() {
        let m = UvMap::from_fn(8, |i, j| (i * 10 + j) as f64);
        for (i, j) in [(0, 0), (3, 5), (7, 7)] {
            let u = texel_center::<f64>(i, 8);
            let v = texel_center::<f64>(j, 8);
            assert_eq!(sample_map(&m, u, v), (i * 10 + j) as f64);
        }
    }

    #[test]
    fn midpoint_between_centers_is_mean() {
        let m = UvMap::from_fn(8, |i, j| (i * i + 3 * j) as f64);
        // centers of texels (2,4) and (3,4): u = 2.5/8 and 3.5/8
        let u = 3.0 / 8.0;
        let v = texel_center::<f64>(4, 8);
        let expected = 0.5 * ((4 + 12) as f64 + (9 + 12) as f64);
        assert_eq!(sample_map(&m, u, v), expected);
    }

    #[test]
    fn validity_is_conjunction_of_touched_texels() {
        let mut mask = UvMap::filled(4, true);
        mask.set(1, 1, false);
        // center of (1,1) and neighbors blending into it
        assert!(!sample_valid(&mask, 1.5 / 4.0, 1.5 / 4.0));
        assert!(!sample_valid(&mask, 1.0 / 4.0, 1.5 / 4.0));
        // exact center of (0,0) touches only (0,0)
        assert!(sample_valid(&mask, 0.5 / 4.0, 0.5 / 4.0));
    }

    #[test]
    fn zero_bump_keeps_coarse_positions() {
        let g = apply_bump(plane_geometry(6), &UvMap::filled(6, 0.0));
        assert_eq!(g.fine_pos, g.coarse_pos);
    }

    #[test]
    fn uniform_bump_offsets_plane() {
        let g = apply_bump(plane_geometry(6), &UvMap::filled(6, 0.003));
        for p in &g.fine_pos.data {
            assert_eq!(p.z, 0.003);
        }
    }

    #[test]
    fn planar_ramp_normals_point_up() {
        let g = fine_normals(apply_bump(plane_geometry(8), &UvMap::filled(8, 0.0)));
        for j in 1..7 {
            for i in 1..7 {
                let n = *g.fine_normal.get(i, j);
                assert!((n - Vec3::unit_z()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn normal_sign_follows_coarse_normal() {
        // a mirrored UV orientation flips the raw cross product
        let res = 6;
        let pos = UvMap::from_fn(res, |i, j| Vec3::new(-(i as f64) * 0.01, j as f64 * 0.01, 0.0));
        let nrm = UvMap::filled(res, Vec3::unit_z());
        let g = fine_normals(apply_bump(
            UvGeometry::from_coarse(pos, nrm, UvMap::filled(res, true)),
            &UvMap::filled(res, 0.0),
        ));
        assert!((*g.fine_normal.get(2, 2) - Vec3::unit_z()).norm() < 1e-12);
    }

    #[test]
    fn cross_product_antisymmetry() {
        let a = Vec3::new(0.3f64, -0.2, 0.7);
        let b = Vec3::new(-0.1f64, 0.5, 0.4);
        assert_eq!(a.cross(b), -b.cross(a));
    }

    #[test]
    fn isolated_texel_falls_back_to_coarse_normal() {
        let res = 5;
        let mut valid = UvMap::filled(res, false);
        valid.set(2, 2, true);
        let pos = UvMap::filled(res, Vec3::new(0.0, 0.0, 1.0));
        let nrm = UvMap::filled(res, Vec3::new(0.0f64, 1.0, 0.0));
        let g = fine_normals(apply_bump(UvGeometry::from_coarse(pos, nrm, valid), &UvMap::filled(res, 0.0)));
        assert_eq!(*g.fine_normal.get(2, 2), Vec3::new(0.0, 1.0, 0.0));
        assert_eq!(*g.fine_normal.get(0, 0), Vec3::zero());
    }

    #[test]
    fn stencils_never_cross_invalid_texels() {
        let mut valid = UvMap::filled(5, true);
        valid.set(3, 2, false);
        let s = diff_stencil::<f64>(&valid, 2, 2, true).unwrap();
        assert_eq!((s.plus, s.minus, s.scale), (valid.idx(2, 2), valid.idx(1, 2), 1.0));
        // (4,2): right edge of the map, left neighbor invalid
        assert!(diff_stencil::<f64>(&valid, 4, 2, true).is_none());
        let s = diff_stencil::<f64>(&valid, 4, 2, false).unwrap();
        assert_eq!((s.plus, s.minus, s.scale), (valid.idx(4, 3), valid.idx(4, 1), 0.5));
    }
}
