//! Pinhole camera, EWA projection and sorted alpha compositing of a
//! Gaussian cloud into a 10-channel payload (group mask, camera distance,
//! normal, albedo) plus alpha.
//!
//! Two rasterizers share the projection and per-pixel arithmetic: the tiled
//! one used everywhere, and a brute-force reference that walks every
//! Gaussian for every pixel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussgen::{GaussianCloud, Splat};
use crate::math::{Mat3, Sym2, Vec3};
use crate::real::Real;

/// Payload layout: mask 0..3, distance 3, normal 4..7, albedo 7..10.
pub const PAYLOAD: usize = 10;
pub const CH_MASK: usize = 0;
pub const CH_DEPTH: usize = 3;
pub const CH_NORMAL: usize = 4;
pub const CH_ALBEDO: usize = 7;

/// Rasterizer tunables.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RasterConfig {
    pub tile_size: usize,
    /// Ellipse extent, in standard deviations, for binning and per-pixel cutoff.
    pub cutoff_sigma: f64,
    pub alpha_max: f64,
    pub min_transmittance: f64,
    /// Isotropic screen-space dilation, px².
    pub dilation: f64,
    pub near: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            tile_size: 16,
            cutoff_sigma: 3.0,
            alpha_max: 0.99,
            min_transmittance: 1e-4,
            dilation: 0.3,
            near: 0.01,
        }
    }
}

impl RasterConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tile_size > 0
            && self.cutoff_sigma > 0.0
            && self.alpha_max > 0.0
            && self.alpha_max < 1.0
            && self.min_transmittance >= 0.0
            && self.dilation >= 0.0
            && self.near > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("raster config", format!("{self:?}")))
        }
    }
}

/// OpenCV-style pinhole camera: `x` right, `y` down, `z` forward.
/// `rotation`/`translation` map world to camera: `p_c = R p_w + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> Camera<T> {
    /// Camera at `eye` looking at `target`; `up` picks the roll (image `y`
    /// points against it). Principal point at the image center.
    pub fn look_at(eye: Vec3<T>, target: Vec3<T>, up: Vec3<T>, focal: T, width: usize, height: usize) -> Result<Self> {
        let z = (target - eye).normalized().ok_or(Error::ZeroVector)?;
        let x = z
            .cross(up)
            .normalized()
            .ok_or_else(|| Error::invalid("camera", "up vector parallel to view direction"))?;
        let y = z.cross(x);
        let rotation = Mat3::from_rows(x, y, z);
        Ok(Self {
            fx: focal,
            fy: focal,
            cx: T::from_usize(width) * T::half(),
            cy: T::from_usize(height) * T::half(),
            width,
            height,
            rotation,
            translation: -rotation.mul_vec(eye),
        })
    }

    pub fn center(&self) -> Vec3<T> {
        -self.rotation.transpose().mul_vec(self.translation)
    }

    pub fn to_camera(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(p) + self.translation
    }

    /// Unit world-space ray through image point `(px, py)`.
    pub fn ray(&self, px: T, py: T) -> Vec3<T> {
        let d = Vec3::new((px - self.cx) / self.fx, (py - self.cy) / self.fy, T::one());
        self.rotation.transpose().mul_vec(d).normalized().unwrap_or(Vec3::unit_z())
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(Error::invalid("camera", "focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera", "empty image"));
        }
        let err = self.rotation.orthonormality_error();
        if !(err <= T::lit(1e-6)) {
            return Err(Error::invalid("camera", format!("rotation not orthonormal (error {err})")));
        }
        if !self.translation.is_finite() || !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::invalid("camera", "non-finite extrinsics"));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Camera<U> {
        let c = |v: T| U::lit(v.to_f64_lossy());
        Camera {
            fx: c(self.fx),
            fy: c(self.fy),
            cx: c(self.cx),
            cy: c(self.cy),
            width: self.width,
            height: self.height,
            rotation: self.rotation.cast(),
            translation: self.translation.cast(),
        }
    }
}

/// A Gaussian in screen space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected<T> {
    pub index: u32,
    pub mean2d: [T; 2],
    pub cov2d: Sym2<T>,
    pub conic: Sym2<T>,
    pub view_depth: T,
    pub cam_distance: T,
    /// Binning half-extent, px.
    pub radius: T,
    pub opacity: T,
    pub payload: [T; PAYLOAD],
}

/// Intermediates of the EWA projection, kept for the backward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionTerms<T> {
    pub cam_point: Vec3<T>,
    /// `J·W`, two rows.
    pub jw: [Vec3<T>; 2],
    /// World covariance.
    pub sigma: Mat3<T>,
}

/// World covariance `R(q)·diag(s²)·R(q)ᵀ`.
pub fn world_covariance<T: Real>(s: &Splat<T>) -> Mat3<T> {
    let r = s.rotation.to_mat();
    let d = Mat3::diag(s.scale.mul_elem(s.scale));
    r.mul_mat(&d).mul_mat(&r.transpose())
}

/// EWA projection terms, or `None` in front of the near plane.
pub fn projection_terms<T: Real>(s: &Splat<T>, cam: &Camera<T>, cfg: &RasterConfig) -> Option<ProjectionTerms<T>> {
    let t = cam.to_camera(s.position);
    if !(t.z >= T::lit(cfg.near)) {
        return None;
    }
    let iz = T::one() / t.z;
    let w = &cam.rotation;
    let row0 = w.row(0) * (cam.fx * iz) - w.row(2) * (cam.fx * t.x * iz * iz);
    let row1 = w.row(1) * (cam.fy * iz) - w.row(2) * (cam.fy * t.y * iz * iz);
    Some(ProjectionTerms {
        cam_point: t,
        jw: [row0, row1],
        sigma: world_covariance(s),
    })
}

/// Projects one Gaussian; `None` when culled.
pub fn project_gaussian<T: Real>(s: &Splat<T>, index: u32, cam: &Camera<T>, cfg: &RasterConfig) -> Option<Projected<T>> {
    let pt = projection_terms(s, cam, cfg)?;
    let t = pt.cam_point;
    let [a, b] = pt.jw;
    let sa = pt.sigma.mul_vec(a);
    let sb = pt.sigma.mul_vec(b);
    let dil = T::lit(cfg.dilation);
    let cov2d = Sym2::new(a.dot(sa) + dil, a.dot(sb), b.dot(sb) + dil);
    let conic = cov2d.inverse()?;
    let mean2d = [cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy];
    let radius = T::lit(cfg.cutoff_sigma) * cov2d.eigenvalues().0.sqrt();
    let (w, h) = (T::from_usize(cam.width), T::from_usize(cam.height));
    if !(mean2d[0] + radius >= T::zero() && mean2d[0] - radius <= w && mean2d[1] + radius >= T::zero() && mean2d[1] - radius <= h) {
        return None;
    }
    let cam_distance = t.norm();
    let mut payload = [T::zero(); PAYLOAD];
    payload[CH_MASK..CH_MASK + 3].copy_from_slice(&s.group.one_hot());
    payload[CH_DEPTH] = cam_distance;
    payload[CH_NORMAL..CH_NORMAL + 3].copy_from_slice(&s.normal.to_array());
    payload[CH_ALBEDO..CH_ALBEDO + 3].copy_from_slice(&s.color.to_array());
    Some(Projected {
        index,
        mean2d,
        cov2d,
        conic,
        view_depth: t.z,
        cam_distance,
        radius,
        opacity: s.opacity,
        payload,
    })
}

/// Projects the whole cloud and returns survivors in compositing order:
/// ascending view depth, ties by index.
pub fn project_cloud<T: Real>(cloud: &GaussianCloud<T>, cam: &Camera<T>, cfg: &RasterConfig) -> Vec<Projected<T>> {
    let mut out: Vec<Projected<T>> = (0..cloud.len())
        .into_par_iter()
        .filter_map(|i| project_gaussian(&cloud.get(i), i as u32, cam, cfg))
        .collect();
    out.sort_by(|a, b| {
        a.view_depth
            .partial_cmp(&b.view_depth)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.index.cmp(&b.index))
    });
    out
}

/// Compositing weight at a pixel center, or `None` outside the cutoff ellipse.
#[inline]
pub fn splat_weight<T: Real>(g: &Projected<T>, px: T, py: T, cut2: T, alpha_max: T) -> Option<T> {
    let dx = px - g.mean2d[0];
    let dy = py - g.mean2d[1];
    if dx.abs() > g.radius || dy.abs() > g.radius {
        return None;
    }
    let q = g.conic.quad_form(dx, dy);
    if !(q <= cut2) {
        return None;
    }
    Some((g.opacity * (-T::half() * q).exp()).max(T::zero()).min(alpha_max))
}

/// Per-pixel buffers. `payload` holds the accumulated channels, premultiplied
/// by coverage; `alpha = 1 − T_final`.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderBuffers<T> {
    pub width: usize,
    pub height: usize,
    pub payload: Vec<[T; PAYLOAD]>,
    pub alpha: Vec<T>,
}

impl<T: Real> RenderBuffers<T> {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            payload: vec![[T::zero(); PAYLOAD]; width * height],
            alpha: vec![T::zero(); width * height],
        }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn mask(&self, i: usize) -> [T; 3] {
        let p = &self.payload[i];
        [p[0], p[1], p[2]]
    }

    pub fn depth(&self, i: usize) -> T {
        self.payload[i][CH_DEPTH]
    }

    pub fn normal(&self, i: usize) -> Vec3<T> {
        let p = &self.payload[i];
        Vec3::new(p[CH_NORMAL], p[CH_NORMAL + 1], p[CH_NORMAL + 2])
    }

    pub fn albedo(&self, i: usize) -> Vec3<T> {
        let p = &self.payload[i];
        Vec3::new(p[CH_ALBEDO], p[CH_ALBEDO + 1], p[CH_ALBEDO + 2])
    }

    /// Camera distance of the covered surface (`depth / alpha`), if covered.
    pub fn surface_distance(&self, i: usize) -> Option<T> {
        let a = self.alpha[i];
        (a > T::lit(1e-6)).then(|| self.depth(i) / a)
    }

    /// Channel planes `(mask, depth, normal, albedo, alpha)` with 3, 1, 3, 3, 1 values per pixel.
    pub fn planes(&self) -> [(&'static str, usize, Vec<T>); 5] {
        let take = |lo: usize, n: usize| self.payload.iter().flat_map(|p| p[lo..lo + n].to_vec()).collect::<Vec<T>>();
        [
            ("mask", 3, take(CH_MASK, 3)),
            ("depth", 1, take(CH_DEPTH, 1)),
            ("normal", 3, take(CH_NORMAL, 3)),
            ("albedo", 3, take(CH_ALBEDO, 3)),
            ("alpha", 1, self.alpha.clone()),
        ]
    }

    /// Largest per-channel absolute difference, alpha included.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        let mut m = T::zero();
        for (a, b) in self.payload.iter().zip(&other.payload) {
            for k in 0..PAYLOAD {
                m = m.max((a[k] - b[k]).abs());
            }
        }
        for (a, b) in self.alpha.iter().zip(&other.alpha) {
            m = m.max((*a - *b).abs());
        }
        if self.len() != other.len() {
            return T::infinity();
        }
        m
    }
}

struct Pixel<T> {
    acc: [T; PAYLOAD],
    t: T,
}

impl<T: Real> Pixel<T> {
    fn new() -> Self {
        Self {
            acc: [T::zero(); PAYLOAD],
            t: T::one(),
        }
    }

    #[inline]
    fn blend(&mut self, g: &Projected<T>, alpha: T) {
        let w = alpha * self.t;
        for (a, p) in self.acc.iter_mut().zip(&g.payload) {
            *a += *p * w;
        }
        self.t *= T::one() - alpha;
    }
}

/// Tiled rasterizer: bins by the cutoff ellipse's bounding square, composites
/// each tile's pixels front to back with early termination.
pub fn rasterize<T: Real>(cloud: &GaussianCloud<T>, cam: &Camera<T>, cfg: &RasterConfig) -> RenderBuffers<T> {
    let sorted = project_cloud(cloud, cam, cfg);
    rasterize_projected(&sorted, cam, cfg)
}

/// Tile grid of a camera: `(tiles across, tiles down)`.
pub fn tile_grid<T: Real>(cam: &Camera<T>, cfg: &RasterConfig) -> (usize, usize) {
    (cam.width.div_ceil(cfg.tile_size), cam.height.div_ceil(cfg.tile_size))
}

/// Per-tile lists of positions into `sorted`, each in compositing order.
/// A Gaussian lands in every tile its cutoff square overlaps.
pub fn bin_tiles<T: Real>(sorted: &[Projected<T>], cam: &Camera<T>, cfg: &RasterConfig) -> Vec<Vec<u32>> {
    let (ntx, nty) = tile_grid(cam, cfg);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); ntx * nty];
    let tsz = T::from_usize(cfg.tile_size);
    let tile_of = |v: T, n: usize| -> usize { (v / tsz).floor().max(T::zero()).to_f64_lossy().min((n - 1) as f64) as usize };
    for (k, g) in sorted.iter().enumerate() {
        let (x0, x1) = (tile_of(g.mean2d[0] - g.radius, ntx), tile_of(g.mean2d[0] + g.radius, ntx));
        let (y0, y1) = (tile_of(g.mean2d[1] - g.radius, nty), tile_of(g.mean2d[1] + g.radius, nty));
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                bins[ty * ntx + tx].push(k as u32);
            }
        }
    }
    bins
}

/// Tiled compositing of already projected, depth-ordered Gaussians.
pub fn rasterize_projected<T: Real>(sorted: &[Projected<T>], cam: &Camera<T>, cfg: &RasterConfig) -> RenderBuffers<T> {
    let (w, h) = (cam.width, cam.height);
    let ts = cfg.tile_size;
    let (ntx, _) = tile_grid(cam, cfg);
    let bins = bin_tiles(sorted, cam, cfg);
    let cut2 = T::lit(cfg.cutoff_sigma * cfg.cutoff_sigma);
    let amax = T::lit(cfg.alpha_max);
    let tmin = T::lit(cfg.min_transmittance);
    let tiles: Vec<Vec<Pixel<T>>> = bins
        .par_iter()
        .enumerate()
        .map(|(tile, list)| {
            let (tx, ty) = (tile % ntx, tile / ntx);
            let (x0, y0) = (tx * ts, ty * ts);
            let (x1, y1) = ((x0 + ts).min(w), (y0 + ts).min(h));
            let mut px = Vec::with_capacity((x1 - x0) * (y1 - y0));
            for y in y0..y1 {
                let fy = T::from_usize(y) + T::half();
                for x in x0..x1 {
                    let fx = T::from_usize(x) + T::half();
                    let mut p = Pixel::new();
                    for &k in list {
                        let g = &sorted[k as usize];
                        if let Some(a) = splat_weight(g, fx, fy, cut2, amax) {
                            p.blend(g, a);
                            if p.t < tmin {
                                break;
                            }
                        }
                    }
                    px.push(p);
                }
            }
            px
        })
        .collect();
    let mut out = RenderBuffers::zeros(w, h);
    for (tile, px) in tiles.into_iter().enumerate() {
        let (tx, ty) = (tile % ntx, tile / ntx);
        let (x0, y0) = (tx * ts, ty * ts);
        let x1 = (x0 + ts).min(w);
        let tw = x1 - x0;
        for (k, p) in px.into_iter().enumerate() {
            let i = (y0 + k / tw) * w + x0 + k % tw;
            out.payload[i] = p.acc;
            out.alpha[i] = T::one() - p.t;
        }
    }
    out
}

/// Brute-force oracle: one global depth order, every pixel visits every
/// Gaussian, no tiling and no early termination.
pub fn rasterize_reference<T: Real>(cloud: &GaussianCloud<T>, cam: &Camera<T>, cfg: &RasterConfig) -> RenderBuffers<T> {
    let sorted = project_cloud(cloud, cam, cfg);
    let (w, h) = (cam.width, cam.height);
    let cut2 = T::lit(cfg.cutoff_sigma * cfg.cutoff_sigma);
    let amax = T::lit(cfg.alpha_max);
    let mut out = RenderBuffers::zeros(w, h);
    for y in 0..h {
        let fy = T::from_usize(y) + T::half();
        for x in 0..w {
            let fx = T::from_usize(x) + T::half();
            let mut p = Pixel::new();
            for g in &sorted {
                if let Some(a) = splat_weight(g, fx, fy, cut2, amax) {
                    p.blend(g, a);
                }
            }
            let i = y * w + x;
            out.payload[i] = p.acc;
            out.alpha[i] = T::one() - p.t;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussgen::Group;
    use crate::math::Quat;

    fn axis_cam(size: usize, f: f64) -> Camera<f64> {
        Camera {
            fx: f,
            fy: f,
            cx: size as f64 / 2.0,
            cy: size as f64 / 2.0,
            width: size,
            height: size,
            rotation: Mat3::identity(),
            translation: Vec3::zero(),
        }
    }

    fn splat(p: Vec3<f64>, s: f64, o: f64, c: f64) -> Splat<f64> {
        Splat {
            position: p,
            normal: Vec3::new(0.0, 0.0, -1.0),
            color: Vec3::splat(c),
            scale: Vec3::splat(s),
            rotation: Quat::identity(),
            opacity: o,
            group: Group::Face,
        }
    }

    #[test]
    fn on_axis_projection() {
        let cam = axis_cam(64, 100.0);
        let g = project_gaussian(&splat(Vec3::new(0.0, 0.0, 2.0), 0.01, 1.0, 0.5), 0, &cam, &RasterConfig::default()).unwrap();
        assert_eq!(g.cam_distance, 2.0);
        assert_eq!(g.mean2d, [32.0, 32.0]);
    }

    #[test]
    fn isotropic_cov_matches_first_order() {
        let cam = axis_cam(64, 300.0);
        let (s, d) = (0.002, 1.5);
        let g = project_gaussian(&splat(Vec3::new(0.0, 0.0, d), s, 1.0, 0.5), 0, &cam, &RasterConfig::default()).unwrap();
        let expect = (300.0 * s / d).powi(2) + 0.3;
        assert!((g.cov2d.a / expect - 1.0).abs() < 0.01);
        assert!((g.cov2d.c / expect - 1.0).abs() < 0.01);
        assert!(g.cov2d.b.abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_culled() {
        let cam = axis_cam(64, 100.0);
        assert!(project_gaussian(&splat(Vec3::new(0.0, 0.0, -1.0), 0.01, 1.0, 0.5), 0, &cam, &RasterConfig::default()).is_none());
    }

    #[test]
    fn look_at_axes() {
        let cam = Camera::look_at(Vec3::new(0.0, 0.0, 1.0), Vec3::zero(), Vec3::new(0.0, 1.0, 0.0), 100.0f64, 32, 32).unwrap();
        assert!((cam.center() - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        let p = cam.to_camera(Vec3::new(0.1, 0.2, 0.0));
        // world +x is image right, world +y is image up
        assert!(p.x > 0.0 && p.y < 0.0 && (p.z - 1.0).abs() < 1e-12);
        cam.validate().unwrap();
    }

    #[test]
    fn peak_alpha_equals_opacity() {
        // mean exactly on a pixel center
        let cam = axis_cam(33, 100.0);
        let mut c = GaussianCloud::new();
        c.push(splat(Vec3::new(0.0, 0.0, 2.0), 0.01, 0.6, 0.5));
        let b = rasterize(&c, &cam, &RasterConfig::default());
        let i = 16 * 33 + 16;
        assert!((b.alpha[i] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn two_layer_compositing() {
        let cam = axis_cam(33, 100.0);
        let mut c = GaussianCloud::new();
        c.push(splat(Vec3::new(0.0, 0.0, 3.0), 0.02, 0.7, 0.9));
        c.push(splat(Vec3::new(0.0, 0.0, 2.0), 0.02, 0.4, 0.2));
        let b = rasterize(&c, &cam, &RasterConfig::default());
        let i = 16 * 33 + 16;
        let expect = 0.2 * 0.4 + 0.9 * 0.7 * (1.0 - 0.4);
        assert!((b.albedo(i).x - expect).abs() < 1e-12);
    }

    #[test]
    fn empty_cloud_gives_zero_buffers() {
        let cam = axis_cam(20, 100.0);
        let c = GaussianCloud::<f64>::new();
        assert_eq!(rasterize_reference(&c, &cam, &RasterConfig::default()), RenderBuffers::zeros(20, 20));
        assert_eq!(rasterize(&c, &cam, &RasterConfig::default()), RenderBuffers::zeros(20, 20));
    }

    #[test]
    fn single_gaussian_tile_equals_reference_bitwise() {
        let cam = axis_cam(40, 120.0);
        let mut c = GaussianCloud::new();
        c.push(splat(Vec3::new(0.03, -0.02, 1.0), 0.03, 0.8, 0.3));
        let cfg = RasterConfig::default();
        assert_eq!(rasterize(&c, &cam, &cfg), rasterize_reference(&c, &cam, &cfg));
    }
}
