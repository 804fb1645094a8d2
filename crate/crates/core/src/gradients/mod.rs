//! Reverse-mode gradients of a rendered image with respect to the texture
//! leaves (albedo, bump, disk scales) and the SH lighting, plus the texture
//! regularizers and a small inverse-rendering fitter.
//!
//! The forward pass reuses the production pipeline pieces and records just
//! enough to walk it backwards: the fine-normal provenance per texel, the
//! depth-ordered projected Gaussians, and the per-pixel blend lists.
//! Occlusion is a constant of the backward pass.

mod fit;
mod regularizers;

pub use fit::{fit_textures, psnr, Adam, FitConfig, FitResult, FitTarget, LossReport, RegWeights};
pub use regularizers::{
    bump_l1_grad, r1_penalty, reg_bump_l1, reg_smoothness, reg_symmetry, smoothness_grad, smoothness_terms,
    symmetry_grad,
};

use crate::error::{Error, Result};
use crate::gaussgen::{face_gaussians_at, merge_clouds, quat_from_normal_backward, GaussianCloud, Group};
use crate::headmodel::{pose_mesh, HeadParams, HeadRig};
use crate::math::{normalize_backward, Mat3, Vec3};
use crate::real::Real;
use crate::shading::{
    occlusion_map, sh_band, sh_basis, sh_basis_grad, sh_irradiance_unclamped, shade_unclamped, Background, Image,
    OcclusionConfig, ShLighting, A_HAT,
};
use crate::splatter::{
    bin_tiles, project_cloud, projection_terms, splat_weight, tile_grid, Camera, Projected, RasterConfig,
    RenderBuffers, CH_ALBEDO, CH_DEPTH, CH_NORMAL, PAYLOAD,
};
use crate::uvmaps::{apply_bump, fine_normals_traced, footprint, sample_valid, Footprint, NormalSource, TextureSet, UvGeometry, UvMap, UvRaster};

/// Differentiable leaves.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    pub albedo: UvMap<Vec3<T>>,
    pub bump: UvMap<T>,
    pub disk_scale: [T; 2],
    pub light: ShLighting<T>,
}

/// Leaf classes of a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LeafClass {
    Albedo,
    Bump,
    DiskScale,
    Light,
}

impl LeafClass {
    pub const ALL: [LeafClass; 4] = [LeafClass::Albedo, LeafClass::Bump, LeafClass::DiskScale, LeafClass::Light];

    pub fn name(self) -> &'static str {
        match self {
            LeafClass::Albedo => "albedo",
            LeafClass::Bump => "bump",
            LeafClass::DiskScale => "disk_scale",
            LeafClass::Light => "sh",
        }
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new(tex: &TextureSet<T>, light: &ShLighting<T>) -> Self {
        Self {
            albedo: tex.albedo.clone(),
            bump: tex.bump.clone(),
            disk_scale: tex.disk_scale,
            light: *light,
        }
    }

    /// Same shapes, all zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            albedo: UvMap::filled(self.albedo.res, Vec3::zero()),
            bump: UvMap::filled(self.bump.res, T::zero()),
            disk_scale: [T::zero(); 2],
            light: ShLighting::zero(),
        }
    }

    pub fn textures(&self) -> TextureSet<T> {
        TextureSet {
            albedo: self.albedo.clone(),
            bump: self.bump.clone(),
            disk_scale: self.disk_scale,
        }
    }

    pub fn leaf_len(&self, class: LeafClass) -> usize {
        match class {
            LeafClass::Albedo => self.albedo.data.len() * 3,
            LeafClass::Bump => self.bump.data.len(),
            LeafClass::DiskScale => 2,
            LeafClass::Light => 27,
        }
    }

    pub fn get(&self, class: LeafClass, i: usize) -> T {
        match class {
            LeafClass::Albedo => self.albedo.data[i / 3].to_array()[i % 3],
            LeafClass::Bump => self.bump.data[i],
            LeafClass::DiskScale => self.disk_scale[i],
            LeafClass::Light => self.light.coeffs[i / 9][i % 9],
        }
    }

    pub fn set(&mut self, class: LeafClass, i: usize, v: T) {
        match class {
            LeafClass::Albedo => {
                let mut a = self.albedo.data[i / 3].to_array();
                a[i % 3] = v;
                self.albedo.data[i / 3] = Vec3::from_array(a);
            }
            LeafClass::Bump => self.bump.data[i] = v,
            LeafClass::DiskScale => self.disk_scale[i] = v,
            LeafClass::Light => self.light.coeffs[i / 9][i % 9] = v,
        }
    }

    pub fn flat(&self, class: LeafClass) -> Vec<T> {
        match class {
            LeafClass::Albedo => self.albedo.data.iter().flat_map(|v| v.to_array()).collect(),
            LeafClass::Bump => self.bump.data.clone(),
            LeafClass::DiskScale => self.disk_scale.to_vec(),
            LeafClass::Light => self.light.to_flat(),
        }
    }

    pub fn set_flat(&mut self, class: LeafClass, v: &[T]) {
        for (i, x) in v.iter().enumerate() {
            self.set(class, i, *x);
        }
    }

    /// `self += other · k`, leafwise.
    pub fn add_scaled(&mut self, other: &Self, k: T) {
        for class in LeafClass::ALL {
            for i in 0..self.leaf_len(class) {
                let v = self.get(class, i) + other.get(class, i) * k;
                self.set(class, i, v);
            }
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.albedo.res == other.albedo.res && self.bump.res == other.bump.res
    }
}

/// Where the occlusion factors of a render come from.
#[derive(Clone, Debug, PartialEq)]
pub enum OcclusionSource<T> {
    /// Estimated from the forward buffers, then held constant.
    Estimate(OcclusionConfig),
    /// Fixed factors, one per pixel.
    Fixed(Vec<T>),
}

/// Everything held constant while the leaves vary: pose, camera, the sample
/// set and any extra (hair) Gaussians.
#[derive(Clone, Debug)]
pub struct GradScene<T> {
    pub rig: HeadRig<T>,
    /// Coarse maps of the pose; fine maps are rebuilt per forward.
    pub coarse: UvGeometry<T>,
    pub face_uv: Vec<[T; 2]>,
    pub epsilon: T,
    /// Appended after the face block, not differentiated.
    pub extra: GaussianCloud<T>,
    pub camera: Camera<T>,
    pub raster: RasterConfig,
    pub background: Background<T>,
    pub occlusion: OcclusionSource<T>,
}

impl<T: Real> GradScene<T> {
    /// Scene for one pose and camera, sampling face Gaussians on the fixed
    /// grid at `alpha_head` over valid texels.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rig: &HeadRig<T>,
        raster_uv: &UvRaster<T>,
        params: &HeadParams<T>,
        alpha_head: f64,
        epsilon: T,
        camera: Camera<T>,
        raster: RasterConfig,
        background: Background<T>,
        occlusion: OcclusionSource<T>,
    ) -> Result<Self> {
        let mesh = pose_mesh(rig, params)?;
        let coarse = raster_uv.interpolate(&mesh, rig);
        let face_uv = crate::gaussgen::sample_grid::<T>(alpha_head, coarse.res())
            .into_iter()
            .filter(|&[u, v]| sample_valid(&coarse.valid, u, v))
            .collect();
        Ok(Self {
            rig: rig.clone(),
            coarse,
            face_uv,
            epsilon,
            extra: GaussianCloud::new(),
            camera,
            raster,
            background,
            occlusion,
        })
    }

    pub fn n_face(&self) -> usize {
        self.face_uv.len()
    }
}

/// One contribution to a pixel: position in the sorted list and its weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Blend<T> {
    pub sorted: u32,
    pub alpha: T,
    /// The weight hit the opacity clamp.
    pub clamped: bool,
}

/// Recorded forward pass.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    pub geom: UvGeometry<T>,
    pub sources: Vec<NormalSource<T>>,
    pub cloud: GaussianCloud<T>,
    pub sorted: Vec<Projected<T>>,
    pub blends: Vec<Vec<Blend<T>>>,
    pub buffers: RenderBuffers<T>,
    pub occlusion: Vec<T>,
    /// Image before the final clamp to `[0,1]`.
    pub unclamped: Image<T>,
    pub image: Image<T>,
}

/// Tiled compositing that also records each pixel's blend list. Produces the
/// same buffers as [`crate::splatter::rasterize_projected`].
pub fn composite_traced<T: Real>(
    sorted: &[Projected<T>],
    cam: &Camera<T>,
    cfg: &RasterConfig,
) -> (RenderBuffers<T>, Vec<Vec<Blend<T>>>) {
    let (w, h) = (cam.width, cam.height);
    let ts = cfg.tile_size;
    let (ntx, _) = tile_grid(cam, cfg);
    let bins = bin_tiles(sorted, cam, cfg);
    let cut2 = T::lit(cfg.cutoff_sigma * cfg.cutoff_sigma);
    let amax = T::lit(cfg.alpha_max);
    let tmin = T::lit(cfg.min_transmittance);
    let mut out = RenderBuffers::zeros(w, h);
    let mut blends = vec![Vec::new(); w * h];
    for y in 0..h {
        let fy = T::from_usize(y) + T::half();
        for x in 0..w {
            let fx = T::from_usize(x) + T::half();
            let i = y * w + x;
            let list = &bins[(y / ts) * ntx + x / ts];
            let mut acc = [T::zero(); PAYLOAD];
            let mut t = T::one();
            for &k in list {
                let g = &sorted[k as usize];
                if let Some(a) = splat_weight(g, fx, fy, cut2, amax) {
                    let wgt = a * t;
                    for (c, p) in acc.iter_mut().zip(&g.payload) {
                        *c += *p * wgt;
                    }
                    t *= T::one() - a;
                    blends[i].push(Blend {
                        sorted: k,
                        alpha: a,
                        clamped: a >= amax,
                    });
                    if t < tmin {
                        break;
                    }
                }
            }
            out.payload[i] = acc;
            out.alpha[i] = T::one() - t;
        }
    }
    (out, blends)
}

/// Forward pass on the leaves, recorded for [`backward`].
pub fn forward<T: Real>(scene: &GradScene<T>, p: &ParamSet<T>) -> Result<Trace<T>> {
    if p.albedo.res != scene.coarse.res() || p.bump.res != scene.coarse.res() {
        return Err(Error::Dimension {
            what: "leaf texture resolution",
            expected: scene.coarse.res(),
            got: p.albedo.res,
        });
    }
    let mut geom = apply_bump(scene.coarse.clone(), &p.bump);
    let sources = fine_normals_traced(&mut geom);
    let tex = TextureSet {
        albedo: p.albedo.clone(),
        bump: p.bump.clone(),
        disk_scale: p.disk_scale,
    };
    let face = face_gaussians_at(&geom, &tex, &scene.rig, &scene.face_uv, scene.epsilon);
    let cloud = merge_clouds(&face, &scene.extra);
    let sorted = project_cloud(&cloud, &scene.camera, &scene.raster);
    let (buffers, blends) = composite_traced(&sorted, &scene.camera, &scene.raster);
    let occlusion = match &scene.occlusion {
        OcclusionSource::Estimate(cfg) => occlusion_map(&buffers, &scene.camera, cfg),
        OcclusionSource::Fixed(v) => v.clone(),
    };
    let unclamped = shade_unclamped(&buffers, &p.light, &scene.background, &occlusion)?;
    let mut image = unclamped.clone();
    for px in &mut image.pixels {
        *px = px.map(|v| v.max(T::zero()).min(T::one()));
    }
    Ok(Trace {
        geom,
        sources,
        cloud,
        sorted,
        blends,
        buffers,
        occlusion,
        unclamped,
        image,
    })
}

/// Per-Gaussian screen-space adjoints.
#[derive(Clone, Copy, Debug, Default)]
struct SplatGrad<T> {
    mean2d: [T; 2],
    /// Adjoints of the conic entries `a`, `b`, `c` of `a·dx² + 2b·dx·dy + c·dy²`.
    conic: [T; 3],
    payload: [T; PAYLOAD],
}

/// Gradients of `Σ_pixels d_image · image` with respect to every leaf.
pub fn backward<T: Real>(scene: &GradScene<T>, p: &ParamSet<T>, trace: &Trace<T>, d_image: &[Vec3<T>]) -> Result<ParamSet<T>> {
    let buf = &trace.buffers;
    let n_px = buf.len();
    if d_image.len() != n_px {
        return Err(Error::Dimension {
            what: "image adjoint",
            expected: n_px,
            got: d_image.len(),
        });
    }
    if trace.cloud.len() != scene.n_face() + scene.extra.len() || p.albedo.res != trace.geom.res() || p.bump.res != trace.geom.res() {
        return Err(Error::invalid("trace", "recorded with a different scene"));
    }
    let mut grads = p.zeros_like();
    let zero = T::zero();
    let one = T::one();

    // shading → buffer adjoints
    let mut d_payload = vec![[zero; PAYLOAD]; n_px];
    let mut d_alpha = vec![zero; n_px];
    for i in 0..n_px {
        let pre = trace.unclamped.pixels[i].to_array();
        let mut g = d_image[i].to_array();
        for c in 0..3 {
            if !(pre[c] >= zero && pre[c] <= one) {
                g[c] = zero;
            }
        }
        let bg = scene.background.at(i).to_array();
        d_alpha[i] = -(g[0] * bg[0] + g[1] * bg[1] + g[2] * bg[2]);
        let Some(n) = buf.normal(i).normalized() else { continue };
        let occ = trace.occlusion[i];
        let eu = sh_irradiance_unclamped(&p.light, n).to_array();
        let albedo = buf.albedo(i).to_array();
        let y = sh_basis(n);
        let dy = sh_basis_grad(n);
        let mut dn = Vec3::zero();
        for c in 0..3 {
            let e = eu[c].max(zero);
            d_payload[i][CH_ALBEDO + c] = g[c] * e * occ;
            if eu[c] < zero {
                continue;
            }
            let de = g[c] * albedo[c] * occ;
            for k in 0..9 {
                let ak = T::lit(A_HAT[sh_band(k)]);
                grads.light.coeffs[c][k] += de * ak * y[k];
                dn += dy[k] * (de * ak * p.light.coeffs[c][k]);
            }
        }
        let dnb = normalize_backward(buf.normal(i), dn);
        d_payload[i][CH_NORMAL] = dnb.x;
        d_payload[i][CH_NORMAL + 1] = dnb.y;
        d_payload[i][CH_NORMAL + 2] = dnb.z;
    }

    // compositing → per-Gaussian adjoints
    let mut sg = vec![SplatGrad::<T>::default(); trace.sorted.len()];
    let cam = &scene.camera;
    for i in 0..n_px {
        let list = &trace.blends[i];
        if list.is_empty() {
            continue;
        }
        let (x, y) = (i % buf.width, i / buf.width);
        let (fx, fy) = (T::from_usize(x) + T::half(), T::from_usize(y) + T::half());
        let mut ts = Vec::with_capacity(list.len());
        let mut t = one;
        for b in list {
            ts.push(t);
            t *= one - b.alpha;
        }
        let t_final = t;
        let dp = &d_payload[i];
        let mut suffix = zero;
        for (n, b) in list.iter().enumerate().rev() {
            let g = &trace.sorted[b.sorted as usize];
            let s = &mut sg[b.sorted as usize];
            let w = b.alpha * ts[n];
            let mut dot = zero;
            for c in 0..PAYLOAD {
                s.payload[c] += dp[c] * w;
                dot += dp[c] * g.payload[c];
            }
            let inv = one / (one - b.alpha);
            let d_a = ts[n] * dot - suffix * inv + d_alpha[i] * t_final * inv;
            suffix += dot * w;
            if b.clamped {
                continue;
            }
            // α = o·exp(−q/2)
            let dq = -T::half() * b.alpha * d_a;
            let dx = fx - g.mean2d[0];
            let dy = fy - g.mean2d[1];
            s.conic[0] += dq * dx * dx;
            s.conic[1] += dq * T::two() * dx * dy;
            s.conic[2] += dq * dy * dy;
            let (ca, cb, cc) = (g.conic.a, g.conic.b, g.conic.c);
            s.mean2d[0] -= dq * T::two() * (ca * dx + cb * dy);
            s.mean2d[1] -= dq * T::two() * (cb * dx + cc * dy);
        }
    }

    // per-Gaussian → texel adjoints
    let res = trace.geom.res();
    let mut d_pos = vec![Vec3::zero(); res * res];
    let mut d_nrm = vec![Vec3::zero(); res * res];
    let n_face = scene.n_face();
    for (k, g) in trace.sorted.iter().enumerate() {
        let idx = g.index as usize;
        if idx >= n_face {
            continue;
        }
        let s = &sg[k];
        let splat = trace.cloud.get(idx);
        let Some(pt) = projection_terms(&splat, cam, &scene.raster) else { continue };
        let t = pt.cam_point;
        let [ra, rb] = pt.jw;
        let sigma = pt.sigma;

        // conic = cov⁻¹: dCov = −M·G·M with G the symmetric adjoint
        let m = [[g.conic.a, g.conic.b], [g.conic.b, g.conic.c]];
        let gm = [[s.conic[0], s.conic[1] * T::half()], [s.conic[1] * T::half(), s.conic[2]]];
        let mut dcov = [[zero; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                let mut acc = zero;
                for u in 0..2 {
                    for v in 0..2 {
                        acc += m[r][u] * gm[u][v] * m[v][c];
                    }
                }
                dcov[r][c] = -acc;
            }
        }
        // cov = [a·Σa, a·Σb; b·Σa, b·Σb] (+ dilation)
        let sa = sigma.mul_vec(ra);
        let sb = sigma.mul_vec(rb);
        let d_off = dcov[0][1] + dcov[1][0];
        let d_ra = sa * (T::two() * dcov[0][0]) + sb * d_off;
        let d_rb = sb * (T::two() * dcov[1][1]) + sa * d_off;
        let outer = |u: Vec3<T>, v: Vec3<T>| Mat3::from_rows(v * u.x, v * u.y, v * u.z);
        let d_sigma = outer(ra, ra)
            .scale(dcov[0][0])
            .add(&outer(rb, rb).scale(dcov[1][1]))
            .add(&outer(ra, rb).add(&outer(rb, ra)).scale(d_off * T::half()));

        // J·W rows and the pinhole mean as functions of the camera-space point
        let w = &cam.rotation;
        let (w0, w1, w2) = (w.row(0), w.row(1), w.row(2));
        let iz = one / t.z;
        let iz2 = iz * iz;
        let mut dt = Vec3::zero();
        dt.x += d_ra.dot(w2) * (-cam.fx * iz2);
        dt.y += d_rb.dot(w2) * (-cam.fy * iz2);
        dt.z += d_ra.dot(w0 * (-cam.fx * iz2) + w2 * (T::two() * cam.fx * t.x * iz2 * iz));
        dt.z += d_rb.dot(w1 * (-cam.fy * iz2) + w2 * (T::two() * cam.fy * t.y * iz2 * iz));
        dt.x += s.mean2d[0] * cam.fx * iz;
        dt.z -= s.mean2d[0] * cam.fx * t.x * iz2;
        dt.y += s.mean2d[1] * cam.fy * iz;
        dt.z -= s.mean2d[1] * cam.fy * t.y * iz2;
        let dist = t.norm();
        if dist > zero {
            dt += t * (s.payload[CH_DEPTH] / dist);
        }
        let d_mu = w.transpose().mul_vec(dt);

        // Σ = R·S²·Rᵀ with symmetric adjoint
        let r = splat.rotation.to_mat();
        let s2 = splat.scale.mul_elem(splat.scale);
        let d_r = d_sigma.mul_mat(&r).mul_mat(&Mat3::diag(s2)).scale(T::two());
        let rtgr = r.transpose().mul_mat(&d_sigma).mul_mat(&r);
        grads.disk_scale[0] += T::two() * splat.scale.x * rtgr.m[0][0];
        grads.disk_scale[1] += T::two() * splat.scale.y * rtgr.m[1][1];
        let dq = splat.rotation.to_mat_backward(&d_r);

        // n = normalize(Σ w·N); q = quat_from_normal(n); payload normal = n
        let mut dn = quat_from_normal_backward(splat.normal, dq);
        dn += Vec3::new(s.payload[CH_NORMAL], s.payload[CH_NORMAL + 1], s.payload[CH_NORMAL + 2]);
        let [u, v] = scene.face_uv[idx];
        let fp: Footprint<T> = footprint(res, u, v);
        let n_raw = fp.apply(&trace.geom.fine_normal.data);
        let dn_raw = normalize_backward(n_raw, dn);
        let d_col = Vec3::new(s.payload[CH_ALBEDO], s.payload[CH_ALBEDO + 1], s.payload[CH_ALBEDO + 2]);
        for c in 0..4 {
            let wgt = fp.w[c];
            if wgt == zero {
                continue;
            }
            let t_idx = fp.idx[c];
            d_pos[t_idx] += d_mu * wgt;
            d_nrm[t_idx] += dn_raw * wgt;
            grads.albedo.data[t_idx] += d_col * wgt;
        }
    }

    // fine normals → fine positions → bump
    for (k, src) in trace.sources.iter().enumerate() {
        if let NormalSource::Cross { du, dv, cross, sign } = *src {
            let dn = d_nrm[k];
            if dn == Vec3::zero() {
                continue;
            }
            let p = &trace.geom.fine_pos.data;
            let a = (p[du.plus] - p[du.minus]) * du.scale;
            let b = (p[dv.plus] - p[dv.minus]) * dv.scale;
            let dc = normalize_backward(cross, dn * sign);
            let da = b.cross(dc);
            let db = dc.cross(a);
            d_pos[du.plus] += da * du.scale;
            d_pos[du.minus] -= da * du.scale;
            d_pos[dv.plus] += db * dv.scale;
            d_pos[dv.minus] -= db * dv.scale;
        }
    }
    for k in 0..res * res {
        if trace.geom.valid.data[k] {
            grads.bump.data[k] = d_pos[k].dot(trace.geom.coarse_normal.data[k]);
        }
    }
    Ok(grads)
}

/// Groups of the face block, for masks in tests and tooling.
pub fn face_groups<T: Real>(trace: &Trace<T>, n_face: usize) -> Vec<Group> {
    trace.cloud.groups[..n_face].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splatter::rasterize_projected;

    #[test]
    fn blend_adjoint_two_layers() {
        // C = p1·a1 + p2·a2·(1−a1); check ∂C/∂a1 = p1 − p2·a2
        let (a1, a2, p1, p2) = (0.3f64, 0.6, 0.8, 0.25);
        let ts = [1.0, 1.0 - a1];
        let suffix = p2 * a2 * ts[1];
        let d_a1 = ts[0] * p1 - suffix / (1.0 - a1);
        assert!((d_a1 - (p1 - p2 * a2)).abs() < 1e-15);
    }

    #[test]
    fn traced_compositor_matches_tiled() {
        use crate::gaussgen::Splat;
        use crate::math::Quat;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut cloud = GaussianCloud::new();
        for _ in 0..300 {
            cloud.push(Splat {
                position: Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(0.5..1.0)),
                normal: Vec3::unit_z(),
                color: Vec3::new(rng.random(), rng.random(), rng.random()),
                scale: Vec3::new(rng.random_range(0.002..0.02), rng.random_range(0.002..0.02), 1e-4),
                rotation: Quat::new(rng.random(), rng.random(), rng.random(), rng.random()).normalized().unwrap(),
                opacity: rng.random_range(0.2..1.0),
                group: Group::Face,
            });
        }
        let cam = Camera::look_at(Vec3::zero(), Vec3::unit_z(), Vec3::new(0.0, -1.0, 0.0), 80.0, 48, 40).unwrap();
        let cfg = RasterConfig::default();
        let sorted = project_cloud(&cloud, &cam, &cfg);
        let (traced, _) = composite_traced(&sorted, &cam, &cfg);
        assert_eq!(traced, rasterize_projected(&sorted, &cam, &cfg));
    }
}
