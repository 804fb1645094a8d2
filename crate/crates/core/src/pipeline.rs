//! The render core shared by the command line and the editor service:
//! parameters → Gaussian cloud (fresh or from the attribute cache) →
//! buffers → shaded image.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussgen::{
    animate_cached, cache_attributes, gen_face_gaussians, gen_hair_gaussians, merge_clouds, AttributeCache,
    GaussianCloud, HairDecoder, TriPlane,
};
use crate::headmodel::{pose_mesh, HeadParams, HeadRig};
use crate::math::Vec3;
use crate::real::Real;
use crate::shading::{shade, Background, Image, OcclusionConfig, ShLighting};
use crate::splatter::{rasterize, Camera, RasterConfig, RenderBuffers};
use crate::uvmaps::{apply_bump, fine_normals, TextureSet, UvMap, UvRaster};

/// Tunables read from the TOML config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    /// Face sample density relative to the texture resolution.
    pub alpha_head: f64,
    /// Disk thickness, meters. Defaults to `1e-4` of the head bounding radius.
    pub epsilon: Option<f64>,
    pub background: [f64; 3],
    pub raster: RasterConfig,
    pub occlusion: OcclusionConfig,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            alpha_head: 0.5,
            epsilon: None,
            background: [1.0, 1.0, 1.0],
            raster: RasterConfig::default(),
            occlusion: OcclusionConfig::default(),
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_head > 0.0 && self.alpha_head <= 1.0) {
            return Err(Error::invalid("alpha_head", format!("{} not in (0, 1]", self.alpha_head)));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::invalid("epsilon", format!("{e} must be positive")));
            }
        }
        if !self.background.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(Error::invalid("background", "color outside [0,1]"));
        }
        self.raster.validate()?;
        self.occlusion.validate()
    }

    pub fn background<T: Real>(&self) -> Background<T> {
        let [r, g, b] = self.background;
        Background::Constant(Vec3::lit(r, g, b))
    }
}

/// A generated cloud with the sampling metadata needed to cache it.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated<T> {
    pub cloud: GaussianCloud<T>,
    pub face_uv: Vec<[T; 2]>,
    pub hair_ids: Vec<u32>,
}

impl<T> Generated<T> {
    pub fn n_face(&self) -> usize {
        self.face_uv.len()
    }
}

/// Buffers and shaded image of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame<T> {
    pub buffers: RenderBuffers<T>,
    pub image: Image<T>,
}

/// One fully specified view: camera, pose and lighting.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSpec<T> {
    pub camera: Camera<T>,
    pub params: HeadParams<T>,
    pub lighting: ShLighting<T>,
}

/// A loaded avatar ready to render.
#[derive(Clone, Debug)]
pub struct Avatar<T> {
    pub rig: HeadRig<T>,
    pub textures: TextureSet<T>,
    pub decoder: HairDecoder<T>,
    pub triplane: TriPlane<T>,
    pub params: HeadParams<T>,
    pub lighting: ShLighting<T>,
    pub settings: RenderSettings,
    raster_uv: UvRaster<T>,
}

/// Checks that the parts of an avatar fit together.
pub fn check_consistency<T: Real>(
    rig: &HeadRig<T>,
    textures: &TextureSet<T>,
    decoder: &HairDecoder<T>,
    triplane: &TriPlane<T>,
) -> Result<()> {
    rig.validate()?;
    textures.validate()?;
    decoder.validate()?;
    triplane.validate()?;
    if rig.eye_uv_mask.res != textures.resolution() {
        return Err(Error::Consistency(format!(
            "rig.eye_uv_mask resolution {} != textures.albedo resolution {}",
            rig.eye_uv_mask.res,
            textures.resolution()
        )));
    }
    if decoder.cond_dim != rig.n_id + rig.n_exp {
        return Err(Error::Consistency(format!(
            "decoder.cond_dim {} != rig.n_id + rig.n_exp {}",
            decoder.cond_dim,
            rig.n_id + rig.n_exp
        )));
    }
    if triplane.channels != decoder.feature_dim() {
        return Err(Error::Consistency(format!(
            "triplane.channels {} != decoder.feature_dim {}",
            triplane.channels,
            decoder.feature_dim()
        )));
    }
    Ok(())
}

impl<T: Real> Avatar<T> {
    pub fn new(
        rig: HeadRig<T>,
        textures: TextureSet<T>,
        decoder: HairDecoder<T>,
        triplane: TriPlane<T>,
        params: HeadParams<T>,
        lighting: ShLighting<T>,
        settings: RenderSettings,
    ) -> Result<Self> {
        check_consistency(&rig, &textures, &decoder, &triplane)?;
        params.validate(&rig)?;
        lighting.validate()?;
        settings.validate()?;
        let raster_uv = UvRaster::build(&rig, textures.resolution());
        Ok(Self {
            rig,
            textures,
            decoder,
            triplane,
            params,
            lighting,
            settings,
            raster_uv,
        })
    }

    pub fn raster_uv(&self) -> &UvRaster<T> {
        &self.raster_uv
    }

    pub fn epsilon(&self) -> T {
        match self.settings.epsilon {
            Some(e) => T::lit(e),
            None => self.rig.bounding_radius() * T::lit(1e-4),
        }
    }

    /// Replaces the textures; the resolution must not change.
    pub fn set_textures(&mut self, textures: TextureSet<T>) -> Result<()> {
        if textures.resolution() != self.textures.resolution() {
            return Err(Error::Dimension {
                what: "texture resolution",
                expected: self.textures.resolution(),
                got: textures.resolution(),
            });
        }
        textures.validate()?;
        self.textures = textures;
        Ok(())
    }

    /// Replaces the hair model.
    pub fn set_hair(&mut self, decoder: HairDecoder<T>, triplane: TriPlane<T>) -> Result<()> {
        check_consistency(&self.rig, &self.textures, &decoder, &triplane)?;
        self.decoder = decoder;
        self.triplane = triplane;
        Ok(())
    }

    pub fn set_settings(&mut self, settings: RenderSettings) -> Result<()> {
        settings.validate()?;
        self.settings = settings;
        Ok(())
    }

    /// Face and hair clouds generated from scratch for `params`.
    pub fn generate(&self, params: &HeadParams<T>) -> Result<Generated<T>> {
        params.validate(&self.rig)?;
        let mesh = pose_mesh(&self.rig, params)?;
        let geom = fine_normals(apply_bump(self.raster_uv.interpolate(&mesh, &self.rig), &self.textures.bump));
        let face = gen_face_gaussians(&geom, &self.textures, &self.rig, self.settings.alpha_head, self.epsilon())?;
        let hair = gen_hair_gaussians(&self.decoder, &self.triplane, &params.conditioning())?;
        Ok(Generated {
            cloud: merge_clouds(&face.cloud, &hair),
            face_uv: face.uv,
            hair_ids: (0..hair.len() as u32).collect(),
        })
    }

    pub fn cache(&self, generated: &Generated<T>) -> Result<AttributeCache<T>> {
        cache_attributes(&generated.cloud, &self.rig, &generated.face_uv, &generated.hair_ids)
    }

    /// Cloud for `params` reusing every cached non-position attribute.
    pub fn animate(&self, cache: &AttributeCache<T>, params: &HeadParams<T>) -> Result<GaussianCloud<T>> {
        params.validate(&self.rig)?;
        animate_cached(cache, &self.rig, &self.raster_uv, params, &self.textures.bump, &self.decoder)
    }

    /// Rasterizes and shades a cloud.
    pub fn render_cloud(&self, cloud: &GaussianCloud<T>, camera: &Camera<T>, lighting: &ShLighting<T>) -> Result<Frame<T>> {
        camera.validate()?;
        let buffers = rasterize(cloud, camera, &self.settings.raster);
        if buffers.alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("rendered alpha".into()));
        }
        let image = shade(&buffers, lighting, &self.settings.background(), camera, &self.settings.occlusion)?;
        Ok(Frame { buffers, image })
    }

    /// Uncached render of one view.
    pub fn render(&self, spec: &FrameSpec<T>) -> Result<Frame<T>> {
        let g = self.generate(&spec.params)?;
        self.render_cloud(&g.cloud, &spec.camera, &spec.lighting)
    }

    /// Camera on a horizontal orbit around the head center, `yaw` radians
    /// from the front, with the head filling most of the frame.
    pub fn orbit_camera(&self, yaw: T, distance: T, width: usize, height: usize) -> Result<Camera<T>> {
        orbit_camera(self.rig.centroid(), yaw, distance, width, height)
    }
}

/// Camera looking at `center` from `distance` along the direction rotated
/// `yaw` radians about `+y` from `+z`, world `+y` up.
pub fn orbit_camera<T: Real>(center: Vec3<T>, yaw: T, distance: T, width: usize, height: usize) -> Result<Camera<T>> {
    let eye = center + Vec3::new(yaw.sin(), T::zero(), yaw.cos()) * distance;
    let focal = T::from_usize(width.min(height)) * T::lit(1.8) * distance / T::lit(0.6);
    Camera::look_at(eye, center, Vec3::new(T::zero(), T::one(), T::zero()), focal, width, height)
}

/// Renders a track, caching attributes from the first frame when `cached`.
/// Frames come back in track order.
pub struct TrackRenderer<'a, T> {
    avatar: &'a Avatar<T>,
    cache: Option<AttributeCache<T>>,
    cached: bool,
}

impl<'a, T: Real> TrackRenderer<'a, T> {
    pub fn new(avatar: &'a Avatar<T>, cached: bool) -> Self {
        Self {
            avatar,
            cache: None,
            cached,
        }
    }

    /// Cloud for one frame, creating the cache on the first call.
    pub fn cloud(&mut self, params: &HeadParams<T>) -> Result<GaussianCloud<T>> {
        if !self.cached {
            return Ok(self.avatar.generate(params)?.cloud);
        }
        match &self.cache {
            Some(c) => self.avatar.animate(c, params),
            None => {
                let g = self.avatar.generate(params)?;
                self.cache = Some(self.avatar.cache(&g)?);
                Ok(g.cloud)
            }
        }
    }

    pub fn cache(&self) -> Option<&AttributeCache<T>> {
        self.cache.as_ref()
    }

    pub fn render(&mut self, spec: &FrameSpec<T>) -> Result<Frame<T>> {
        let cloud = self.cloud(&spec.params)?;
        self.avatar.render_cloud(&cloud, &spec.camera, &spec.lighting)
    }
}

/// Renders every frame of a track, in parallel on the current rayon pool.
/// With `cached`, attributes come from frame 0 and later frames only move
/// positions; results are identical to a sequential [`TrackRenderer`].
pub fn render_track<T: Real>(avatar: &Avatar<T>, specs: &[FrameSpec<T>], cached: bool) -> Result<Vec<Frame<T>>> {
    let Some(first) = specs.first() else {
        return Ok(Vec::new());
    };
    if !cached {
        return specs.par_iter().map(|s| avatar.render(s)).collect();
    }
    let g = avatar.generate(&first.params)?;
    let cache = avatar.cache(&g)?;
    let head = avatar.render_cloud(&g.cloud, &first.camera, &first.lighting)?;
    let rest: Vec<Frame<T>> = specs[1..]
        .par_iter()
        .map(|s| {
            let cloud = avatar.animate(&cache, &s.params)?;
            avatar.render_cloud(&cloud, &s.camera, &s.lighting)
        })
        .collect::<Result<_>>()?;
    Ok(std::iter::once(head).chain(rest).collect())
}

/// Texel-aligned UV rectangle `[u0, v0, u1, v1]`.
pub fn validate_uv_rect(rect: [f64; 4]) -> Result<()> {
    let [u0, v0, u1, v1] = rect;
    let inside = |x: f64| (0.0..=1.0).contains(&x);
    if !(rect.iter().all(|x| inside(*x)) && u0 < u1 && v0 < v1) {
        return Err(Error::invalid(
            "uv_rect",
            format!("[{u0}, {v0}, {u1}, {v1}] must satisfy 0 <= u0 < u1 <= 1 and 0 <= v0 < v1 <= 1"),
        ));
    }
    Ok(())
}

/// Pastes an RGB patch over the albedo texels whose centers fall inside
/// `rect`, nearest-neighbor. Returns the number of texels written.
pub fn paste_albedo<T: Real>(
    albedo: &mut UvMap<Vec3<T>>,
    patch: &Image<T>,
    rect: [f64; 4],
) -> Result<usize> {
    validate_uv_rect(rect)?;
    if patch.width == 0 || patch.height == 0 || patch.pixels.len() != patch.width * patch.height {
        return Err(Error::invalid("texture patch", "empty or malformed image"));
    }
    if patch.pixels.iter().any(|p| p.to_array().iter().any(|v| !(*v >= T::zero() && *v <= T::one()))) {
        return Err(Error::invalid("texture patch", "color outside [0,1]"));
    }
    let [u0, v0, u1, v1] = rect;
    let res = albedo.res;
    let mut written = 0;
    for j in 0..res {
        let v = (j as f64 + 0.5) / res as f64;
        if v < v0 || v >= v1 {
            continue;
        }
        let y = (((v - v0) / (v1 - v0)) * patch.height as f64).floor() as usize;
        for i in 0..res {
            let u = (i as f64 + 0.5) / res as f64;
            if u < u0 || u >= u1 {
                continue;
            }
            let x = (((u - u0) / (u1 - u0)) * patch.width as f64).floor() as usize;
            albedo.set(i, j, patch.pixels[y.min(patch.height - 1) * patch.width + x.min(patch.width - 1)]);
            written += 1;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::desk::{desk_avatar, DeskOptions};

    fn small() -> Avatar<f64> {
        desk_avatar(&DeskOptions {
            subdivisions: 3,
            t_tex: 64,
            t_tri: 16,
            feature_dim: 8,
            hidden: 16,
            ..DeskOptions::default()
        })
        .unwrap()
    }

    #[test]
    fn cached_static_track_matches_uncached() {
        let av = small();
        let cam = av.orbit_camera(0.2, 0.6, 48, 48).unwrap();
        let spec = FrameSpec {
            camera: cam,
            params: av.params.clone(),
            lighting: av.lighting,
        };
        let mut cached = TrackRenderer::new(&av, true);
        let mut fresh = TrackRenderer::new(&av, false);
        for _ in 0..3 {
            assert_eq!(cached.render(&spec).unwrap(), fresh.render(&spec).unwrap());
        }
    }

    #[test]
    fn full_rect_paste_of_albedo_is_noop() {
        let av = small();
        let res = av.textures.resolution();
        let img = Image {
            width: res,
            height: res,
            pixels: av.textures.albedo.data.clone(),
        };
        let mut a = av.textures.albedo.clone();
        assert_eq!(paste_albedo(&mut a, &img, [0.0, 0.0, 1.0, 1.0]).unwrap(), res * res);
        assert_eq!(a, av.textures.albedo);
    }

    #[test]
    fn rect_outside_unit_square_is_rejected() {
        assert!(validate_uv_rect([0.5, 0.5, 1.2, 0.9]).is_err());
        assert!(validate_uv_rect([0.5, 0.5, 0.4, 0.9]).is_err());
        assert!(validate_uv_rect([0.0, 0.0, 1.0, 1.0]).is_ok());
    }

    #[test]
    fn orbit_camera_looks_at_center() {
        let c = Vec3::new(0.01, 0.02, -0.03);
        let cam = orbit_camera(c, 0.4f64, 0.6, 64, 64).unwrap();
        let p = cam.to_camera(c);
        assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12 && (p.z - 0.6).abs() < 1e-12);
    }
}
