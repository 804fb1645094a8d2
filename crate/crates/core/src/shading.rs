//! Screen-space shading: band-2 spherical-harmonic irradiance, a
//! depth/normal occlusion estimate, and background compositing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::real::Real;
use crate::splatter::{Camera, RenderBuffers};

/// Cosine-lobe convolution constants per band.
pub const A_HAT: [f64; 3] = [std::f64::consts::PI, 2.0 * std::f64::consts::PI / 3.0, std::f64::consts::PI / 4.0];

/// Real SH basis for bands 0..=2 in `(l, m)` order:
/// `Y00, Y1-1, Y10, Y11, Y2-2, Y2-1, Y20, Y21, Y22`.
pub fn sh_basis<T: Real>(n: Vec3<T>) -> [T; 9] {
    let c = |v: f64| T::lit(v);
    let (x, y, z) = (n.x, n.y, n.z);
    [
        c(0.282_094_791_773_878_1),
        c(0.488_602_511_902_919_9) * y,
        c(0.488_602_511_902_919_9) * z,
        c(0.488_602_511_902_919_9) * x,
        c(1.092_548_430_592_079_2) * x * y,
        c(1.092_548_430_592_079_2) * y * z,
        c(0.315_391_565_252_520_1) * (c(3.0) * z * z - T::one()),
        c(1.092_548_430_592_079_2) * x * z,
        c(0.546_274_215_296_039_6) * (x * x - y * y),
    ]
}

/// `∂Y_k/∂n` for each basis function.
pub fn sh_basis_grad<T: Real>(n: Vec3<T>) -> [Vec3<T>; 9] {
    let c = |v: f64| T::lit(v);
    let (x, y, z) = (n.x, n.y, n.z);
    let z0 = T::zero();
    let b1 = c(0.488_602_511_902_919_9);
    let b2 = c(1.092_548_430_592_079_2);
    let b20 = c(0.315_391_565_252_520_1);
    let b22 = c(0.546_274_215_296_039_6);
    [
        Vec3::zero(),
        Vec3::new(z0, b1, z0),
        Vec3::new(z0, z0, b1),
        Vec3::new(b1, z0, z0),
        Vec3::new(b2 * y, b2 * x, z0),
        Vec3::new(z0, b2 * z, b2 * y),
        Vec3::new(z0, z0, b20 * c(6.0) * z),
        Vec3::new(b2 * z, z0, b2 * x),
        Vec3::new(b22 * c(2.0) * x, -b22 * c(2.0) * y, z0),
    ]
}

/// Band of basis index `k`.
pub fn sh_band(k: usize) -> usize {
    match k {
        0 => 0,
        1..=3 => 1,
        _ => 2,
    }
}

/// Nine coefficients per color channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShLighting<T> {
    pub coeffs: [[T; 9]; 3],
}

impl<T: Real> ShLighting<T> {
    pub fn zero() -> Self {
        Self {
            coeffs: [[T::zero(); 9]; 3],
        }
    }

    /// Uniform white light with irradiance `level` everywhere.
    pub fn ambient(level: T) -> Self {
        let dc = level / (T::lit(A_HAT[0]) * T::lit(0.282_094_791_773_878_1));
        let mut l = Self::zero();
        for ch in &mut l.coeffs {
            ch[0] = dc;
        }
        l
    }

    /// Flat 27-value layout: channel-major, nine per channel.
    pub fn from_flat(v: &[T]) -> Result<Self> {
        if v.len() != 27 {
            return Err(Error::Dimension {
                what: "SH lighting coefficients",
                expected: 27,
                got: v.len(),
            });
        }
        let mut l = Self::zero();
        for (c, ch) in l.coeffs.iter_mut().enumerate() {
            ch.copy_from_slice(&v[c * 9..c * 9 + 9]);
        }
        l.validate()?;
        Ok(l)
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.coeffs.iter().flatten().copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.coeffs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("SH lighting".into()));
        }
        if self.coeffs.iter().any(|ch| ch[0] < T::zero()) {
            log::warn!("SH lighting has a negative DC coefficient");
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ShLighting<U> {
        ShLighting {
            coeffs: self.coeffs.map(|ch| ch.map(|v| U::lit(v.to_f64_lossy()))),
        }
    }
}

/// Irradiance before the clamp at zero.
pub fn sh_irradiance_unclamped<T: Real>(light: &ShLighting<T>, n: Vec3<T>) -> Vec3<T> {
    let y = sh_basis(n);
    let mut e = [T::zero(); 3];
    for (c, ch) in light.coeffs.iter().enumerate() {
        for k in 0..9 {
            e[c] += T::lit(A_HAT[sh_band(k)]) * ch[k] * y[k];
        }
    }
    Vec3::from_array(e)
}

/// Irradiance `E(n) = Σ Â_l L_lm Y_lm(n)` per channel, clamped at zero.
pub fn sh_irradiance<T: Real>(light: &ShLighting<T>, n: Vec3<T>) -> Vec3<T> {
    sh_irradiance_unclamped(light, n).map(|v| v.max(T::zero()))
}

/// Occlusion estimator tunables. The sampling radius scales with image
/// width relative to `reference_width`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcclusionConfig {
    pub samples: usize,
    pub radius_px: f64,
    pub reference_width: usize,
    /// Meters above the tangent plane before a neighbor occludes.
    pub bias: f64,
    /// Pixels with alpha at or below this count as background.
    pub alpha_threshold: f64,
    pub enabled: bool,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            samples: 8,
            radius_px: 8.0,
            reference_width: 512,
            bias: 0.01,
            alpha_threshold: 0.5,
            enabled: true,
        }
    }
}

impl OcclusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || !(self.radius_px > 0.0) || self.reference_width == 0 || !(self.bias >= 0.0) {
            return Err(Error::invalid("occlusion config", format!("{self:?}")));
        }
        Ok(())
    }
}

/// World-space surface point behind pixel `i`, if it is foreground.
pub fn unproject<T: Real>(buf: &RenderBuffers<T>, cam: &Camera<T>, i: usize, alpha_threshold: T) -> Option<Vec3<T>> {
    if !(buf.alpha[i] > alpha_threshold) {
        return None;
    }
    let d = buf.surface_distance(i)?;
    let (x, y) = (i % buf.width, i / buf.width);
    let ray = cam.ray(T::from_usize(x) + T::half(), T::from_usize(y) + T::half());
    Some(cam.center() + ray * d)
}

/// Raw (unfiltered) occlusion factor: `1 − occluding fraction` over the
/// sample ring, or `None` on background pixels.
pub fn occlusion_raw<T: Real>(buf: &RenderBuffers<T>, cam: &Camera<T>, cfg: &OcclusionConfig, x: usize, y: usize) -> Option<T> {
    let (w, h) = (buf.width, buf.height);
    let i = y * w + x;
    let thr = T::lit(cfg.alpha_threshold);
    let p = unproject(buf, cam, i, thr)?;
    let n = buf.normal(i).normalized()?;
    let r = cfg.radius_px * w as f64 / cfg.reference_width as f64;
    let bias = T::lit(cfg.bias);
    let mut hits = 0usize;
    for k in 0..cfg.samples {
        let a = std::f64::consts::TAU * k as f64 / cfg.samples as f64;
        let qx = (x as f64 + r * a.cos()).round();
        let qy = (y as f64 + r * a.sin()).round();
        if qx < 0.0 || qy < 0.0 || qx >= w as f64 || qy >= h as f64 {
            continue;
        }
        let j = qy as usize * w + qx as usize;
        if let Some(q) = unproject(buf, cam, j, thr) {
            if (q - p).dot(n) > bias {
                hits += 1;
            }
        }
    }
    Some(T::one() - T::from_usize(hits) / T::from_usize(cfg.samples))
}

/// Per-pixel occlusion factors in `[0,1]`: raw ring estimate, 3×3 box
/// filtered, background forced to 1.
pub fn occlusion_map<T: Real>(buf: &RenderBuffers<T>, cam: &Camera<T>, cfg: &OcclusionConfig) -> Vec<T> {
    let (w, h) = (buf.width, buf.height);
    if !cfg.enabled {
        return vec![T::one(); w * h];
    }
    let raw: Vec<Option<T>> = (0..w * h)
        .into_par_iter()
        .map(|i| occlusion_raw(buf, cam, cfg, i % w, i / w))
        .collect();
    (0..w * h)
        .into_par_iter()
        .map(|i| {
            if raw[i].is_none() {
                return T::one();
            }
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            let mut sum = T::zero();
            let mut cnt = 0usize;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    sum += raw[ny as usize * w + nx as usize].unwrap_or(T::one());
                    cnt += 1;
                }
            }
            (sum / T::from_usize(cnt)).max(T::zero()).min(T::one())
        })
        .collect()
}

/// Constant color or a full-resolution plate.
#[derive(Clone, Debug, PartialEq)]
pub enum Background<T> {
    Constant(Vec3<T>),
    Plate(Vec<Vec3<T>>),
}

impl<T: Real> Background<T> {
    pub fn at(&self, i: usize) -> Vec3<T> {
        match self {
            Background::Constant(c) => *c,
            Background::Plate(p) => p[i],
        }
    }

    pub fn validate(&self, pixels: usize) -> Result<()> {
        let ok = |c: &Vec3<T>| [c.x, c.y, c.z].iter().all(|v| *v >= T::zero() && *v <= T::one());
        match self {
            Background::Constant(c) if !ok(c) => Err(Error::invalid("background", "color outside [0,1]")),
            Background::Plate(p) if p.len() != pixels => Err(Error::Dimension {
                what: "background plate",
                expected: pixels,
                got: p.len(),
            }),
            Background::Plate(p) if !p.iter().all(ok) => Err(Error::invalid("background", "plate outside [0,1]")),
            _ => Ok(()),
        }
    }
}

/// RGB image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Vec3<T>>,
}

impl<T: Real> Image<T> {
    /// 8-bit RGB, rounding to nearest.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .flat_map(|p| p.to_array().map(|v| (v.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect()
    }
}

/// Foreground radiance before compositing, given the premultiplied albedo
/// buffer: `albedo ⊙ E(n̂) ⊙ occlusion`.
pub fn foreground<T: Real>(buf: &RenderBuffers<T>, light: &ShLighting<T>, occ: T, i: usize) -> Vec3<T> {
    match buf.normal(i).normalized() {
        Some(n) => buf.albedo(i).mul_elem(sh_irradiance(light, n)) * occ,
        None => Vec3::zero(),
    }
}

/// Final image before clamping. The albedo buffer already carries coverage,
/// so the composite is `albedo_buf ⊙ E ⊙ occ + bg·(1 − alpha)`.
pub fn shade_unclamped<T: Real>(buf: &RenderBuffers<T>, light: &ShLighting<T>, bg: &Background<T>, occ: &[T]) -> Result<Image<T>> {
    let n = buf.len();
    if occ.len() != n {
        return Err(Error::Dimension {
            what: "occlusion map",
            expected: n,
            got: occ.len(),
        });
    }
    if let Background::Plate(p) = bg {
        if p.len() != n {
            return Err(Error::Dimension {
                what: "background plate",
                expected: n,
                got: p.len(),
            });
        }
    }
    let pixels = (0..n)
        .into_par_iter()
        .map(|i| foreground(buf, light, occ[i], i) + bg.at(i) * (T::one() - buf.alpha[i]))
        .collect();
    Ok(Image {
        width: buf.width,
        height: buf.height,
        pixels,
    })
}

/// Shades buffers with a precomputed occlusion map; output clamped to `[0,1]`.
pub fn shade_with_occlusion<T: Real>(buf: &RenderBuffers<T>, light: &ShLighting<T>, bg: &Background<T>, occ: &[T]) -> Result<Image<T>> {
    let mut img = shade_unclamped(buf, light, bg, occ)?;
    for p in &mut img.pixels {
        *p = p.map(|v| v.max(T::zero()).min(T::one()));
    }
    Ok(img)
}

/// Full shading: occlusion from the buffers, SH irradiance, background.
pub fn shade<T: Real>(
    buf: &RenderBuffers<T>,
    light: &ShLighting<T>,
    bg: &Background<T>,
    cam: &Camera<T>,
    occ_cfg: &OcclusionConfig,
) -> Result<Image<T>> {
    if cam.width != buf.width || cam.height != buf.height {
        return Err(Error::Dimension {
            what: "buffer resolution",
            expected: cam.width * cam.height,
            got: buf.len(),
        });
    }
    let occ = occlusion_map(buf, cam, occ_cfg);
    shade_with_occlusion(buf, light, bg, &occ)
}
