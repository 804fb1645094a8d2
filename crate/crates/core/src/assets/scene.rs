//! Scene tracks (JSON) and render settings (TOML).
//!
//! ```json
//! { "width": 512, "height": 512,
//!   "frames": [ { "camera": { "fx": 900, "fy": 900, "cx": 256, "cy": 256,
//!                             "rotation": [[1,0,0],[0,1,0],[0,0,1]],
//!                             "translation": [0,0,0.6] },
//!                 "params": { "identity": [..], "expression": [..], "jaw": 0.1,
//!                             "eyes": [[0,0],[0,0]] },
//!                 "lighting": [27 values] } ] }
//! ```
//!
//! `camera` is required per frame. Omitted `params` fields and `lighting`
//! fall back to the avatar defaults. Image size comes from the camera's
//! optional `width`/`height`, then the scene's, then `2·cx × 2·cy`. Frames
//! are numbered from 0 in diagnostics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::binio;
use crate::error::{Error, Result};
use crate::headmodel::HeadParams;
use crate::math::{Mat3, Vec3};
use crate::pipeline::{orbit_camera, FrameSpec, RenderSettings};
use crate::real::Real;
use crate::shading::ShLighting;
use crate::splatter::Camera;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraEntry {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jaw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eyes: Option<[[f64; 2]; 2]>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    #[serde(default)]
    pub camera: Option<CameraEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ParamsEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lighting: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    pub frames: Vec<FrameEntry>,
}

impl CameraEntry {
    pub fn from_camera<T: Real>(c: &Camera<T>) -> Self {
        let f = |v: T| v.to_f64_lossy();
        let r = &c.rotation;
        Self {
            fx: f(c.fx),
            fy: f(c.fy),
            cx: f(c.cx),
            cy: f(c.cy),
            rotation: [0, 1, 2].map(|i| r.row(i).to_array().map(f)),
            translation: c.translation.to_array().map(f),
            width: Some(c.width),
            height: Some(c.height),
        }
    }
}

impl SceneFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::Schema(format!("line {}, column {}: {e}", e.line(), e.column()))
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = binio::read_file(path)?;
        let text = std::str::from_utf8(&bytes).map_err(|_| Error::Schema(format!("{}: not UTF-8", path.display())))?;
        Self::parse(text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        binio::write_file(path.as_ref(), self.to_json().as_bytes())
    }

    pub fn from_specs<T: Real>(specs: &[FrameSpec<T>]) -> Self {
        let f = |v: &T| v.to_f64_lossy();
        Self {
            width: None,
            height: None,
            frames: specs
                .iter()
                .map(|s| FrameEntry {
                    camera: Some(CameraEntry::from_camera(&s.camera)),
                    params: Some(ParamsEntry {
                        identity: Some(s.params.identity.iter().map(f).collect()),
                        expression: Some(s.params.expression.iter().map(f).collect()),
                        jaw: Some(f(&s.params.jaw)),
                        eyes: Some(s.params.eyes.map(|e| e.map(|x| f(&x)))),
                    }),
                    lighting: Some(s.lighting.to_flat().iter().map(f).collect()),
                })
                .collect(),
        }
    }

    /// Validates every frame and fills omitted fields from the defaults.
    pub fn resolve<T: Real>(&self, params: &HeadParams<T>, lighting: &ShLighting<T>) -> Result<Vec<FrameSpec<T>>> {
        if self.frames.is_empty() {
            return Err(Error::Schema("scene has no frames".into()));
        }
        self.frames
            .iter()
            .enumerate()
            .map(|(k, fr)| self.resolve_frame(k, fr, params, lighting))
            .collect()
    }

    fn resolve_frame<T: Real>(
        &self,
        k: usize,
        fr: &FrameEntry,
        defaults: &HeadParams<T>,
        light: &ShLighting<T>,
    ) -> Result<FrameSpec<T>> {
        let err = |m: String| Error::Schema(format!("frame {k}: {m}"));
        let c = fr.camera.as_ref().ok_or_else(|| err("camera required".into()))?;
        let lit = |v: f64| T::lit(v);
        let width = c.width.or(self.width).unwrap_or((2.0 * c.cx).round().max(0.0) as usize);
        let height = c.height.or(self.height).unwrap_or((2.0 * c.cy).round().max(0.0) as usize);
        let rows = c.rotation.map(|r| Vec3::new(lit(r[0]), lit(r[1]), lit(r[2])));
        let camera = Camera {
            fx: lit(c.fx),
            fy: lit(c.fy),
            cx: lit(c.cx),
            cy: lit(c.cy),
            width,
            height,
            rotation: Mat3::from_rows(rows[0], rows[1], rows[2]),
            translation: Vec3::lit(c.translation[0], c.translation[1], c.translation[2]),
        };
        camera.validate().map_err(|e| err(format!("camera: {e}")))?;
        let mut params = defaults.clone();
        if let Some(p) = &fr.params {
            let fill = |dst: &mut Vec<T>, src: &Option<Vec<f64>>, name: &str| -> Result<()> {
                if let Some(v) = src {
                    if v.len() != dst.len() {
                        return Err(err(format!("params.{name} has {} values, expected {}", v.len(), dst.len())));
                    }
                    *dst = v.iter().map(|x| lit(*x)).collect();
                }
                Ok(())
            };
            fill(&mut params.identity, &p.identity, "identity")?;
            fill(&mut params.expression, &p.expression, "expression")?;
            if let Some(j) = p.jaw {
                params.jaw = lit(j);
            }
            if let Some(e) = p.eyes {
                params.eyes = e.map(|a| a.map(lit));
            }
        }
        let lighting = match &fr.lighting {
            Some(v) => {
                let v: Vec<T> = v.iter().map(|x| lit(*x)).collect();
                ShLighting::from_flat(&v).map_err(|e| err(format!("lighting: {e}")))?
            }
            None => *light,
        };
        Ok(FrameSpec {
            camera,
            params,
            lighting,
        })
    }
}

/// `n` cameras on a horizontal arc from `yaw_from` to `yaw_to` degrees, all
/// aimed at `center`.
pub fn yaw_sweep<T: Real>(
    center: Vec3<T>,
    distance: T,
    n: usize,
    yaw_from: f64,
    yaw_to: f64,
    width: usize,
    height: usize,
) -> Result<Vec<Camera<T>>> {
    (0..n)
        .map(|k| {
            let t = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.5 };
            let yaw = (yaw_from + (yaw_to - yaw_from) * t).to_radians();
            orbit_camera(center, T::lit(yaw), distance, width, height)
        })
        .collect()
}

/// Parses render settings from TOML text.
pub fn settings_from_toml(text: &str) -> Result<RenderSettings> {
    let s: RenderSettings = toml::from_str(text).map_err(|e| Error::Schema(format!("config: {e}")))?;
    s.validate()?;
    Ok(s)
}

pub fn settings_to_toml(s: &RenderSettings) -> String {
    toml::to_string_pretty(s).expect("settings serialize")
}

pub fn load_settings(path: impl AsRef<Path>) -> Result<RenderSettings> {
    let path = path.as_ref();
    let bytes = binio::read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::Schema(format!("{}: not UTF-8", path.display())))?;
    settings_from_toml(text).map_err(|e| match e {
        Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
        other => other,
    })
}
