//! Gaussian cloud export in the common splatting PLY layout.
//!
//! Binary little-endian, one `vertex` element with `x y z nx ny nz f_dc_0..2
//! opacity scale_0..2 rot_0..3` as `float` and `group` as `uchar`. Colors are
//! stored as zeroth-order SH coefficients `(c − 0.5)/SH_C0`, scales as natural
//! logs, opacity as a logit. A `comment groups eye=.. face=.. hair=..` line
//! records the group counts.

use std::path::Path;

use super::binio;
use crate::error::{Error, Result};
use crate::gaussgen::{GaussianCloud, Group, Splat};
use crate::math::{Quat, Vec3};
use crate::real::{logit, sigmoid};

pub const SH_C0: f32 = 0.282_095;

const FLOAT_PROPS: [&str; 17] = [
    "x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
];

/// Opacity is clamped away from 0 and 1 so the logit stays finite.
const OPACITY_EPS: f32 = 1e-6;

pub fn ply_bytes(cloud: &GaussianCloud<f32>) -> Vec<u8> {
    let [eye, face, hair] = cloud.group_counts();
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("comment groups eye={eye} face={face} hair={hair}\n"));
    header.push_str(&format!("element vertex {}\n", cloud.len()));
    for p in FLOAT_PROPS {
        header.push_str(&format!("property float {p}\n"));
    }
    header.push_str("property uchar group\nend_header\n");
    let mut w = binio::Writer::new();
    w.bytes(header.as_bytes());
    for i in 0..cloud.len() {
        let s = cloud.get(i);
        w.f32s(s.position.to_array());
        w.f32s(s.normal.to_array());
        w.f32s(s.color.to_array().map(|c| (c - 0.5) / SH_C0));
        w.f32(logit(s.opacity.clamp(OPACITY_EPS, 1.0 - OPACITY_EPS)));
        w.f32s(s.scale.to_array().map(f32::ln));
        w.f32s(s.rotation.to_array());
        w.u8(s.group as u8);
    }
    w.into_inner()
}

pub fn export_ply(cloud: &GaussianCloud<f32>, path: impl AsRef<Path>) -> Result<()> {
    binio::write_file(path.as_ref(), &ply_bytes(cloud))
}

#[derive(Clone, Copy)]
enum Kind {
    F32,
    F64,
    U8,
    I32,
    U32,
}

impl Kind {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "float" | "float32" => Kind::F32,
            "double" | "float64" => Kind::F64,
            "uchar" | "uint8" => Kind::U8,
            "int" | "int32" => Kind::I32,
            "uint" | "uint32" => Kind::U32,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Kind::U8 => 1,
            Kind::F64 => 8,
            _ => 4,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Kind::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Kind::F64 => f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]),
            Kind::U8 => b[0] as f64,
            Kind::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Kind::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
        }
    }
}

/// Reads a binary little-endian splat PLY back into a cloud, inverting the
/// stored transforms. Property order comes from the header; a missing
/// `group` property reads as face.
pub fn ply_from_bytes(bytes: &[u8]) -> Result<GaussianCloud<f32>> {
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::Format("ply: no end_header".into()))?
        + END.len();
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::Format("ply: header is not UTF-8".into()))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(Error::Format("ply: missing magic".into()));
    }
    let mut count = None;
    let mut props: Vec<(String, Kind)> = Vec::new();
    let mut in_vertex = false;
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", fmt, _] if *fmt != "binary_little_endian" => {
                return Err(Error::Format(format!("ply: unsupported format {fmt}")));
            }
            ["element", name, n] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    count = Some(n.parse::<usize>().map_err(|_| Error::Format(format!("ply: bad count {n}")))?);
                } else {
                    return Err(Error::Format(format!("ply: unexpected element {name}")));
                }
            }
            ["property", ty, name] if in_vertex => {
                let kind = Kind::parse(ty).ok_or_else(|| Error::Format(format!("ply: unsupported type {ty}")))?;
                props.push((name.to_string(), kind));
            }
            ["property", "list", ..] => return Err(Error::Format("ply: list properties unsupported".into())),
            _ => {}
        }
    }
    let n = count.ok_or_else(|| Error::Format("ply: no vertex element".into()))?;
    let stride: usize = props.iter().map(|p| p.1.size()).sum();
    let find = |name: &str| -> Option<(usize, Kind)> {
        let mut off = 0;
        for (p, k) in &props {
            if p == name {
                return Some((off, *k));
            }
            off += k.size();
        }
        None
    };
    let cols: Vec<(usize, Kind)> = FLOAT_PROPS
        .iter()
        .map(|p| find(p).ok_or_else(|| Error::Format(format!("ply: missing property {p}"))))
        .collect::<Result<_>>()?;
    let group_col = find("group");
    let body = &bytes[end..];
    if body.len() < n * stride {
        return Err(Error::Format(format!("ply: body holds {} bytes, need {}", body.len(), n * stride)));
    }
    let mut cloud = GaussianCloud::with_capacity(n);
    for i in 0..n {
        let row = &body[i * stride..(i + 1) * stride];
        let v: Vec<f32> = cols.iter().map(|&(o, k)| k.read(&row[o..]) as f32).collect();
        let group = match group_col {
            Some((o, k)) => {
                let g = k.read(&row[o..]) as u8;
                Group::from_u8(g).ok_or_else(|| Error::Format(format!("ply: vertex {i} has group {g}")))?
            }
            None => Group::Face,
        };
        cloud.push(Splat {
            position: Vec3::new(v[0], v[1], v[2]),
            normal: Vec3::new(v[3], v[4], v[5]),
            color: Vec3::new(v[6], v[7], v[8]).map(|f| f * SH_C0 + 0.5),
            opacity: sigmoid(v[9]),
            scale: Vec3::new(v[10], v[11], v[12]).map(f32::exp),
            rotation: Quat::from_array([v[13], v[14], v[15], v[16]]),
            group,
        });
    }
    Ok(cloud)
}

pub fn import_ply(path: impl AsRef<Path>) -> Result<GaussianCloud<f32>> {
    ply_from_bytes(&binio::read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud() -> GaussianCloud<f32> {
        let mut c = GaussianCloud::new();
        for (k, g) in [Group::Eye, Group::Face, Group::Hair, Group::Face].into_iter().enumerate() {
            let t = k as f32;
            c.push(Splat {
                position: Vec3::new(0.1 * t, -0.2, 0.3),
                normal: Vec3::new(0.0, 0.6, 0.8),
                color: Vec3::new(0.5, 0.1 * t, 0.9),
                scale: Vec3::new(0.002, 0.003, 1e-5),
                rotation: Quat::new(0.8, 0.0, 0.6, 0.0),
                opacity: 0.25 + 0.2 * t,
                group: g,
            });
        }
        c
    }

    #[test]
    fn header_counts_and_midpoint_color() {
        let b = ply_bytes(&cloud());
        let text = String::from_utf8_lossy(&b);
        assert!(text.contains("element vertex 4\n"));
        assert!(text.contains("comment groups eye=1 face=2 hair=1\n"));
        let end = text.find("end_header\n").unwrap() + 11;
        let f_dc_0 = f32::from_le_bytes(b[end + 24..end + 28].try_into().unwrap());
        assert_eq!(f_dc_0, 0.0);
    }

    #[test]
    fn roundtrip_within_tolerance() {
        let c = cloud();
        let back = ply_from_bytes(&ply_bytes(&c)).unwrap();
        assert_eq!(back.len(), c.len());
        assert_eq!(back.groups, c.groups);
        for i in 0..c.len() {
            let (a, b) = (c.get(i), back.get(i));
            assert!((a.position - b.position).max_abs() < 1e-5);
            assert!((a.color - b.color).max_abs() < 1e-5);
            assert!((a.scale - b.scale).max_abs() < 1e-5);
            assert!((a.opacity - b.opacity).abs() < 1e-5);
        }
    }
}
