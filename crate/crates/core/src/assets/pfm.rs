//! Portable float maps and the buffer-dump directory.
//!
//! Files are little-endian (negative scale). Rows are stored top row first,
//! so row 0 of a UV map is `v = 0` and row 0 of a buffer is the top image row.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::binio;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::splatter::RenderBuffers;
use crate::uvmaps::UvMap;

/// Float image with 1 or 3 interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FloatImage {
    pub fn to_bytes(&self) -> Vec<u8> {
        let tag = if self.channels == 3 { "PF" } else { "Pf" };
        let mut w = binio::Writer::new();
        w.bytes(format!("{tag}\n{} {}\n-1.0\n", self.width, self.height).as_bytes());
        w.f32s(self.data.iter().copied());
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("pfm: {m}"));
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
        }
        pos += 1;
        let channels = match fields[0] {
            "PF" => 3,
            "Pf" => 1,
            other => return Err(bad(&format!("unknown tag {other}"))),
        };
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(&format!("bad size {s}")));
        let (width, height) = (num(fields[1])?, num(fields[2])?);
        let scale: f64 = fields[3].parse().map_err(|_| bad("bad scale"))?;
        let n = width * height * channels;
        let body = bytes.get(pos..).unwrap_or_default();
        if body.len() != n * 4 {
            return Err(bad(&format!("body holds {} bytes, need {}", body.len(), n * 4)));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| {
                let b = [c[0], c[1], c[2], c[3]];
                if scale < 0.0 {
                    f32::from_le_bytes(b)
                } else {
                    f32::from_be_bytes(b)
                }
            })
            .collect();
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        binio::write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path.as_ref())?)
    }
}

/// Single-channel UV map (bump) as a float image.
pub fn map_to_pfm<T: Real>(map: &UvMap<T>) -> FloatImage {
    FloatImage {
        width: map.res,
        height: map.res,
        channels: 1,
        data: map.data.iter().map(|v| v.to_f32_lossy()).collect(),
    }
}

pub fn map_from_pfm<T: Real>(img: &FloatImage) -> Result<UvMap<T>> {
    if img.channels != 1 || img.width != img.height {
        return Err(Error::Format(format!(
            "expected a square single-channel map, got {}x{}x{}",
            img.width, img.height, img.channels
        )));
    }
    Ok(UvMap {
        res: img.width,
        data: img.data.iter().map(|v| T::from_f32(*v)).collect(),
    })
}

/// File names of a buffer dump, in write order.
pub const DUMP_FILES: [&str; 5] = ["mask.pfm", "depth.pfm", "normal.pfm", "albedo.pfm", "alpha.pfm"];

/// Encodes each buffer plane as a PFM file body.
pub fn dump_bytes<T: Real>(buf: &RenderBuffers<T>) -> Vec<(&'static str, Vec<u8>)> {
    buf.planes()
        .into_iter()
        .zip(DUMP_FILES)
        .map(|((_, channels, data), file)| {
            let img = FloatImage {
                width: buf.width,
                height: buf.height,
                channels,
                data: data.iter().map(|v| v.to_f32_lossy()).collect(),
            };
            (file, img.to_bytes())
        })
        .collect()
}

/// Writes the five buffer files into `dir` and returns `(file, sha256 hex)`.
pub fn dump_buffers<T: Real>(buf: &RenderBuffers<T>, dir: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut sums = Vec::with_capacity(DUMP_FILES.len());
    for (file, bytes) in dump_bytes(buf) {
        let path: PathBuf = dir.join(file);
        binio::write_file(&path, &bytes)?;
        sums.push((file.to_string(), sha256_hex(&bytes)));
    }
    Ok(sums)
}

/// Hex digests of the dump files already present in `dir`.
pub fn dump_checksums(dir: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    DUMP_FILES
        .iter()
        .map(|f| {
            let bytes = binio::read_file(&dir.as_ref().join(f))?;
            Ok((f.to_string(), sha256_hex(&bytes)))
        })
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
