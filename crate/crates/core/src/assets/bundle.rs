//! Single-file avatar bundle.
//!
//! | part      | contents                                              |
//! |-----------|-------------------------------------------------------|
//! | header    | magic `EGAVA\0`, format version, section count        |
//! | section   | 4-byte tag, `u64` payload length, payload             |
//! | trailer   | SHA-256 of every preceding byte                       |
//!
//! Sections: `RIG\0` rig file, `TEX\0` textures, `HAIR` decoder container,
//! `TRI\0` tri-plane container, `PARM` default head parameters, `LGHT`
//! default lighting. Unknown tags are skipped.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::binio::{self, Reader, Writer};
use super::hairfile::{decoder_from_bytes, decoder_to_bytes, triplane_from_bytes, triplane_to_bytes};
use crate::error::{Error, Result};
use crate::gaussgen::{HairDecoder, TriPlane};
use crate::headmodel::{HeadParams, HeadRig};
use crate::math::Vec3;
use crate::pipeline::{check_consistency, Avatar, RenderSettings};
use crate::shading::ShLighting;
use crate::uvmaps::{TextureSet, UvMap};

pub const BUNDLE_MAGIC: &[u8; 6] = b"EGAVA\0";
pub const BUNDLE_VERSION: u32 = 1;
const DIGEST: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct AvatarBundle {
    pub rig: HeadRig<f32>,
    pub textures: TextureSet<f32>,
    pub decoder: HairDecoder<f32>,
    pub triplane: TriPlane<f32>,
    pub params: HeadParams<f32>,
    pub lighting: ShLighting<f32>,
}

impl AvatarBundle {
    pub fn from_avatar(av: &Avatar<f32>) -> Self {
        Self {
            rig: av.rig.clone(),
            textures: av.textures.clone(),
            decoder: av.decoder.clone(),
            triplane: av.triplane.clone(),
            params: av.params.clone(),
            lighting: av.lighting,
        }
    }

    pub fn into_avatar(self, settings: RenderSettings) -> Result<Avatar<f32>> {
        Avatar::new(
            self.rig,
            self.textures,
            self.decoder,
            self.triplane,
            self.params,
            self.lighting,
            settings,
        )
    }

    pub fn validate(&self) -> Result<()> {
        check_consistency(&self.rig, &self.textures, &self.decoder, &self.triplane)?;
        if self.params.identity.len() != self.rig.n_id || self.params.expression.len() != self.rig.n_exp {
            return Err(Error::Consistency(format!(
                "params.identity/expression lengths {}/{} != rig.n_id/n_exp {}/{}",
                self.params.identity.len(),
                self.params.expression.len(),
                self.rig.n_id,
                self.rig.n_exp
            )));
        }
        self.params.validate(&self.rig)?;
        self.lighting.validate()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let sections: [(&[u8; 4], Vec<u8>); 6] = [
            (b"RIG\0", self.rig.to_bytes()),
            (b"TEX\0", textures_to_bytes(&self.textures)),
            (b"HAIR", decoder_to_bytes(&self.decoder)),
            (b"TRI\0", triplane_to_bytes(&self.triplane)),
            (b"PARM", params_to_bytes(&self.params)),
            (b"LGHT", lighting_to_bytes(&self.lighting)),
        ];
        let mut w = Writer::new();
        w.bytes(BUNDLE_MAGIC);
        w.u32(BUNDLE_VERSION);
        w.u32(sections.len() as u32);
        for (tag, payload) in &sections {
            w.bytes(*tag);
            w.u64(payload.len() as u64);
            w.bytes(payload);
        }
        let digest = Sha256::digest(&w.buf);
        w.bytes(&digest);
        w.into_inner()
    }

    /// Verifies the digest before decoding anything, then checks that the
    /// components agree with each other.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < BUNDLE_MAGIC.len() + 8 + DIGEST {
            return Err(Error::Checksum(format!("bundle is only {} bytes", bytes.len())));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checksum("bundle digest does not match its contents".into()));
        }
        let mut r = Reader::new(body, Error::Format);
        r.expect_magic(BUNDLE_MAGIC, "bundle")?;
        let version = r.u32("header")?;
        if version != BUNDLE_VERSION {
            return Err(Error::Version {
                found: version,
                expected: BUNDLE_VERSION,
            });
        }
        let count = r.u32("header")?;
        let (mut rig, mut tex, mut dec, mut tri, mut params, mut light) = (None, None, None, None, None, None);
        for _ in 0..count {
            let tag: [u8; 4] = r.take(4, "section tag")?.try_into().unwrap_or_default();
            let len = usize::try_from(r.u64("section length")?)
                .map_err(|_| Error::Format("section length overflow".into()))?;
            let payload = r.take(len, "section payload")?;
            match &tag {
                b"RIG\0" => rig = Some(HeadRig::from_bytes(payload)?),
                b"TEX\0" => tex = Some(textures_from_bytes(payload)?),
                b"HAIR" => dec = Some(decoder_from_bytes(payload)?),
                b"TRI\0" => tri = Some(triplane_from_bytes(payload)?),
                b"PARM" => params = Some(params_from_bytes(payload)?),
                b"LGHT" => light = Some(lighting_from_bytes(payload)?),
                _ => log::debug!("skipping unknown bundle section {:?}", String::from_utf8_lossy(&tag)),
            }
        }
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes after bundle sections", r.remaining())));
        }
        let missing = |name: &str| Error::Format(format!("bundle has no {name} section"));
        let bundle = Self {
            rig: rig.ok_or_else(|| missing("rig"))?,
            textures: tex.ok_or_else(|| missing("texture"))?,
            decoder: dec.ok_or_else(|| missing("hair decoder"))?,
            triplane: tri.ok_or_else(|| missing("tri-plane"))?,
            params: params.ok_or_else(|| missing("params"))?,
            lighting: light.ok_or_else(|| missing("lighting"))?,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

pub fn save_bundle(bundle: &AvatarBundle, path: impl AsRef<Path>) -> Result<()> {
    binio::write_file(path.as_ref(), &bundle.to_bytes())
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<AvatarBundle> {
    AvatarBundle::from_bytes(&binio::read_file(path.as_ref())?)
}

fn textures_to_bytes(t: &TextureSet<f32>) -> Vec<u8> {
    let mut w = Writer::new();
    w.u32(t.albedo.res as u32);
    w.u32(t.bump.res as u32);
    w.f32s(t.albedo.data.iter().flat_map(|c| c.to_array()));
    w.f32s(t.bump.data.iter().copied());
    w.f32s(t.disk_scale);
    w.into_inner()
}

fn textures_from_bytes(b: &[u8]) -> Result<TextureSet<f32>> {
    let mut r = Reader::new(b, Error::Format);
    let ares = r.u32("texture header")? as usize;
    let bres = r.u32("texture header")? as usize;
    let albedo = r
        .f32s(ares * ares * 3, "albedo")?
        .chunks_exact(3)
        .map(|c| Vec3::new(c[0], c[1], c[2]))
        .collect();
    let bump = r.f32s(bres * bres, "bump")?;
    let ds = r.f32s(2, "disk scale")?;
    Ok(TextureSet {
        albedo: UvMap { res: ares, data: albedo },
        bump: UvMap { res: bres, data: bump },
        disk_scale: [ds[0], ds[1]],
    })
}

fn params_to_bytes(p: &HeadParams<f32>) -> Vec<u8> {
    let mut w = Writer::new();
    w.u32(p.identity.len() as u32);
    w.u32(p.expression.len() as u32);
    w.f32s(p.identity.iter().copied());
    w.f32s(p.expression.iter().copied());
    w.f32(p.jaw);
    w.f32s(p.eyes.iter().flatten().copied());
    w.into_inner()
}

fn params_from_bytes(b: &[u8]) -> Result<HeadParams<f32>> {
    let mut r = Reader::new(b, Error::Format);
    let n_id = r.u32("params header")? as usize;
    let n_exp = r.u32("params header")? as usize;
    let identity = r.f32s(n_id, "identity")?;
    let expression = r.f32s(n_exp, "expression")?;
    let jaw = r.f32("jaw")?;
    let e = r.f32s(4, "eyes")?;
    Ok(HeadParams {
        identity,
        expression,
        jaw,
        eyes: [[e[0], e[1]], [e[2], e[3]]],
    })
}

fn lighting_to_bytes(l: &ShLighting<f32>) -> Vec<u8> {
    let mut w = Writer::new();
    w.f32s(l.to_flat());
    w.into_inner()
}

fn lighting_from_bytes(b: &[u8]) -> Result<ShLighting<f32>> {
    let mut r = Reader::new(b, Error::Format);
    ShLighting::from_flat(&r.f32s(27, "lighting")?)
}
