//! Hair decoder (`EGHAIR\0`) and tri-plane (`EGTRI\0`) containers.
//!
//! Decoder: magic, version, `n_hair`, `cond_dim`, then per layer `inputs`,
//! `outputs`; `output_scale`, `scale_unit`; position weights, rest positions,
//! then each layer's weights and bias.
//!
//! Tri-plane: magic, version, `res`, `channels`, center (3), side, then the
//! `xy`, `xz`, `yz` planes.

use std::path::Path;

use super::binio::{self, Reader, Writer};
use crate::error::{Error, Result};
use crate::gaussgen::{Dense, HairDecoder, TriPlane};
use crate::math::Vec3;

pub const HAIR_MAGIC: &[u8; 7] = b"EGHAIR\0";
pub const TRIPLANE_MAGIC: &[u8; 6] = b"EGTRI\0";
pub const HAIR_VERSION: u32 = 1;
pub const TRIPLANE_VERSION: u32 = 1;

fn check_version(found: u32, expected: u32) -> Result<()> {
    if found != expected {
        return Err(Error::Version { found, expected });
    }
    Ok(())
}

pub fn decoder_to_bytes(dec: &HairDecoder<f32>) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(HAIR_MAGIC);
    w.u32(HAIR_VERSION);
    w.u32(dec.n_hair() as u32);
    w.u32(dec.cond_dim as u32);
    for l in &dec.layers {
        w.u32(l.inputs as u32);
        w.u32(l.outputs as u32);
    }
    w.f32(dec.output_scale);
    w.f32(dec.scale_unit);
    w.f32s(dec.pos_weights.iter().copied());
    w.f32s(dec.bias.iter().flat_map(|b| b.to_array()));
    for l in &dec.layers {
        w.f32s(l.weights.iter().copied());
        w.f32s(l.bias.iter().copied());
    }
    w.into_inner()
}

pub fn decoder_from_bytes(bytes: &[u8]) -> Result<HairDecoder<f32>> {
    let mut r = Reader::new(bytes, Error::Format);
    r.expect_magic(HAIR_MAGIC, "hair decoder")?;
    check_version(r.u32("header")?, HAIR_VERSION)?;
    let n_hair = r.u32("header")? as usize;
    let cond_dim = r.u32("header")? as usize;
    let mut shapes = [(0usize, 0usize); 3];
    for s in &mut shapes {
        *s = (r.u32("header")? as usize, r.u32("header")? as usize);
    }
    let output_scale = r.f32("header")?;
    let scale_unit = r.f32("header")?;
    let rows = n_hair
        .checked_mul(3 * cond_dim)
        .ok_or_else(|| Error::Format("hair decoder shape overflow".into()))?;
    let pos_weights = r.f32s(rows, "position weights")?;
    let bias = r
        .f32s(n_hair * 3, "rest positions")?
        .chunks_exact(3)
        .map(|c| Vec3::new(c[0], c[1], c[2]))
        .collect();
    let mut layer = |(inputs, outputs): (usize, usize)| -> Result<Dense<f32>> {
        Ok(Dense {
            inputs,
            outputs,
            weights: r.f32s(inputs * outputs, "layer weights")?,
            bias: r.f32s(outputs, "layer bias")?,
        })
    };
    let layers = [layer(shapes[0])?, layer(shapes[1])?, layer(shapes[2])?];
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes after hair decoder", r.remaining())));
    }
    let dec = HairDecoder {
        cond_dim,
        pos_weights,
        bias,
        output_scale,
        layers,
        scale_unit,
    };
    dec.validate()?;
    Ok(dec)
}

pub fn triplane_to_bytes(tp: &TriPlane<f32>) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(TRIPLANE_MAGIC);
    w.u32(TRIPLANE_VERSION);
    w.u32(tp.res as u32);
    w.u32(tp.channels as u32);
    w.f32s(tp.center.to_array());
    w.f32(tp.side);
    for p in &tp.planes {
        w.f32s(p.iter().copied());
    }
    w.into_inner()
}

pub fn triplane_from_bytes(bytes: &[u8]) -> Result<TriPlane<f32>> {
    let mut r = Reader::new(bytes, Error::Format);
    r.expect_magic(TRIPLANE_MAGIC, "tri-plane")?;
    check_version(r.u32("header")?, TRIPLANE_VERSION)?;
    let res = r.u32("header")? as usize;
    let channels = r.u32("header")? as usize;
    let c = r.f32s(3, "header")?;
    let side = r.f32("header")?;
    let n = res
        .checked_mul(res)
        .and_then(|x| x.checked_mul(channels))
        .ok_or_else(|| Error::Format("tri-plane shape overflow".into()))?;
    let planes = [r.f32s(n, "xy plane")?, r.f32s(n, "xz plane")?, r.f32s(n, "yz plane")?];
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes after tri-plane", r.remaining())));
    }
    let tp = TriPlane {
        res,
        channels,
        center: Vec3::new(c[0], c[1], c[2]),
        side,
        planes,
    };
    tp.validate()?;
    Ok(tp)
}

pub fn load_decoder(path: impl AsRef<Path>) -> Result<HairDecoder<f32>> {
    decoder_from_bytes(&binio::read_file(path.as_ref())?)
}

pub fn save_decoder(dec: &HairDecoder<f32>, path: impl AsRef<Path>) -> Result<()> {
    binio::write_file(path.as_ref(), &decoder_to_bytes(dec))
}

pub fn load_triplane(path: impl AsRef<Path>) -> Result<TriPlane<f32>> {
    triplane_from_bytes(&binio::read_file(path.as_ref())?)
}

pub fn save_triplane(tp: &TriPlane<f32>, path: impl AsRef<Path>) -> Result<()> {
    binio::write_file(path.as_ref(), &triplane_to_bytes(tp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::desk::{desk_hair, DeskOptions};

    fn small() -> (HairDecoder<f32>, TriPlane<f32>) {
        let (d, t) = desk_hair(
            &DeskOptions {
                t_tri: 8,
                feature_dim: 4,
                hidden: 6,
                ..DeskOptions::default()
            },
            5,
        );
        (d.cast(), t.cast())
    }

    #[test]
    fn roundtrips_are_bitwise() {
        let (d, t) = small();
        let db = decoder_to_bytes(&d);
        assert_eq!(decoder_to_bytes(&decoder_from_bytes(&db).unwrap()), db);
        assert_eq!(decoder_from_bytes(&db).unwrap(), d);
        let tb = triplane_to_bytes(&t);
        assert_eq!(triplane_from_bytes(&tb).unwrap(), t);
    }

    #[test]
    fn truncation_and_magic_are_reported() {
        let (d, t) = small();
        let db = decoder_to_bytes(&d);
        assert!(matches!(decoder_from_bytes(&db[..db.len() - 1]), Err(Error::Format(_))));
        let tb = triplane_to_bytes(&t);
        assert!(matches!(decoder_from_bytes(&tb), Err(Error::Format(_))));
        assert!(triplane_from_bytes(&tb[..20]).is_err());
    }
}
