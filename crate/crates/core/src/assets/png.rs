//! 8-bit PNG input and output for albedo maps, edit patches and frames.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};

use super::binio;
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::real::Real;
use crate::shading::Image;
use crate::uvmaps::UvMap;

/// Decodes any 8-bit PNG to RGB in `[0,1]`; alpha is dropped.
pub fn decode_png<T: Real>(bytes: &[u8]) -> Result<Image<T>> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8();
    let (w, h) = img.dimensions();
    // Same rounding as `n / 255` computed in f64, so quantized maps survive
    // an export/import cycle bit for bit.
    let q = |c: u8| T::lit(c as f64 / 255.0);
    let pixels = img.pixels().map(|p| Vec3::new(q(p[0]), q(p[1]), q(p[2]))).collect();
    Ok(Image {
        width: w as usize,
        height: h as usize,
        pixels,
    })
}

pub fn encode_png<T: Real>(img: &Image<T>) -> Result<Vec<u8>> {
    let rgb = RgbImage::from_raw(img.width as u32, img.height as u32, img.to_rgb8())
        .ok_or_else(|| Error::invalid("image", "pixel count does not match size"))?;
    let mut out = Cursor::new(Vec::new());
    rgb.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn load_png<T: Real>(path: impl AsRef<Path>) -> Result<Image<T>> {
    decode_png(&binio::read_file(path.as_ref())?)
}

pub fn save_png<T: Real>(img: &Image<T>, path: impl AsRef<Path>) -> Result<()> {
    binio::write_file(path.as_ref(), &encode_png(img)?)
}

/// Albedo map as an image, row 0 = `v = 0`.
pub fn albedo_image<T: Real>(map: &UvMap<Vec3<T>>) -> Image<T> {
    Image {
        width: map.res,
        height: map.res,
        pixels: map.data.clone(),
    }
}

pub fn albedo_from_image<T: Real>(img: &Image<T>) -> Result<UvMap<Vec3<T>>> {
    if img.width != img.height {
        return Err(Error::invalid("albedo image", format!("{}x{} is not square", img.width, img.height)));
    }
    Ok(UvMap {
        res: img.width,
        data: img.pixels.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantized_images_roundtrip_exactly() {
        let img = Image {
            width: 3,
            height: 2,
            pixels: (0..6)
                .map(|k| Vec3::lit(k as f64 * 40.0 / 255.0, (255.0 - k as f64) / 255.0, 7.0 / 255.0))
                .collect(),
        };
        let back: Image<f32> = decode_png(&encode_png(&img).unwrap()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn garbage_is_an_image_error() {
        assert!(matches!(decode_png::<f32>(b"not a png"), Err(Error::Image(_))));
    }
}
