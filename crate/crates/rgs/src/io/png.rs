//! 8-bit PNG for LDR images.
//!
//! The transfer function is a plain power law with γ = 2.2 (not the
//! piecewise sRGB curve): encode clamps to [0,1], raises to 1/2.2 and
//! rounds to 8 bits; decode inverts it. Conversions happen exactly once,
//! here at the file boundary; everything in memory is linear.

use std::path::Path;

use crate::raster::Raster;
use crate::{Error, Result};

pub const GAMMA: f64 = 2.2;

pub fn encode_srgb8(linear: f64) -> u8 {
    (linear.clamp(0.0, 1.0).powf(1.0 / GAMMA) * 255.0).round() as u8
}

pub fn decode_srgb8(byte: u8) -> f64 {
    (byte as f64 / 255.0).powf(GAMMA)
}

/// Writes a 1- or 3-channel linear raster as an 8-bit PNG.
pub fn write_png_srgb(path: &Path, raster: &Raster) -> Result<()> {
    let (w, h) = (raster.width() as u32, raster.height() as u32);
    let err = |e: image::ImageError| Error::Malformed {
        path: path.into(),
        format: "PNG",
        detail: e.to_string(),
    };
    match raster.channels() {
        1 => {
            let buf: Vec<u8> = raster.data().iter().map(|v| encode_srgb8(*v)).collect();
            image::GrayImage::from_raw(w, h, buf)
                .expect("raster dimensions are consistent")
                .save(path)
                .map_err(err)
        }
        3 => {
            let buf: Vec<u8> = raster.data().iter().map(|v| encode_srgb8(*v)).collect();
            image::RgbImage::from_raw(w, h, buf)
                .expect("raster dimensions are consistent")
                .save(path)
                .map_err(err)
        }
        c => Err(Error::Usage(format!("PNG stores 1 or 3 channels, raster has {c}"))),
    }
}

/// Reads an 8-bit PNG to a linear raster (grayscale stays 1-channel,
/// anything with color becomes 3-channel).
pub fn read_png_srgb(path: &Path) -> Result<Raster> {
    let img = image::open(path).map_err(|e| Error::Malformed {
        path: path.into(),
        format: "PNG",
        detail: e.to_string(),
    })?;
    match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            let data = g.into_raw().iter().map(|b| decode_srgb8(*b)).collect();
            Raster::from_vec(w, h, 1, data)
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let data = rgb.into_raw().iter().map(|b| decode_srgb8(*b)).collect();
            Raster::from_vec(w, h, 3, data)
        }
    }
}
