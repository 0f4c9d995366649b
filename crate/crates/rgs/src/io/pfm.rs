//! PFM float rasters.
//!
//! Header `PF` (3-channel) or `Pf` (1-channel), dimensions, then a scale
//! whose sign encodes endianness; we always write `-1.0` (little-endian).
//! Rows are stored bottom-to-top per the format. Values pass through f32,
//! so a raster that originated as f32 data round-trips bit-exactly.

use std::path::Path;

use crate::raster::Raster;
use crate::{Error, Result};

pub fn write_pfm(path: &Path, raster: &Raster) -> Result<()> {
    let c = raster.channels();
    if c != 1 && c != 3 {
        return Err(Error::Usage(format!("PFM stores 1 or 3 channels, raster has {c}")));
    }
    let (w, h) = (raster.width(), raster.height());
    let mut bytes = Vec::with_capacity(32 + w * h * c * 4);
    bytes.extend_from_slice(if c == 3 { b"PF\n" } else { b"Pf\n" });
    bytes.extend_from_slice(format!("{w} {h}\n-1.0\n").as_bytes());
    for y in (0..h).rev() {
        for x in 0..w {
            for v in raster.pixel(x, y) {
                bytes.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<Raster> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |detail: &str| Error::Malformed {
        path: path.into(),
        format: "PFM",
        detail: detail.into(),
    };

    // Three whitespace-separated header tokens after the magic, then one
    // whitespace byte, then raw samples.
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Option<(usize, usize)> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then_some((start, pos))
    };
    let magic = token(&bytes).ok_or_else(|| bad("missing magic"))?;
    let channels = match &bytes[magic.0..magic.1] {
        b"PF" => 3,
        b"Pf" => 1,
        _ => return Err(bad("magic is neither PF nor Pf")),
    };
    let mut number = |name: &str| -> Result<f64> {
        let (s, e) = token(&bytes).ok_or_else(|| bad(&format!("missing {name}")))?;
        std::str::from_utf8(&bytes[s..e])
            .ok()
            .and_then(|t| t.parse::<f64>().ok())
            .ok_or_else(|| bad(&format!("unparseable {name}")))
    };
    let w = number("width")?;
    let h = number("height")?;
    let scale = number("scale")?;
    if w < 1.0 || h < 1.0 || w.fract() != 0.0 || h.fract() != 0.0 || w * h > 1e9 {
        return Err(bad("invalid dimensions"));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("invalid scale"));
    }
    let (w, h) = (w as usize, h as usize);
    let data_start = pos + 1; // exactly one whitespace byte after the scale
    let expected = data_start + w * h * channels * 4;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected: expected as u64,
            actual: bytes.len() as u64,
        });
    }
    if bytes.len() > expected {
        return Err(bad("trailing bytes after sample data"));
    }

    let little = scale < 0.0;
    let factor = scale.abs();
    let mut data = vec![0.0f64; w * h * channels];
    for fy in 0..h {
        let y = h - 1 - fy;
        for x in 0..w {
            for ch in 0..channels {
                let i = data_start + ((fy * w + x) * channels + ch) * 4;
                let raw: [u8; 4] = bytes[i..i + 4].try_into().unwrap();
                let v = if little {
                    f32::from_le_bytes(raw)
                } else {
                    f32::from_be_bytes(raw)
                };
                data[(y * w + x) * channels + ch] = if factor == 1.0 {
                    v as f64
                } else {
                    v as f64 * factor
                };
            }
        }
    }
    Raster::from_vec(w, h, channels, data)
}
