//! Radiance RGBE (.hdr) images.
//!
//! Decode convention (normative for this crate): exponent byte 0 means
//! black, otherwise channel = mantissa · 2^(e − 136), i.e. mantissa/256
//! scaled by 2^(e−128). Encoding picks e with 2^(e−1) ≤ max < 2^e and
//! floors the mantissas; (128,128,128,129) therefore decodes to exactly
//! (1,1,1). Reader accepts flat and new-style RLE scanlines; the writer
//! emits flat scanlines only.

use std::path::Path;

use crate::raster::Raster;
use crate::{Error, Result};

pub fn rgbe_decode(rgbe: [u8; 4]) -> [f64; 3] {
    let e = rgbe[3];
    if e == 0 {
        return [0.0; 3];
    }
    let scale = ((e as i32 - 136) as f64).exp2();
    [
        rgbe[0] as f64 * scale,
        rgbe[1] as f64 * scale,
        rgbe[2] as f64 * scale,
    ]
}

pub fn rgbe_encode(rgb: [f64; 3]) -> [u8; 4] {
    let max = rgb[0].max(rgb[1]).max(rgb[2]);
    if !(max > 1e-32) {
        return [0, 0, 0, 0];
    }
    // Smallest e with max < 2^e; log2 rounding fixed up explicitly.
    let mut e = max.log2().floor() as i32 + 1;
    if max >= (e as f64).exp2() {
        e += 1;
    }
    if max < ((e - 1) as f64).exp2() {
        e -= 1;
    }
    let scale = ((8 - e) as f64).exp2();
    let m = |v: f64| ((v * scale) as u8).min(255);
    [m(rgb[0]), m(rgb[1]), m(rgb[2]), (e + 128).clamp(0, 255) as u8]
}

pub fn write_hdr(path: &Path, raster: &Raster) -> Result<()> {
    raster
        .expect_shape(raster.width(), raster.height(), 3)
        .map_err(|_| Error::Usage("HDR output requires a 3-channel raster".into()))?;
    for v in raster.data() {
        if !v.is_finite() || *v < 0.0 {
            return Err(Error::NonFinite("HDR radiance (negative or non-finite)".into()));
        }
    }
    let (w, h) = (raster.width(), raster.height());
    let mut bytes = Vec::with_capacity(64 + w * h * 4);
    bytes.extend_from_slice(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n");
    bytes.extend_from_slice(format!("-Y {h} +X {w}\n").as_bytes());
    for y in 0..h {
        for x in 0..w {
            let p = raster.pixel(x, y);
            bytes.extend_from_slice(&rgbe_encode([p[0], p[1], p[2]]));
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_hdr(path: &Path) -> Result<Raster> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |detail: String| Error::Malformed {
        path: path.into(),
        format: "HDR",
        detail,
    };

    // Header: lines up to the first empty one, then the resolution line.
    let mut pos = 0usize;
    let first = header_line(&bytes, &mut pos).ok_or_else(|| bad("unterminated header".into()))?;
    if !first.starts_with("#?") {
        return Err(bad(format!("missing #? signature, found {first:?}")));
    }
    let mut format_ok = false;
    loop {
        let l = header_line(&bytes, &mut pos).ok_or_else(|| bad("unterminated header".into()))?;
        if l.is_empty() {
            break;
        }
        if l == "FORMAT=32-bit_rle_rgbe" {
            format_ok = true;
        }
    }
    if !format_ok {
        return Err(bad("missing FORMAT=32-bit_rle_rgbe".into()));
    }
    let res = header_line(&bytes, &mut pos).ok_or_else(|| bad("missing resolution line".into()))?;
    let parts: Vec<&str> = res.split_whitespace().collect();
    let (w, h) = match parts.as_slice() {
        ["-Y", h, "+X", w] => (
            w.parse::<usize>().map_err(|_| bad("bad width".into()))?,
            h.parse::<usize>().map_err(|_| bad("bad height".into()))?,
        ),
        _ => return Err(bad(format!("unsupported resolution line {res:?}"))),
    };
    if w == 0 || h == 0 || w * h > 1 << 30 {
        return Err(bad("invalid dimensions".into()));
    }

    let mut data = vec![0.0f64; w * h * 3];
    let mut cursor = pos;
    for y in 0..h {
        let row = read_scanline(&bytes, &mut cursor, w)
            .map_err(|detail| bad(format!("scanline {y}: {detail}")))?;
        for (x, rgbe) in row.iter().enumerate() {
            let rgb = rgbe_decode(*rgbe);
            data[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&rgb);
        }
    }
    if cursor != bytes.len() {
        return Err(bad("trailing bytes after pixel data".into()));
    }
    Raster::from_vec(w, h, 3, data)
}

/// Next newline-terminated header line; `None` at end of input or on
/// non-UTF8 bytes.
fn header_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a str> {
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos] != b'\n' {
        *pos += 1;
    }
    if *pos >= bytes.len() {
        return None;
    }
    let s = std::str::from_utf8(&bytes[start..*pos]).ok()?;
    *pos += 1;
    Some(s)
}

/// One scanline of RGBE pixels, flat or new-style RLE.
fn read_scanline(bytes: &[u8], cursor: &mut usize, w: usize) -> std::result::Result<Vec<[u8; 4]>, String> {
    let rest = &bytes[*cursor..];
    if rest.len() < 4 {
        return Err("truncated".into());
    }
    let head = [rest[0], rest[1], rest[2], rest[3]];
    let rle_width = ((head[2] as usize) << 8) | head[3] as usize;
    if head[0] == 2 && head[1] == 2 && rle_width == w && w >= 8 && w < 32768 {
        // Four per-component RLE streams.
        let mut row = vec![[0u8; 4]; w];
        let mut p = *cursor + 4;
        for comp in 0..4 {
            let mut x = 0usize;
            while x < w {
                if p >= bytes.len() {
                    return Err("truncated RLE stream".into());
                }
                let count = bytes[p] as usize;
                p += 1;
                if count > 128 {
                    let run = count - 128;
                    if p >= bytes.len() || x + run > w {
                        return Err("bad RLE run".into());
                    }
                    for _ in 0..run {
                        row[x][comp] = bytes[p];
                        x += 1;
                    }
                    p += 1;
                } else {
                    if count == 0 || p + count > bytes.len() || x + count > w {
                        return Err("bad RLE literal".into());
                    }
                    for i in 0..count {
                        row[x][comp] = bytes[p + i];
                        x += 1;
                    }
                    p += count;
                }
            }
        }
        *cursor = p;
        Ok(row)
    } else if head[0] == 1 && head[1] == 1 && head[2] == 1 {
        Err("old-style RLE is not supported".into())
    } else {
        // Flat scanline.
        if rest.len() < w * 4 {
            return Err("truncated".into());
        }
        let mut row = Vec::with_capacity(w);
        for x in 0..w {
            let i = *cursor + x * 4;
            row.push([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
        }
        *cursor += w * 4;
        Ok(row)
    }
}
