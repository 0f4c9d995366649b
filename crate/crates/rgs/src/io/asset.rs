//! The RGSA binary asset format: one Gaussian cloud plus its SH lighting.
//!
//! Layout (all integers and floats little-endian, no padding):
//!
//! ```text
//! magic            4 bytes  "RGSA"
//! version          u32      1
//! primitive count  u32      > 0
//! attribute count  u32      9
//! attribute names  9 x 16 bytes, ASCII, zero-padded
//! SH lighting      48 x f32 (16 coefficient rows, 3 channels each)
//! records          count x 22 x f32:
//!                  position(3) log_scale(3) rotation(4, w x y z)
//!                  opacity_raw color(3) normal_raw(3) albedo(3)
//!                  roughness metallic
//! ```
//!
//! Loading widens f32 to f64 exactly, so save(load(f)) reproduces `f`
//! byte for byte and load(save(a)) is bit-exact whenever `a` holds
//! f32-representable values (see [`SceneAsset::quantized`]).

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, Vector3};

use crate::gaussian::{GaussianCloud, RelightableGaussian};
use crate::sh::{SHLighting, SH_COUNT};
use crate::{Error, Result};

pub(crate) const MAGIC: [u8; 4] = *b"RGSA";
pub(crate) const VERSION: u32 = 1;
const NAME_BYTES: usize = 16;
const SCHEMA: [&str; 9] = [
    "position",
    "log_scale",
    "rotation",
    "opacity_raw",
    "color",
    "normal_raw",
    "albedo",
    "roughness",
    "metallic",
];
const FLOATS_PER_RECORD: usize = 22;
const FIXED_HEADER: usize = 16;

fn expected_len(count: u64) -> u64 {
    (FIXED_HEADER + SCHEMA.len() * NAME_BYTES + SH_COUNT * 3 * 4) as u64
        + count * (FLOATS_PER_RECORD * 4) as u64
}

/// Everything needed to relight and re-render a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneAsset {
    pub cloud: GaussianCloud,
    pub lighting: SHLighting,
}

impl SceneAsset {
    /// Passes every parameter through f32, the storage precision. The
    /// result survives save→load bit-exactly; fitting outputs are
    /// quantized like this before saving so that emitted rasters equal
    /// re-renders of the emitted asset.
    pub fn quantized(&self) -> SceneAsset {
        let q = |v: f64| v as f32 as f64;
        let q3 = |v: &Vector3<f64>| v.map(&q);
        let primitives = self
            .cloud
            .primitives
            .iter()
            .map(|g| RelightableGaussian {
                position: q3(&g.position),
                log_scale: q3(&g.log_scale),
                rotation: Quaternion::new(q(g.rotation.w), q(g.rotation.i), q(g.rotation.j), q(g.rotation.k)),
                opacity_raw: q(g.opacity_raw),
                color: q3(&g.color),
                normal_raw: q3(&g.normal_raw),
                albedo: q3(&g.albedo),
                roughness: q(g.roughness),
                metallic: q(g.metallic),
            })
            .collect();
        let mut lighting = SHLighting::zeros();
        for k in 0..SH_COUNT {
            for ch in 0..3 {
                lighting.coeffs[k][ch] = q(self.lighting.coeffs[k][ch]);
            }
        }
        SceneAsset {
            cloud: GaussianCloud { primitives },
            lighting,
        }
    }
}

fn push(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&(v as f32).to_le_bytes());
}

pub fn save_asset(path: &Path, asset: &SceneAsset) -> Result<()> {
    let n = asset.cloud.len();
    let mut buf = Vec::with_capacity(expected_len(n as u64) as usize);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&(SCHEMA.len() as u32).to_le_bytes());
    for name in SCHEMA {
        let mut field = [0u8; NAME_BYTES];
        field[..name.len()].copy_from_slice(name.as_bytes());
        buf.extend_from_slice(&field);
    }
    for row in &asset.lighting.coeffs {
        for &c in row {
            push(&mut buf, c);
        }
    }
    for g in &asset.cloud.primitives {
        for v in &g.position {
            push(&mut buf, *v);
        }
        for v in &g.log_scale {
            push(&mut buf, *v);
        }
        push(&mut buf, g.rotation.w);
        push(&mut buf, g.rotation.i);
        push(&mut buf, g.rotation.j);
        push(&mut buf, g.rotation.k);
        push(&mut buf, g.opacity_raw);
        for v in &g.color {
            push(&mut buf, *v);
        }
        for v in &g.normal_raw {
            push(&mut buf, *v);
        }
        for v in &g.albedo {
            push(&mut buf, *v);
        }
        push(&mut buf, g.roughness);
        push(&mut buf, g.metallic);
    }
    debug_assert_eq!(buf.len() as u64, expected_len(n as u64));
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_asset(path: &Path) -> Result<SceneAsset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < FIXED_HEADER {
        return Err(Error::Truncated {
            path: path.into(),
            expected: FIXED_HEADER as u64,
            actual: bytes.len() as u64,
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            found: magic,
            expected: MAGIC,
        });
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.into(),
            found: version,
            supported: VERSION,
        });
    }
    let count = u32_at(8) as u64;
    let attrs = u32_at(12) as usize;
    if attrs != SCHEMA.len() {
        return Err(Error::SchemaMismatch {
            path: path.into(),
            detail: format!("expected {} attributes, found {attrs}", SCHEMA.len()),
        });
    }
    let expected = expected_len(count);
    if (bytes.len() as u64) < expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    if bytes.len() as u64 > expected {
        return Err(Error::Malformed {
            path: path.into(),
            format: "RGSA",
            detail: format!("{} trailing bytes", bytes.len() as u64 - expected),
        });
    }
    for (i, want) in SCHEMA.iter().enumerate() {
        let field = &bytes[FIXED_HEADER + i * NAME_BYTES..FIXED_HEADER + (i + 1) * NAME_BYTES];
        let end = field.iter().position(|&b| b == 0).unwrap_or(NAME_BYTES);
        let got = std::str::from_utf8(&field[..end]).unwrap_or("<non-ascii>");
        if got != *want || field[end..].iter().any(|&b| b != 0) {
            return Err(Error::SchemaMismatch {
                path: path.into(),
                detail: format!("attribute {i}: expected {want:?}, found {got:?}"),
            });
        }
    }
    if count == 0 {
        return Err(Error::Malformed {
            path: path.into(),
            format: "RGSA",
            detail: "zero primitives".into(),
        });
    }

    let mut pos = FIXED_HEADER + SCHEMA.len() * NAME_BYTES;
    let mut next = || {
        let v = f32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as f64;
        pos += 4;
        v
    };
    let malformed_nan = |what: String| Error::Malformed {
        path: path.into(),
        format: "RGSA",
        detail: format!("non-finite value in {what}"),
    };

    let mut lighting = SHLighting::zeros();
    for k in 0..SH_COUNT {
        for ch in 0..3 {
            let v = next();
            if !v.is_finite() {
                return Err(malformed_nan(format!("SH coefficient {k}")));
            }
            lighting.coeffs[k][ch] = v;
        }
    }
    let mut primitives = Vec::with_capacity(count as usize);
    for i in 0..count {
        let mut rec = [0.0f64; FLOATS_PER_RECORD];
        for r in rec.iter_mut() {
            *r = next();
            if !r.is_finite() {
                return Err(malformed_nan(format!("record {i}")));
            }
        }
        primitives.push(RelightableGaussian {
            position: Vector3::new(rec[0], rec[1], rec[2]),
            log_scale: Vector3::new(rec[3], rec[4], rec[5]),
            rotation: Quaternion::new(rec[6], rec[7], rec[8], rec[9]),
            opacity_raw: rec[10],
            color: Vector3::new(rec[11], rec[12], rec[13]),
            normal_raw: Vector3::new(rec[14], rec[15], rec[16]),
            albedo: Vector3::new(rec[17], rec[18], rec[19]),
            roughness: rec[20],
            metallic: rec[21],
        });
    }
    Ok(SceneAsset {
        cloud: GaussianCloud::new(primitives)?,
        lighting,
    })
}

/// ASCII PLY with positions and display colors, for external viewers.
/// Lossy by design; the RGSA file remains the authoritative asset.
pub fn export_ply(path: &Path, asset: &SceneAsset) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "ply\nformat ascii 1.0").unwrap();
    writeln!(out, "element vertex {}", asset.cloud.len()).unwrap();
    for axis in ["x", "y", "z"] {
        writeln!(out, "property float {axis}").unwrap();
    }
    for ch in ["red", "green", "blue"] {
        writeln!(out, "property uchar {ch}").unwrap();
    }
    writeln!(out, "end_header").unwrap();
    for g in &asset.cloud.primitives {
        let c = g.color.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
        writeln!(
            out,
            "{} {} {} {} {} {}",
            g.position.x as f32, g.position.y as f32, g.position.z as f32, c.x, c.y, c.z
        )
        .unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
