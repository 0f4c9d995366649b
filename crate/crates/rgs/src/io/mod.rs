//! File formats. Everything on disk is little-endian regardless of host.
//!
//! * RGSA assets: [`save_asset`] / [`load_asset`], bit-exact round trips.
//! * Float rasters: PFM, bit-exact for f32-representable data.
//! * LDR rasters: PNG through the gamma-2.2 sRGB transfer.
//! * Environment maps: Radiance HDR (RGBE) or PFM.
//! * Text sidecars: SH coefficients, camera lists, key=value configs.
//!
//! [`write_raster`] / [`read_raster`] dispatch on the file extension, so
//! callers choose LDR vs. linear storage by naming the file `.png` or
//! `.pfm`. The conversion happens exactly once, here.

pub mod asset;
pub mod hdr;
pub mod pfm;
pub mod png;
pub mod text;

use std::path::Path;

use crate::raster::Raster;
use crate::sh::EnvironmentMap;
use crate::{Error, Result};

pub use asset::{export_ply, load_asset, save_asset, SceneAsset};
pub use hdr::{read_hdr, write_hdr};
pub use pfm::{read_pfm, write_pfm};
pub use png::{read_png_srgb, write_png_srgb};
pub use text::{
    read_cameras, read_config, read_sh_text, write_cameras, write_config, write_sh_text,
};

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

/// Writes `.pfm` as linear f32 and `.png` as gamma-2.2 sRGB 8-bit.
pub fn write_raster(path: &Path, raster: &Raster) -> Result<()> {
    match extension(path).as_str() {
        "pfm" => write_pfm(path, raster),
        "png" => write_png_srgb(path, raster),
        other => Err(Error::Usage(format!(
            "cannot write raster {}: unsupported extension {other:?} (use .pfm or .png)",
            path.display()
        ))),
    }
}

/// Inverse of [`write_raster`]: `.png` is decoded back to linear values.
pub fn read_raster(path: &Path) -> Result<Raster> {
    match extension(path).as_str() {
        "pfm" => read_pfm(path),
        "png" => read_png_srgb(path),
        other => Err(Error::Usage(format!(
            "cannot read raster {}: unsupported extension {other:?} (use .pfm or .png)",
            path.display()
        ))),
    }
}

/// Loads an equirectangular radiance map from `.hdr` or `.pfm`, rejecting
/// non-finite and negative radiance.
pub fn read_envmap(path: &Path) -> Result<EnvironmentMap> {
    let raster = match extension(path).as_str() {
        "hdr" => read_hdr(path)?,
        "pfm" => read_pfm(path)?,
        other => {
            return Err(Error::Usage(format!(
                "cannot read environment map {}: unsupported extension {other:?} (use .hdr or .pfm)",
                path.display()
            )))
        }
    };
    EnvironmentMap::new(raster)
}

/// Maps normals componentwise through `(n + 1) / 2` for storage. Zero
/// vectors (uncovered pixels) become 0.5 gray.
pub fn pack_normal_map(normals: &Raster) -> Result<Raster> {
    if normals.channels() != 3 {
        return Err(Error::Mismatch(format!(
            "normal map needs 3 channels, got {}",
            normals.channels()
        )));
    }
    let data = normals.data().iter().map(|n| (n + 1.0) * 0.5).collect();
    Raster::from_vec(normals.width(), normals.height(), 3, data)
}

/// Inverse of [`pack_normal_map`]: `2 v - 1`, no renormalization, so
/// storage quantization is visible to callers that need exact units.
pub fn unpack_normal_map(packed: &Raster) -> Result<Raster> {
    if packed.channels() != 3 {
        return Err(Error::Mismatch(format!(
            "packed normal map needs 3 channels, got {}",
            packed.channels()
        )));
    }
    let data = packed.data().iter().map(|v| 2.0 * v - 1.0).collect();
    Raster::from_vec(packed.width(), packed.height(), 3, data)
}
