//! Forward blending: tile path and the naive full-sort reference.

use rayon::prelude::*;

use nalgebra::Vector3;

use crate::camera::Camera;
use crate::gaussian::GaussianCloud;
use crate::raster::{Raster, RenderOutput};
use crate::Result;

use super::{splat_alpha, PrimitiveChannels, RasterScene, RasterSettings, ScreenGaussian};

/// Blended lanes: 14 channel values + view depth + constant 1 (alpha).
pub(crate) const LANES: usize = 16;
pub(crate) const VALUE_LANES: usize = 14;
pub(crate) const LANE_DEPTH: usize = 14;

/// Per-screen-gaussian lane values, aligned with `scene.screen`.
pub(crate) fn pack_values(scene: &RasterScene, ch: &PrimitiveChannels) -> Vec<[f64; LANES]> {
    scene
        .screen
        .iter()
        .map(|sg| {
            let i = sg.source_index;
            let mut v = [0.0; LANES];
            v[0..3].copy_from_slice(ch.color[i].as_slice());
            v[3..6].copy_from_slice(ch.pbr[i].as_slice());
            v[6..9].copy_from_slice(ch.normal[i].as_slice());
            v[9..12].copy_from_slice(ch.albedo[i].as_slice());
            v[12] = ch.roughness[i];
            v[13] = ch.metallic[i];
            v[LANE_DEPTH] = sg.view_depth;
            v[15] = 1.0;
            v
        })
        .collect()
}

/// Splits a W*H*16 interleaved lane buffer into the output maps.
fn demux(width: usize, height: usize, buf: &[f64]) -> RenderOutput {
    let mut out = RenderOutput::zeros(width, height);
    for p in 0..width * height {
        let l = &buf[p * LANES..(p + 1) * LANES];
        out.color.data_mut()[p * 3..p * 3 + 3].copy_from_slice(&l[0..3]);
        out.pbr.data_mut()[p * 3..p * 3 + 3].copy_from_slice(&l[3..6]);
        out.normal.data_mut()[p * 3..p * 3 + 3].copy_from_slice(&l[6..9]);
        out.albedo.data_mut()[p * 3..p * 3 + 3].copy_from_slice(&l[9..12]);
        out.roughness.data_mut()[p] = l[12];
        out.metallic.data_mut()[p] = l[13];
        out.depth.data_mut()[p] = l[LANE_DEPTH];
        out.alpha.data_mut()[p] = l[15];
    }
    out
}

/// Front-to-back blend of one pixel over a depth-sorted contributor
/// list, accumulating `w = α·T` times each lane value.
#[inline]
pub(crate) fn blend_pixel<'a>(
    contributors: impl Iterator<Item = &'a u32>,
    screen: &[ScreenGaussian],
    values: &[[f64; LANES]],
    settings: &RasterSettings,
    px: f64,
    py: f64,
    skip_rect_test: bool,
    out: &mut [f64; LANES],
) {
    let ix = px as usize;
    let iy = py as usize;
    let mut transmittance = 1.0;
    for &si in contributors {
        let sg = &screen[si as usize];
        if !skip_rect_test && !sg.rect.contains(ix, iy) {
            continue;
        }
        let alpha = splat_alpha(sg, px, py);
        if let Some(cut) = settings.alpha_cutoff {
            if alpha < cut {
                continue;
            }
        }
        let w = alpha * transmittance;
        let v = &values[si as usize];
        for lane in 0..LANES {
            out[lane] += w * v[lane];
        }
        transmittance *= 1.0 - alpha;
        if let Some(floor) = settings.transmittance_floor {
            if transmittance < floor {
                break;
            }
        }
    }
}

impl RasterScene {
    /// Tile-parallel forward pass. Work is split by rows of tiles; each
    /// such band owns a disjoint slice of the lane buffer.
    pub fn forward(&self, channels: &PrimitiveChannels) -> Result<RenderOutput> {
        channels.validate(self.k)?;
        let values = pack_values(self, channels);
        let ts = self.settings.tile_size.max(1);
        let mut buf = vec![0.0f64; self.width * self.height * LANES];

        let band = ts * self.width * LANES;
        buf.par_chunks_mut(band).enumerate().for_each(|(ty, slab)| {
            let y0 = ty * ts;
            let y1 = (y0 + ts).min(self.height);
            for tx in 0..self.tiles_x {
                let bin = &self.bins[ty * self.tiles_x + tx];
                if bin.indices.is_empty() {
                    continue;
                }
                let x0 = tx * ts;
                let x1 = (x0 + ts).min(self.width);
                for y in y0..y1 {
                    for x in x0..x1 {
                        let mut px = [0.0; LANES];
                        blend_pixel(
                            bin.indices.iter(),
                            &self.screen,
                            &values,
                            &self.settings,
                            x as f64 + 0.5,
                            y as f64 + 0.5,
                            false,
                            &mut px,
                        );
                        let off = ((y - y0) * self.width + x) * LANES;
                        slab[off..off + LANES].copy_from_slice(&px);
                    }
                }
            }
        });

        Ok(demux(self.width, self.height, &buf))
    }
}

/// Naive reference rasterizer: per pixel, walks the full depth-sorted
/// primitive list with the same α and blending arithmetic as the tile
/// path. Oracle for the tile machinery (binning, tiling, ordering);
/// under `RasterSettings::oracle` the two must agree exactly.
pub fn rasterize_reference(
    cloud: &GaussianCloud,
    channels: &PrimitiveChannels,
    cam: &Camera,
    settings: &RasterSettings,
) -> Result<RenderOutput> {
    let scene = RasterScene::prepare(cloud, cam, settings)?;
    channels.validate(scene.k)?;
    let values = pack_values(&scene, channels);
    let mut buf = vec![0.0f64; scene.width * scene.height * LANES];
    for y in 0..scene.height {
        for x in 0..scene.width {
            let mut px = [0.0; LANES];
            blend_pixel(
                scene.order.iter(),
                &scene.screen,
                &values,
                &scene.settings,
                x as f64 + 0.5,
                y as f64 + 0.5,
                false,
                &mut px,
            );
            let off = (y * scene.width + x) * LANES;
            buf[off..off + LANES].copy_from_slice(&px);
        }
    }
    Ok(demux(scene.width, scene.height, &buf))
}

/// Screen-space composition helper shared with shading wrappers: blends
/// only the `pbr` channel of `channels`, reusing the prepared scene.
impl RasterScene {
    pub fn forward_pbr_only(&self, pbr: &[Vector3<f64>]) -> Result<Raster> {
        if pbr.len() != self.k {
            return Err(crate::Error::Mismatch(format!(
                "pbr channel has length {}, cloud has {}",
                pbr.len(),
                self.k
            )));
        }
        let mut channels = PrimitiveChannels::zeros(self.k);
        channels.pbr = pbr.to_vec();
        Ok(self.forward(&channels)?.pbr)
    }
}
