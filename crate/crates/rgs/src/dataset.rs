//! Loads a dataset directory (as written by [`crate::synth::write_dataset`])
//! into a supervision set for fitting.
//!
//! The ground-truth image Ĉ for each view is the emitted PBR render,
//! which the rasterizer produces pre-composited over black. Because the
//! background is exactly black, every pixel is an exact target, so the
//! supervision mask is full frame: masking to the silhouette leaves the
//! soft alpha band (over half the frame for a smooth object at 64×64)
//! unsupervised and lets floaters survive. The mask mechanism in the
//! loss stays for captures whose background carries no signal. Material
//! maps are attached when all three are present, so datasets stripped of
//! them (material-supervision ablations) still load.

use std::path::Path;

use crate::fit::SupervisionSet;
use crate::io::{read_cameras, read_pfm};
use crate::loss::{MaterialGt, SupervisionView};
use crate::synth::view_file;
use crate::{Error, Result};

/// Reads cameras plus per-view maps. `with_materials: false` drops the
/// material supervision even when present (ablation runs).
pub fn load_supervision(dir: &Path, with_materials: bool) -> Result<SupervisionSet> {
    let cam_path = dir.join("cameras.txt");
    if !cam_path.is_file() {
        return Err(Error::Io {
            path: cam_path,
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "missing cameras.txt"),
        });
    }
    let cameras = read_cameras(&cam_path)?;
    let views = cameras
        .into_iter()
        .enumerate()
        .map(|(i, camera)| {
            let image = read_pfm(&view_file(dir, i, "pbr"))?;
            let mask = vec![true; camera.width() * camera.height()];

            let materials = if with_materials {
                let paths = [
                    view_file(dir, i, "albedo"),
                    view_file(dir, i, "roughness"),
                    view_file(dir, i, "metallic"),
                ];
                if paths.iter().all(|p| p.is_file()) {
                    Some(MaterialGt {
                        albedo: read_pfm(&paths[0])?,
                        roughness: read_pfm(&paths[1])?,
                        metallic: read_pfm(&paths[2])?,
                    })
                } else {
                    None
                }
            } else {
                None
            };

            let view = SupervisionView {
                camera,
                image,
                mask,
                materials,
            };
            view.validate()?;
            Ok(view)
        })
        .collect::<Result<Vec<_>>>()?;
    let set = SupervisionSet { views };
    set.validate()?;
    Ok(set)
}
