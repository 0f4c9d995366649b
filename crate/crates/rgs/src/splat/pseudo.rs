//! Pseudo-normals from a rendered depth map.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::camera::Camera;
use crate::raster::Raster;
use crate::{Error, Result};

/// Minimum accumulated opacity for a pixel's depth to count as surface.
const COVERAGE_MIN: f64 = 0.5;

/// Derives a world-space normal map from rendered depth and coverage.
///
/// Each sufficiently covered pixel and its +u/+v neighbors are unprojected
/// to camera space at their alpha-normalized depths (blended depth is
/// down-weighted by transmittance, so depth/alpha restores the surface
/// distance). The normal is the normalized cross product of the one-sided
/// differences, flipped to face the camera, then rotated to world space.
///
/// Pixels whose own or neighbor coverage is below 0.5, or whose +u/+v
/// neighbor falls outside the image, emit (0, 0, 0).
pub fn pseudo_normal(depth: &Raster, accum_alpha: &Raster, cam: &Camera) -> Result<Raster> {
    let (w, h) = (cam.width(), cam.height());
    depth
        .expect_shape(w, h, 1)
        .map_err(|_| Error::Mismatch("depth map does not match camera resolution".into()))?;
    accum_alpha
        .expect_shape(w, h, 1)
        .map_err(|_| Error::Mismatch("accum_alpha map does not match camera resolution".into()))?;

    let d = depth.data();
    let a = accum_alpha.data();
    let (fx, fy) = (cam.focal.x, cam.focal.y);
    let (cx, cy) = (cam.principal_point.x, cam.principal_point.y);
    let rot_wc = cam.rotation_wc();

    let point_at = |x: usize, y: usize| -> Option<Vector3<f64>> {
        let idx = y * w + x;
        if a[idx] < COVERAGE_MIN {
            return None;
        }
        let z = d[idx] / a[idx];
        Some(Vector3::new(
            (x as f64 + 0.5 - cx) / fx * z,
            (y as f64 + 0.5 - cy) / fy * z,
            z,
        ))
    };

    let mut out = vec![0.0f64; w * h * 3];
    out.par_chunks_mut(w * 3).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            if x + 1 >= w || y + 1 >= h {
                continue;
            }
            let (p, pu, pv) = match (point_at(x, y), point_at(x + 1, y), point_at(x, y + 1)) {
                (Some(p), Some(pu), Some(pv)) => (p, pu, pv),
                _ => continue,
            };
            let cross = (pu - p).cross(&(pv - p));
            let norm = cross.norm();
            if norm < 1e-12 {
                continue;
            }
            let mut n = cross / norm;
            if n.dot(&p) > 0.0 {
                n = -n;
            }
            let n_world = rot_wc * n;
            row[x * 3] = n_world.x;
            row[x * 3 + 1] = n_world.y;
            row[x * 3 + 2] = n_world.z;
        }
    });
    Raster::from_vec(w, h, 3, out)
}
