//! Image metrics (PSNR, SSIM) and geometry metrics (Chamfer distance,
//! F-score) plus point-cloud extraction from fitted assets.

use std::collections::HashMap;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::gaussian::sigmoid;
use crate::io::SceneAsset;
use crate::raster::Raster;
use crate::{Error, Result};

/// Finite, non-empty set of world-space points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Degenerate("empty point cloud".into()));
        }
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("point cloud".into()));
        }
        Ok(PointCloud { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Peak signal-to-noise ratio in dB over all pixels and channels, with
/// dynamic range 1. Identical inputs yield the +∞ sentinel.
pub fn psnr(a: &Raster, b: &Raster) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Mismatch(format!(
            "psnr shapes differ: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    let mut sum = 0.0;
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = x - y;
        sum += d * d;
    }
    let mse = sum / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * mse.log10())
}

/// Rec. 709 luma; SSIM of color images is computed on this plane.
fn luma(r: &Raster) -> Raster {
    let (w, h) = (r.width(), r.height());
    let mut out = Raster::new(w, h, 1);
    for p in 0..w * h {
        out.data_mut()[p] = 0.2126 * r.data()[3 * p]
            + 0.7152 * r.data()[3 * p + 1]
            + 0.0722 * r.data()[3 * p + 2];
    }
    out
}

const SSIM_WIN: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn ssim_kernel() -> [f64; SSIM_WIN] {
    let mut k = [0.0; SSIM_WIN];
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - (SSIM_WIN as f64 - 1.0) / 2.0;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Valid-mode separable convolution of a single-channel plane with the
/// normalized Gaussian window.
fn conv_valid(img: &[f64], w: usize, h: usize, k: &[f64; SSIM_WIN]) -> Vec<f64> {
    let ow = w - SSIM_WIN + 1;
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                s += kv * img[y * w + x + i];
            }
            horiz[y * ow + x] = s;
        }
    }
    let oh = h - SSIM_WIN + 1;
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                s += kv * horiz[(y + i) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    out
}

/// Mean local SSIM with an 11×11 Gaussian window (σ = 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1, evaluated on every fully interior window.
/// Color inputs are reduced to Rec. 709 luma first.
pub fn ssim(a: &Raster, b: &Raster) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Mismatch(format!(
            "ssim shapes differ: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    let (ga, gb) = match a.channels() {
        1 => (a.clone(), b.clone()),
        3 => (luma(a), luma(b)),
        c => return Err(Error::Mismatch(format!("ssim expects 1 or 3 channels, got {c}"))),
    };
    let (w, h) = (ga.width(), ga.height());
    if w < SSIM_WIN || h < SSIM_WIN {
        return Err(Error::Mismatch(format!(
            "ssim needs at least {SSIM_WIN}x{SSIM_WIN} pixels, got {w}x{h}"
        )));
    }
    let k = ssim_kernel();
    let xa = ga.data();
    let xb = gb.data();
    let sq = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| x * x).collect() };
    let prod: Vec<f64> = xa.iter().zip(xb).map(|(x, y)| x * y).collect();

    let mu_a = conv_valid(xa, w, h, &k);
    let mu_b = conv_valid(xb, w, h, &k);
    let mu_aa = conv_valid(&sq(xa), w, h, &k);
    let mu_bb = conv_valid(&sq(xb), w, h, &k);
    let mu_ab = conv_valid(&prod, w, h, &k);

    let mut sum = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = mu_aa[i] - ma * ma;
        let vb = mu_bb[i] - mb * mb;
        let cov = mu_ab[i] - ma * mb;
        sum += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    Ok(sum / mu_a.len() as f64)
}

/// Exact nearest-neighbor distances from every query to `targets`,
/// accelerated with a uniform spatial hash. Falls back to brute force
/// when the targets are few or degenerate in extent.
fn nearest_distances(queries: &[Vector3<f64>], targets: &[Vector3<f64>]) -> Vec<f64> {
    let brute = |q: &Vector3<f64>| -> f64 {
        targets
            .iter()
            .map(|t| (q - t).norm())
            .fold(f64::INFINITY, f64::min)
    };
    let mut lo = targets[0];
    let mut hi = targets[0];
    for t in targets {
        lo = lo.inf(t);
        hi = hi.sup(t);
    }
    let diag = (hi - lo).norm();
    let cell = diag / (targets.len() as f64).cbrt().max(1.0);
    if targets.len() < 32 || !(cell > 0.0) || !cell.is_finite() {
        return queries.par_iter().map(brute).collect();
    }

    let index = |p: &Vector3<f64>| -> (i64, i64, i64) {
        (
            ((p.x - lo.x) / cell).floor() as i64,
            ((p.y - lo.y) / cell).floor() as i64,
            ((p.z - lo.z) / cell).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
    for (i, t) in targets.iter().enumerate() {
        grid.entry(index(t)).or_default().push(i as u32);
    }
    let max_ring = {
        let a = index(&lo);
        let b = index(&hi);
        (b.0 - a.0).max(b.1 - a.1).max(b.2 - a.2).unsigned_abs() as i64 + 1
    };

    queries
        .par_iter()
        .map(|q| {
            let (cx, cy, cz) = index(q);
            let mut best = f64::INFINITY;
            for ring in 0..=max_ring {
                // Points in cells at Chebyshev ring r are at least
                // (r − 1)·cell away from q, so once best ≤ ring·cell no
                // farther ring can improve it.
                if best <= (ring - 1).max(0) as f64 * cell {
                    break;
                }
                let r = ring;
                for dx in -r..=r {
                    for dy in -r..=r {
                        for dz in -r..=r {
                            if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                                continue;
                            }
                            if let Some(ids) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                                for &i in ids {
                                    best = best.min((q - &targets[i as usize]).norm());
                                }
                            }
                        }
                    }
                }
            }
            if best.is_infinite() {
                brute(q)
            } else {
                best
            }
        })
        .collect()
}

/// Symmetric Chamfer distance: ½·(mean nearest-neighbor distance a→b +
/// mean b→a), plain Euclidean (non-squared), in world units.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Degenerate("chamfer on empty point cloud".into()));
    }
    let ab = nearest_distances(&a.points, &b.points);
    let ba = nearest_distances(&b.points, &a.points);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(0.5 * (mean(&ab) + mean(&ba)))
}

/// Harmonic mean of precision (fraction of `a` within τ of `b`) and
/// recall (fraction of `b` within τ of `a`); 0 when both vanish.
pub fn f_score(a: &PointCloud, b: &PointCloud, tau: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Degenerate("f-score on empty point cloud".into()));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Usage(format!("f-score threshold must be > 0, got {tau}")));
    }
    let frac = |d: &[f64]| d.iter().filter(|&&x| x <= tau).count() as f64 / d.len() as f64;
    let precision = frac(&nearest_distances(&a.points, &b.points));
    let recall = frac(&nearest_distances(&b.points, &a.points));
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Positions of primitives whose activated opacity reaches `opacity_min`.
pub fn extract_point_cloud(asset: &SceneAsset, opacity_min: f64) -> Result<PointCloud> {
    let points: Vec<Vector3<f64>> = asset
        .cloud
        .primitives
        .iter()
        .filter(|g| sigmoid(g.opacity_raw) >= opacity_min)
        .map(|g| g.position)
        .collect();
    if points.is_empty() {
        return Err(Error::Degenerate(format!(
            "no primitive reaches opacity {opacity_min}"
        )));
    }
    PointCloud::new(points)
}
