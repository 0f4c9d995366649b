//! Real spherical harmonics (bands 0..3), SH lighting environments, and
//! equirectangular environment maps.
//!
//! The basis is the orthonormal real convention used in graphics (no
//! Condon-Shortley phase): integrating `Y_i * Y_j` over the sphere gives
//! the identity. Coefficient order is (l,m) = (0,0), (1,-1), (1,0),
//! (1,1), (2,-2) ... (3,3).

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::raster::Raster;
use crate::{Error, Result};

/// Number of SH basis functions for bands 0..3.
pub const SH_COUNT: usize = 16;

/// Basis values for a direction assumed unit length.
pub(crate) fn sh_basis_unit(d: &Vector3<f64>) -> [f64; SH_COUNT] {
    let (x, y, z) = (d.x, d.y, d.z);
    [
        0.28209479177387814,
        0.4886025119029199 * y,
        0.4886025119029199 * z,
        0.4886025119029199 * x,
        1.0925484305920792 * x * y,
        1.0925484305920792 * y * z,
        0.31539156525252005 * (3.0 * z * z - 1.0),
        1.0925484305920792 * x * z,
        0.5462742152960396 * (x * x - y * y),
        0.5900435899266435 * y * (3.0 * x * x - y * y),
        2.890611442640554 * x * y * z,
        0.4570457994644658 * y * (5.0 * z * z - 1.0),
        0.3731763325901154 * z * (5.0 * z * z - 3.0),
        0.4570457994644658 * x * (5.0 * z * z - 1.0),
        1.445305721320277 * z * (x * x - y * y),
        0.5900435899266435 * x * (x * x - 3.0 * y * y),
    ]
}

/// Real SH basis for bands 0..3, rejecting directions whose norm strays
/// from 1 by more than 1e-4. The direction is renormalized before
/// evaluation so the tolerance does not leak into the values.
pub fn sh_basis(direction: &Vector3<f64>) -> Result<[f64; SH_COUNT]> {
    let n = direction.norm();
    if !n.is_finite() || (n - 1.0).abs() > 1e-4 {
        return Err(Error::Degenerate(format!(
            "sh_basis needs a unit direction, got norm {n:.6}"
        )));
    }
    Ok(sh_basis_unit(&(direction / n)))
}

/// Global illumination as 16 RGB spherical-harmonic coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SHLighting {
    pub coeffs: [[f64; 3]; SH_COUNT],
}

impl SHLighting {
    pub fn zeros() -> Self {
        SHLighting {
            coeffs: [[0.0; 3]; SH_COUNT],
        }
    }

    /// Lighting whose incident radiance is `value` in every direction:
    /// DC coefficient `value * 2√π`, all others zero.
    pub fn uniform(value: [f64; 3]) -> Self {
        let mut l = SHLighting::zeros();
        let dc = 2.0 * PI.sqrt();
        for ch in 0..3 {
            l.coeffs[0][ch] = value[ch] * dc;
        }
        l
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().flatten().all(|v| v.is_finite())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::NonFinite("SH lighting coefficients".into()));
        }
        Ok(())
    }

    /// Raw band-limited radiance, no clamp. Direction must be unit.
    pub fn evaluate_unclamped(&self, direction: &Vector3<f64>) -> Vector3<f64> {
        let basis = sh_basis_unit(direction);
        let mut out = Vector3::zeros();
        for (k, b) in basis.iter().enumerate() {
            out.x += self.coeffs[k][0] * b;
            out.y += self.coeffs[k][1] * b;
            out.z += self.coeffs[k][2] * b;
        }
        out
    }

    /// Incident radiance used for shading: SH evaluation clamped at 0
    /// per channel. Direction must be unit.
    pub fn incident_radiance(&self, direction: &Vector3<f64>) -> Vector3<f64> {
        self.evaluate_unclamped(direction).map(|v| v.max(0.0))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for row in out.coeffs.iter_mut() {
            for v in row.iter_mut() {
                *v *= factor;
            }
        }
        out
    }
}

/// Equirectangular radiance panorama. Row maps to the polar angle
/// θ ∈ [0, π] measured from +z, column to azimuth φ = atan2(y, x)
/// wrapped into [0, 2π).
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentMap {
    raster: Raster,
}

impl EnvironmentMap {
    /// Wraps a 3-channel raster, rejecting NaN/Inf and negative radiance.
    pub fn new(raster: Raster) -> Result<Self> {
        if raster.channels() != 3 {
            return Err(Error::Mismatch(format!(
                "environment map needs 3 channels, got {}",
                raster.channels()
            )));
        }
        if raster.width() == 0 || raster.height() == 0 {
            return Err(Error::Degenerate("empty environment map".into()));
        }
        if !raster.is_finite() {
            return Err(Error::NonFinite("environment map radiance".into()));
        }
        if raster.data().iter().any(|&v| v < 0.0) {
            return Err(Error::Degenerate("negative radiance in environment map".into()));
        }
        Ok(EnvironmentMap { raster })
    }

    pub fn constant(width: usize, height: usize, value: [f64; 3]) -> Self {
        EnvironmentMap {
            raster: Raster::splat_pixel(width, height, &value),
        }
    }

    pub fn width(&self) -> usize {
        self.raster.width()
    }

    pub fn height(&self) -> usize {
        self.raster.height()
    }

    pub fn raster(&self) -> &Raster {
        &self.raster
    }

    /// Unit direction through the center of pixel `(x, y)`.
    pub fn pixel_to_direction(&self, x: usize, y: usize) -> Vector3<f64> {
        let theta = (y as f64 + 0.5) / self.height() as f64 * PI;
        let phi = (x as f64 + 0.5) / self.width() as f64 * 2.0 * PI;
        Vector3::new(
            theta.sin() * phi.cos(),
            theta.sin() * phi.sin(),
            theta.cos(),
        )
    }

    /// Nearest-neighbor pixel for a unit direction.
    pub fn direction_to_pixel(&self, d: &Vector3<f64>) -> (usize, usize) {
        let theta = d.z.clamp(-1.0, 1.0).acos();
        let mut phi = d.y.atan2(d.x);
        if phi < 0.0 {
            phi += 2.0 * PI;
        }
        let x = ((phi / (2.0 * PI)) * self.width() as f64) as usize;
        let y = ((theta / PI) * self.height() as f64) as usize;
        (x.min(self.width() - 1), y.min(self.height() - 1))
    }

    /// Nearest-neighbor radiance lookup.
    pub fn sample(&self, d: &Vector3<f64>) -> Vector3<f64> {
        let (x, y) = self.direction_to_pixel(d);
        let p = self.raster.pixel(x, y);
        Vector3::new(p[0], p[1], p[2])
    }
}

/// Samples per parallel accumulation block. Blocks are reduced in index
/// order, so results are independent of the worker count.
const PROJECT_CHUNK: usize = 1 << 16;

/// Monte-Carlo projection of an environment map onto SH bands 0..3:
/// `L[k][ch] = (4π/N) Σ radiance(d_j) · Y_k(d_j)` over `N` uniform sphere
/// directions drawn from `seed`. Deterministic for a fixed seed.
pub fn project_envmap_to_sh(env: &EnvironmentMap, sample_count: usize, seed: u64) -> Result<SHLighting> {
    if sample_count < 10_000 {
        return Err(Error::Usage(format!(
            "environment projection needs at least 1e4 samples, got {sample_count}"
        )));
    }
    let chunks = sample_count.div_ceil(PROJECT_CHUNK);
    let partials: Vec<[[f64; 3]; SH_COUNT]> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            let lo = chunk * PROJECT_CHUNK;
            let hi = (lo + PROJECT_CHUNK).min(sample_count);
            let mut acc = [[0.0; 3]; SH_COUNT];
            for _ in lo..hi {
                let z = 1.0 - 2.0 * rng.random::<f64>();
                let phi = 2.0 * PI * rng.random::<f64>();
                let r = (1.0 - z * z).max(0.0).sqrt();
                let d = Vector3::new(r * phi.cos(), r * phi.sin(), z);
                let rad = env.sample(&d);
                let basis = sh_basis_unit(&d);
                for (k, b) in basis.iter().enumerate() {
                    acc[k][0] += rad.x * b;
                    acc[k][1] += rad.y * b;
                    acc[k][2] += rad.z * b;
                }
            }
            acc
        })
        .collect();

    let mut coeffs = [[0.0; 3]; SH_COUNT];
    for acc in partials {
        for k in 0..SH_COUNT {
            for ch in 0..3 {
                coeffs[k][ch] += acc[k][ch];
            }
        }
    }
    let scale = 4.0 * PI / sample_count as f64;
    for row in coeffs.iter_mut() {
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    Ok(SHLighting { coeffs })
}
