//! Physically based shading of primitives against SH lighting.
//!
//! The rendering-equation integral over the hemisphere is estimated with
//! a deterministic spherical Fibonacci lattice:
//!
//! c̃ = (2π/M) Σ_j f_r(ω_j, ω_o) · L(ω_j) · (ω_j·n),   visibility ≡ 1.
//!
//! The 2π factor is the reciprocal of the uniform hemisphere pdf; with it
//! a Lambertian surface under uniform unit radiance integrates to its
//! albedo (the white-furnace closure the tests pin down).

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::brdf::{brdf_eval, brdf_eval_grad, BrdfMode, BrdfParams};
use crate::camera::Camera;
use crate::gaussian::{ActivatedGaussian, GaussianCloud};
use crate::io::SceneAsset;
use crate::raster::{Raster, RenderOutput};
use crate::sh::{sh_basis_unit, SHLighting, SH_COUNT};
use crate::splat::{rasterize, PrimitiveChannels, RasterScene, RasterSettings};
use crate::{Error, Result};

/// Deterministic quadrature directions in the hemisphere around a normal.
#[derive(Debug, Clone, PartialEq)]
pub struct HemisphereSamples {
    pub directions: Vec<Vector3<f64>>,
    pub sample_count: usize,
}

/// Rotation taking +z to `n` by the shortest arc; `n` within 1e-4 of unit.
/// Antipodal `n` falls back to a 180° turn about x.
fn rotation_z_to(n: &Vector3<f64>) -> Matrix3<f64> {
    let c = n.z;
    if c < -1.0 + 1e-12 {
        return Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
    }
    let a = Vector3::new(-n.y, n.x, 0.0); // z × n
    let cross = Matrix3::new(0.0, 0.0, a.y, 0.0, 0.0, -a.x, -a.y, a.x, 0.0);
    Matrix3::identity() + cross + cross * cross / (1.0 + c)
}

/// Spherical Fibonacci lattice of `m` points on the upper hemisphere,
/// rotated so the pole aligns with `n`. `z_i = 1 - i/m` keeps every
/// sample strictly above the horizon; `m = 1` returns exactly `n`.
pub fn fibonacci_hemisphere(n: &Vector3<f64>, m: usize) -> Result<HemisphereSamples> {
    if m == 0 {
        return Err(Error::Usage("hemisphere sample count must be at least 1".into()));
    }
    let norm = n.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > 1e-4 {
        return Err(Error::Degenerate(format!(
            "hemisphere normal must be unit, got norm {norm:.6}"
        )));
    }
    let rot = rotation_z_to(&(n / norm));
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    let mut directions = Vec::with_capacity(m);
    for i in 0..m {
        let z = 1.0 - i as f64 / m as f64;
        let r = (1.0 - z * z).max(0.0).sqrt();
        let phi = golden * i as f64;
        let local = Vector3::new(r * phi.cos(), r * phi.sin(), z);
        directions.push(rot * local);
    }
    Ok(HemisphereSamples {
        directions,
        sample_count: m,
    })
}

/// Flips the shading normal toward the viewer for back-facing primitives.
/// Returns the effective normal and the sign applied (for gradients).
fn effective_normal(n: &Vector3<f64>, wo: &Vector3<f64>) -> (Vector3<f64>, f64) {
    if wo.dot(n) <= 0.0 {
        (-n, -1.0)
    } else {
        (*n, 1.0)
    }
}

/// Shading color of one primitive for outgoing direction `wo` (unit,
/// surface toward camera), with `samples` quadrature directions.
pub fn shade_primitive(
    g: &ActivatedGaussian,
    light: &SHLighting,
    wo: &Vector3<f64>,
    samples: usize,
    mode: BrdfMode,
) -> Result<Vector3<f64>> {
    let (n_eff, _) = effective_normal(&g.normal, wo);
    let hemi = fibonacci_hemisphere(&n_eff, samples)?;
    let params = BrdfParams {
        normal: n_eff,
        albedo: g.albedo,
        roughness: g.roughness,
        metallic: g.metallic,
    };
    let mut acc = Vector3::zeros();
    for d in &hemi.directions {
        let radiance = light.incident_radiance(d);
        if radiance == Vector3::zeros() {
            continue;
        }
        let f = brdf_eval(&params, d, wo, mode);
        let cos = d.dot(&n_eff);
        acc += f.component_mul(&radiance) * cos;
    }
    Ok(acc * (2.0 * std::f64::consts::PI / samples as f64))
}

/// Gradients of `upstream · shade_primitive` with respect to the
/// primitive's shading parameters, the lighting, and `wo`.
///
/// Sample directions are treated as constants with respect to the normal
/// (the lattice-rotation derivative is dropped); finite differences on
/// the raw normal therefore agree only to a few percent, while all other
/// parameters match tightly. The back-face flip and the radiance clamp
/// are treated as locally constant branches.
#[derive(Debug, Clone)]
pub struct ShadeGrads {
    pub d_normal: Vector3<f64>,
    pub d_albedo: Vector3<f64>,
    pub d_roughness: f64,
    pub d_metallic: f64,
    pub d_wo: Vector3<f64>,
    pub d_sh: [[f64; 3]; SH_COUNT],
}

pub fn shade_primitive_grad(
    g: &ActivatedGaussian,
    light: &SHLighting,
    wo: &Vector3<f64>,
    samples: usize,
    mode: BrdfMode,
    upstream: &Vector3<f64>,
) -> Result<(Vector3<f64>, ShadeGrads)> {
    let (n_eff, flip) = effective_normal(&g.normal, wo);
    let hemi = fibonacci_hemisphere(&n_eff, samples)?;
    let params = BrdfParams {
        normal: n_eff,
        albedo: g.albedo,
        roughness: g.roughness,
        metallic: g.metallic,
    };
    let scale = 2.0 * std::f64::consts::PI / samples as f64;

    let mut value = Vector3::zeros();
    let mut d_normal_eff = Vector3::zeros();
    let mut d_albedo = Vector3::zeros();
    let mut d_roughness = 0.0;
    let mut d_metallic = 0.0;
    let mut d_wo = Vector3::zeros();
    let mut d_sh = [[0.0; 3]; SH_COUNT];

    for d in &hemi.directions {
        let basis = sh_basis_unit(d);
        let raw = light.evaluate_unclamped(d);
        let radiance = raw.map(|v| v.max(0.0));
        let cos = d.dot(&n_eff);
        let (f, fg) = brdf_eval_grad(&params, d, wo, mode);
        value += f.component_mul(&radiance) * cos;

        for ch in 0..3 {
            let w = upstream[ch] * scale;
            if w == 0.0 {
                continue;
            }
            let lr = radiance[ch];
            // Parameter paths through the BRDF value.
            d_albedo[ch] += w * fg.d_albedo[ch] * lr * cos;
            d_roughness += w * fg.d_roughness[ch] * lr * cos;
            d_metallic += w * fg.d_metallic[ch] * lr * cos;
            d_normal_eff += (fg.d_normal[ch] * cos + d * f[ch]) * (w * lr);
            d_wo += fg.d_wo[ch] * (w * lr * cos);
            // Lighting path, masked by the radiance clamp.
            if raw[ch] > 0.0 {
                let fc = w * f[ch] * cos;
                for (k, b) in basis.iter().enumerate() {
                    d_sh[k][ch] += fc * b;
                }
            }
        }
    }

    let grads = ShadeGrads {
        d_normal: d_normal_eff * flip,
        d_albedo,
        d_roughness,
        d_metallic,
        d_wo,
        d_sh,
    };
    Ok((value * scale, grads))
}

/// Shaded color of every primitive for one camera, ω_o pointing from the
/// primitive toward the camera center. Parallel over primitives; results
/// keep cloud order, so output is identical for any worker count.
pub fn shade_cloud(
    acts: &[ActivatedGaussian],
    light: &SHLighting,
    cam: &Camera,
    samples: usize,
    mode: BrdfMode,
) -> Result<Vec<Vector3<f64>>> {
    let center = cam.center();
    let shaded: Vec<Result<Vector3<f64>>> = acts
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let to_cam = center - g.position;
            let norm = to_cam.norm();
            if norm < 1e-9 {
                return Err(Error::Degenerate(format!(
                    "primitive {i} coincides with the camera center"
                )));
            }
            shade_primitive(g, light, &(to_cam / norm), samples, mode)
        })
        .collect();
    shaded.into_iter().collect()
}

/// Rasterizes every attribute map with the PBR channel shaded under
/// `light`: the one-stop render for supervision and output.
pub fn render_all(
    cloud: &GaussianCloud,
    light: &SHLighting,
    cam: &Camera,
    samples: usize,
    settings: &RasterSettings,
) -> Result<RenderOutput> {
    let acts = cloud.activate()?;
    let pbr = shade_cloud(&acts, light, cam, samples, BrdfMode::Full)?;
    let channels = PrimitiveChannels::from_activated(&acts, pbr)?;
    rasterize(cloud, &channels, cam, settings)
}

/// The physically based image C̃ alone, skipping the other attribute maps.
pub fn render_pbr(
    cloud: &GaussianCloud,
    light: &SHLighting,
    cam: &Camera,
    samples: usize,
    settings: &RasterSettings,
) -> Result<Raster> {
    let acts = cloud.activate()?;
    let pbr = shade_cloud(&acts, light, cam, samples, BrdfMode::Full)?;
    RasterScene::prepare(cloud, cam, settings)?.forward_pbr_only(&pbr)
}

/// Re-renders a fitted asset under substituted lighting. Geometry and
/// materials are untouched; with the asset's own lighting this reproduces
/// [`render_pbr`] exactly.
pub fn relight(
    asset: &SceneAsset,
    light_new: &SHLighting,
    cam: &Camera,
    samples: usize,
    settings: &RasterSettings,
) -> Result<Raster> {
    render_pbr(&asset.cloud, light_new, cam, samples, settings)
}
