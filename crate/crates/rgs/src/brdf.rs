//! Simplified Disney BRDF: Lambertian diffuse plus a GGX specular lobe
//! with Schlick Fresnel and Smith separable masking (k = α/2).
//!
//! f = (1-m)·b/π + D(h; α=r²)·F(ω_o·h)·/ (4(n·ω_i)(n·ω_o) masking-folded)
//!
//! The Smith factor is folded into the visibility form
//! `Vis = 1 / (4·(ci(1-k)+k)·(co(1-k)+k))`, which equals G/(4·ci·co) and
//! never divides by a raw cosine, so grazing directions stay finite: both
//! denominator factors are clamped at 1e-6.
//!
//! Every partial derivative the optimizer needs is computed analytically
//! in [`brdf_eval_grad`] and validated against finite differences in the
//! tests. Gradients treat `n` and `ω_o` as free 3-vectors; callers chain
//! through their own normalizations.

use nalgebra::Vector3;

use crate::gaussian::ActivatedGaussian;

/// Floor for the squared-roughness GGX parameter; r = 0 stays finite.
const ALPHA_MIN: f64 = 1e-4;
/// Floor for the two Smith visibility denominator factors.
const VIS_MIN: f64 = 1e-6;

/// Material view of a primitive, the BRDF's parameter block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrdfParams {
    pub normal: Vector3<f64>,
    pub albedo: Vector3<f64>,
    pub roughness: f64,
    pub metallic: f64,
}

impl From<&ActivatedGaussian> for BrdfParams {
    fn from(g: &ActivatedGaussian) -> Self {
        BrdfParams {
            normal: g.normal,
            albedo: g.albedo,
            roughness: g.roughness,
            metallic: g.metallic,
        }
    }
}

/// Term selection: `DiffuseOnly` drops the specular lobe. Used by the
/// white-furnace closure test and available as a render option.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BrdfMode {
    #[default]
    Full,
    DiffuseOnly,
}

/// Evaluates the BRDF for incident `wi` and outgoing `wo`, both unit and
/// in the upper hemisphere of `p.normal`.
pub fn brdf_eval(p: &BrdfParams, wi: &Vector3<f64>, wo: &Vector3<f64>, mode: BrdfMode) -> Vector3<f64> {
    let diffuse = p.albedo * ((1.0 - p.metallic) / std::f64::consts::PI);
    if mode == BrdfMode::DiffuseOnly {
        return diffuse;
    }
    let spec = specular(p, wi, wo);
    diffuse + spec.value()
}

struct Specular {
    d: f64,
    vis: f64,
    fresnel: Vector3<f64>,
}

impl Specular {
    fn value(&self) -> Vector3<f64> {
        self.fresnel * (self.d * self.vis)
    }
}

struct SpecularGeom {
    h: Vector3<f64>,
    hlen: f64,
    nh: f64,
    oh: f64,
    ci: f64,
    co: f64,
}

fn half_vector(n: &Vector3<f64>, wi: &Vector3<f64>, wo: &Vector3<f64>) -> SpecularGeom {
    let s = wi + wo;
    let hlen = s.norm().max(1e-8);
    let h = s / hlen;
    SpecularGeom {
        h,
        hlen,
        nh: n.dot(&h),
        oh: wo.dot(&h),
        ci: n.dot(wi),
        co: n.dot(wo),
    }
}

fn specular(p: &BrdfParams, wi: &Vector3<f64>, wo: &Vector3<f64>) -> Specular {
    let g = half_vector(&p.normal, wi, wo);
    let alpha = (p.roughness * p.roughness).max(ALPHA_MIN);
    let q = g.nh * g.nh * (alpha * alpha - 1.0) + 1.0;
    let d = alpha * alpha / (std::f64::consts::PI * q * q);
    let k = alpha / 2.0;
    let di = (g.ci * (1.0 - k) + k).max(VIS_MIN);
    let do_ = (g.co * (1.0 - k) + k).max(VIS_MIN);
    let vis = 1.0 / (4.0 * di * do_);
    let f0 = Vector3::repeat(0.04 * (1.0 - p.metallic)) + p.albedo * p.metallic;
    let fw = (1.0 - g.oh).clamp(0.0, 1.0).powi(5);
    let fresnel = f0 + (Vector3::repeat(1.0) - f0) * fw;
    Specular { d, vis, fresnel }
}

/// Analytic partials of [`brdf_eval`].
///
/// `d_albedo`, `d_roughness`, `d_metallic` are per-channel scalars
/// (albedo channels never mix). `d_normal[ch]` / `d_wo[ch]` are the
/// gradient 3-vectors of channel `ch`.
#[derive(Debug, Clone, Default)]
pub struct BrdfGrads {
    pub d_albedo: Vector3<f64>,
    pub d_roughness: Vector3<f64>,
    pub d_metallic: Vector3<f64>,
    pub d_normal: [Vector3<f64>; 3],
    pub d_wo: [Vector3<f64>; 3],
}

pub fn brdf_eval_grad(
    p: &BrdfParams,
    wi: &Vector3<f64>,
    wo: &Vector3<f64>,
    mode: BrdfMode,
) -> (Vector3<f64>, BrdfGrads) {
    let inv_pi = 1.0 / std::f64::consts::PI;
    let diffuse = p.albedo * ((1.0 - p.metallic) * inv_pi);
    let mut grads = BrdfGrads {
        d_albedo: Vector3::repeat((1.0 - p.metallic) * inv_pi),
        d_metallic: p.albedo * (-inv_pi),
        ..Default::default()
    };
    if mode == BrdfMode::DiffuseOnly {
        return (diffuse, grads);
    }

    let g = half_vector(&p.normal, wi, wo);
    let alpha = (p.roughness * p.roughness).max(ALPHA_MIN);
    let q = g.nh * g.nh * (alpha * alpha - 1.0) + 1.0;
    let d = alpha * alpha / (std::f64::consts::PI * q * q);
    let k = alpha / 2.0;
    let di_raw = g.ci * (1.0 - k) + k;
    let do_raw = g.co * (1.0 - k) + k;
    let di = di_raw.max(VIS_MIN);
    let do_ = do_raw.max(VIS_MIN);
    let vis = 1.0 / (4.0 * di * do_);
    let f0 = Vector3::repeat(0.04 * (1.0 - p.metallic)) + p.albedo * p.metallic;
    let u = (1.0 - g.oh).clamp(0.0, 1.0);
    let fw = u.powi(5);
    let fresnel = f0 + (Vector3::repeat(1.0) - f0) * fw;
    let dv = d * vis;
    let value = diffuse + fresnel * dv;

    // Clamped factors contribute zero derivative.
    let di_active = if di_raw > VIS_MIN { 1.0 } else { 0.0 };
    let do_active = if do_raw > VIS_MIN { 1.0 } else { 0.0 };
    let alpha_active = if p.roughness * p.roughness > ALPHA_MIN {
        1.0
    } else {
        0.0
    };

    // Roughness path: through α in D and in k.
    let dd_dalpha = 2.0 * alpha / (std::f64::consts::PI * q * q * q) * (q - 2.0 * alpha * alpha * g.nh * g.nh);
    let dvis_dk = -vis * (di_active * (1.0 - g.ci) / di + do_active * (1.0 - g.co) / do_);
    let dvis_dalpha = dvis_dk * 0.5;
    let ddv_dr = (dd_dalpha * vis + d * dvis_dalpha) * 2.0 * p.roughness * alpha_active;
    grads.d_roughness = fresnel * ddv_dr;

    // Albedo and metallic pick up the Fresnel term.
    let one_minus_fw = 1.0 - fw;
    for ch in 0..3 {
        grads.d_albedo[ch] += dv * one_minus_fw * p.metallic;
        grads.d_metallic[ch] += dv * one_minus_fw * (p.albedo[ch] - 0.04);
    }

    // Normal path: nh, ci, co all depend on n; h does not.
    let dd_dnh = -4.0 * alpha * alpha * g.nh * (alpha * alpha - 1.0)
        / (std::f64::consts::PI * q * q * q);
    let dvis_dci = -vis * (1.0 - k) / di * di_active;
    let dvis_dco = -vis * (1.0 - k) / do_ * do_active;
    let grad_n_dv = g.h * (dd_dnh * vis) + (wi * dvis_dci + wo * dvis_dco) * d;
    for ch in 0..3 {
        grads.d_normal[ch] = grad_n_dv * fresnel[ch];
    }

    // Outgoing-direction path: h and co move with wo.
    // dh/dwo = (I - h hᵀ)/|wi+wo|.
    let grad_nh_wo = (p.normal - g.h * g.nh) / g.hlen;
    let grad_oh_wo = g.h + (wo - g.h * g.oh) / g.hlen;
    let grad_wo_dv = grad_nh_wo * (dd_dnh * vis) + p.normal * (dvis_dco * d);
    let fw_active = if (1.0 - g.oh) > 0.0 && (1.0 - g.oh) < 1.0 { 1.0 } else { 0.0 };
    let dfw_doh = -5.0 * u.powi(4) * fw_active;
    for ch in 0..3 {
        let dfres_doh = (1.0 - f0[ch]) * dfw_doh;
        grads.d_wo[ch] = grad_wo_dv * fresnel[ch] + grad_oh_wo * (dv * dfres_doh);
    }

    (value, grads)
}
