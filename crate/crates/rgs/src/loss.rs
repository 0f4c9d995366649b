//! Training losses and total-gradient assembly.
//!
//! The objective is a weighted sum of five terms:
//!
//! * image: masked MSE between the rasterized color attribute map C and
//!   the ground truth Ĉ,
//! * pbr: the same against the physically based render C̃,
//! * material: masked MSE of albedo/roughness/metallic maps against
//!   ground-truth maps when supervision exists,
//! * consistency: MSE between the rendered normal map N and the detached
//!   target Ñ·A on pixels with accumulated alpha A > 0.5,
//! * smooth: edge-aware first-difference smoothness of the material maps,
//!   weighted by exp(-|∇Ĉ|).
//!
//! Conventions, pinned by tests: image/pbr/material MSEs average over
//! masked pixels and channels; the consistency term averages the per-pixel
//! squared L2 norm (sum over the 3 components) over gated pixels; smooth
//! averages over all W·H pixels. Ground truth images are alpha-composited
//! over black, and renders are compared as produced (the blend over a
//! black background), so no alpha path carries gradients.
//!
//! [`loss_total`] renders every supervision view, differentiates the sum
//! through the rasterizer and the shading quadrature, and returns one
//! [`ParamGrads`] per raw parameter group plus the SH lighting gradient.
//! The consistency target is rebuilt from the current geometry each call
//! and treated as a constant; [`loss_total_frozen`] accepts the targets
//! explicitly so a finite-difference probe can hold them fixed.

use nalgebra::{Vector3, Vector4};
use rayon::prelude::*;

use crate::brdf::BrdfMode;
use crate::camera::Camera;
use crate::gaussian::{d_normalize3, GaussianCloud};
use crate::raster::{Raster, RenderOutput};
use crate::sh::{SHLighting, SH_COUNT};
use crate::shading::{shade_cloud, shade_primitive_grad};
use crate::splat::{pseudo_normal, PrimitiveChannels, RasterScene, RasterSettings};
use crate::{Error, Result};

/// λ1..λ5 of the total objective. All finite and non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub image: f64,
    pub pbr: f64,
    pub material: f64,
    pub consistency: f64,
    pub smooth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            image: 1.0,
            pbr: 1.0,
            material: 1.0,
            consistency: 0.1,
            smooth: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.image, self.pbr, self.material, self.consistency, self.smooth];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Usage(format!("loss weights must be finite and >= 0, got {all:?}")));
        }
        Ok(())
    }
}

/// Ground-truth material maps: 3-channel albedo, 1-channel roughness and
/// metallic, all at the view resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialGt {
    pub albedo: Raster,
    pub roughness: Raster,
    pub metallic: Raster,
}

/// One posed training view. `image` is Ĉ composited over black; `mask`
/// selects foreground pixels for the image/material terms.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionView {
    pub camera: Camera,
    pub image: Raster,
    pub mask: Vec<bool>,
    pub materials: Option<MaterialGt>,
}

impl SupervisionView {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.camera.width(), self.camera.height());
        self.image.expect_shape(w, h, 3)?;
        if self.mask.len() != w * h {
            return Err(Error::Mismatch(format!(
                "mask has {} entries for a {w}x{h} view",
                self.mask.len()
            )));
        }
        if let Some(m) = &self.materials {
            m.albedo.expect_shape(w, h, 3)?;
            m.roughness.expect_shape(w, h, 1)?;
            m.metallic.expect_shape(w, h, 1)?;
        }
        Ok(())
    }
}

/// Masked mean squared error over pixels and channels; the gradient of
/// `grad_weight · value` is added to `acc` when provided.
fn masked_mse_impl(
    pred: &Raster,
    gt: &Raster,
    mask: &[bool],
    grad_weight: f64,
    mut acc: Option<&mut Raster>,
) -> Result<f64> {
    if !pred.same_shape(gt) {
        return Err(Error::Mismatch(format!(
            "mse shapes differ: {}x{}x{} vs {}x{}x{}",
            pred.width(),
            pred.height(),
            pred.channels(),
            gt.width(),
            gt.height(),
            gt.channels()
        )));
    }
    let pixels = pred.width() * pred.height();
    if mask.len() != pixels {
        return Err(Error::Mismatch(format!(
            "mask has {} entries for {} pixels",
            mask.len(),
            pixels
        )));
    }
    let selected = mask.iter().filter(|&&m| m).count();
    if selected == 0 {
        return Ok(0.0);
    }
    let c = pred.channels();
    let denom = (selected * c) as f64;
    let mut sum = 0.0;
    for (p, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        for ch in 0..c {
            let d = pred.data()[p * c + ch] - gt.data()[p * c + ch];
            sum += d * d;
            if let Some(acc) = acc.as_deref_mut() {
                acc.data_mut()[p * c + ch] += grad_weight * 2.0 * d / denom;
            }
        }
    }
    Ok(sum / denom)
}

/// λ1 term: rasterized color attribute map vs. ground truth.
pub fn loss_image(pred: &Raster, gt: &Raster, mask: &[bool]) -> Result<f64> {
    masked_mse_impl(pred, gt, mask, 0.0, None)
}

/// λ2 term: physically based render vs. the same ground truth.
pub fn loss_pbr(pred: &Raster, gt: &Raster, mask: &[bool]) -> Result<f64> {
    masked_mse_impl(pred, gt, mask, 0.0, None)
}

/// Detached supervision for the consistency term: the pseudo-normal map
/// scaled by accumulated alpha, and the A > 0.5 pixel gate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyTarget {
    pub target: Raster,
    pub gate: Vec<bool>,
}

fn target_from_maps(pseudo: &Raster, alpha: &Raster) -> Result<ConsistencyTarget> {
    let (w, h) = (alpha.width(), alpha.height());
    pseudo.expect_shape(w, h, 3)?;
    alpha.expect_shape(w, h, 1)?;
    let mut target = Raster::new(w, h, 3);
    let mut gate = vec![false; w * h];
    for p in 0..w * h {
        let a = alpha.data()[p];
        gate[p] = a > 0.5;
        for ch in 0..3 {
            target.data_mut()[3 * p + ch] = pseudo.data()[3 * p + ch] * a;
        }
    }
    Ok(ConsistencyTarget { target, gate })
}

/// Builds the detached consistency target for one rendered view.
pub fn consistency_target(depth: &Raster, alpha: &Raster, cam: &Camera) -> Result<ConsistencyTarget> {
    let pseudo = pseudo_normal(depth, alpha, cam)?;
    target_from_maps(&pseudo, alpha)
}

fn consistency_impl(
    normal: &Raster,
    t: &ConsistencyTarget,
    grad_weight: f64,
    mut acc: Option<&mut Raster>,
) -> Result<f64> {
    normal.expect_shape(t.target.width(), t.target.height(), 3)?;
    let selected = t.gate.iter().filter(|&&g| g).count();
    if selected == 0 {
        return Ok(0.0);
    }
    let denom = selected as f64;
    let mut sum = 0.0;
    for (p, &g) in t.gate.iter().enumerate() {
        if !g {
            continue;
        }
        for ch in 0..3 {
            let d = normal.data()[3 * p + ch] - t.target.data()[3 * p + ch];
            sum += d * d;
            if let Some(acc) = acc.as_deref_mut() {
                acc.data_mut()[3 * p + ch] += grad_weight * 2.0 * d / denom;
            }
        }
    }
    Ok(sum / denom)
}

/// λ4 term in its free-standing form: mean over pixels with `alpha > 0.5`
/// of ‖N − Ñ·A‖². The target (including the alpha scaling and the gate)
/// is supervision, not a gradient path.
pub fn loss_consistency(normal: &Raster, pseudo: &Raster, alpha: &Raster) -> Result<f64> {
    consistency_impl(normal, &target_from_maps(pseudo, alpha)?, 0.0, None)
}

fn material_impl(
    albedo: &Raster,
    roughness: &Raster,
    metallic: &Raster,
    gt: Option<&MaterialGt>,
    mask: &[bool],
    grad_weight: f64,
    accs: Option<(&mut Raster, &mut Raster, &mut Raster)>,
) -> Result<(f64, bool)> {
    let Some(gt) = gt else {
        return Ok((0.0, false));
    };
    let (mut aa, mut ar, mut am) = match accs {
        Some((a, r, m)) => (Some(a), Some(r), Some(m)),
        None => (None, None, None),
    };
    let v = masked_mse_impl(albedo, &gt.albedo, mask, grad_weight, aa.take())?
        + masked_mse_impl(roughness, &gt.roughness, mask, grad_weight, ar.take())?
        + masked_mse_impl(metallic, &gt.metallic, mask, grad_weight, am.take())?;
    Ok((v, true))
}

/// λ3 term: sum of masked per-map MSEs. The flag is false when no
/// supervision exists (ablation mode) and the value is exactly 0.
pub fn loss_material(
    albedo: &Raster,
    roughness: &Raster,
    metallic: &Raster,
    gt: Option<&MaterialGt>,
    mask: &[bool],
) -> Result<(f64, bool)> {
    material_impl(albedo, roughness, metallic, gt, mask, 0.0, None)
}

fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One map's contribution to the smooth term: Σ over forward differences
/// of the channel-mean |∇map|, each weighted by exp(-channel-mean |∇Ĉ|).
/// Returns the unnormalized sum; the caller divides by W·H.
fn smooth_one_map(
    map: &Raster,
    image: &Raster,
    grad_scale: f64,
    mut acc: Option<&mut Raster>,
) -> f64 {
    let (w, h, c) = (map.width(), map.height(), map.channels());
    let ic = image.channels();
    let cf = c as f64;
    let mut sum = 0.0;
    let mut edge = |pa: usize, pb: usize| {
        let mut idiff = 0.0;
        for ch in 0..ic {
            idiff += (image.data()[pb * ic + ch] - image.data()[pa * ic + ch]).abs();
        }
        let weight = (-(idiff / ic as f64)).exp();
        let mut mdiff = 0.0;
        for ch in 0..c {
            let d = map.data()[pb * c + ch] - map.data()[pa * c + ch];
            mdiff += d.abs();
            if let Some(acc) = acc.as_deref_mut() {
                let g = grad_scale * weight * sign(d) / cf;
                acc.data_mut()[pb * c + ch] += g;
                acc.data_mut()[pa * c + ch] -= g;
            }
        }
        sum += weight * mdiff / cf;
    };
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if x + 1 < w {
                edge(p, p + 1);
            }
            if y + 1 < h {
                edge(p, p + w);
            }
        }
    }
    sum
}

/// λ5 term: bilateral first-difference smoothness of the three material
/// maps, averaged over all W·H pixels. Constant maps cost exactly 0;
/// steps coinciding with strong image edges are suppressed by the
/// exp(-|∇Ĉ|) factor (Ĉ is linear radiance, so a large step can drive
/// the weight to ~0).
pub fn loss_smooth(albedo: &Raster, roughness: &Raster, metallic: &Raster, image: &Raster) -> Result<f64> {
    let (w, h) = (image.width(), image.height());
    albedo.expect_shape(w, h, 3)?;
    roughness.expect_shape(w, h, 1)?;
    metallic.expect_shape(w, h, 1)?;
    image.expect_shape(w, h, 3)?;
    let p = (w * h) as f64;
    Ok((smooth_one_map(albedo, image, 0.0, None)
        + smooth_one_map(roughness, image, 0.0, None)
        + smooth_one_map(metallic, image, 0.0, None))
        / p)
}

/// Every term of one evaluation, unweighted, plus the weighted total.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerms {
    pub image: f64,
    pub pbr: f64,
    pub material: f64,
    pub consistency: f64,
    pub smooth: f64,
    pub total: f64,
    pub material_supervised: bool,
}

impl LossTerms {
    fn zero() -> Self {
        LossTerms {
            image: 0.0,
            pbr: 0.0,
            material: 0.0,
            consistency: 0.0,
            smooth: 0.0,
            total: 0.0,
            material_supervised: false,
        }
    }

    fn accumulate(&mut self, other: &LossTerms) {
        self.image += other.image;
        self.pbr += other.pbr;
        self.material += other.material;
        self.consistency += other.consistency;
        self.smooth += other.smooth;
        self.total += other.total;
        self.material_supervised |= other.material_supervised;
    }

    fn scale(&mut self, f: f64) {
        self.image *= f;
        self.pbr *= f;
        self.material *= f;
        self.consistency *= f;
        self.smooth *= f;
        self.total *= f;
    }
}

/// Gradients of the (weighted, view-averaged) total loss with respect to
/// every raw primitive parameter and the SH lighting.
///
/// `d_color`, `d_albedo`, `d_roughness`, `d_metallic` are with respect to
/// the stored activated values in [0, 1]; the fitter chains them through
/// its own logits. `d_rotation` is with respect to the raw (w, x, y, z)
/// quaternion, `d_normal_raw` to the unnormalized normal.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub d_position: Vec<Vector3<f64>>,
    pub d_log_scale: Vec<Vector3<f64>>,
    pub d_rotation: Vec<Vector4<f64>>,
    pub d_opacity_raw: Vec<f64>,
    pub d_color: Vec<Vector3<f64>>,
    pub d_normal_raw: Vec<Vector3<f64>>,
    pub d_albedo: Vec<Vector3<f64>>,
    pub d_roughness: Vec<f64>,
    pub d_metallic: Vec<f64>,
    pub d_sh: [[f64; 3]; SH_COUNT],
}

impl ParamGrads {
    pub fn zeros(k: usize) -> Self {
        ParamGrads {
            d_position: vec![Vector3::zeros(); k],
            d_log_scale: vec![Vector3::zeros(); k],
            d_rotation: vec![Vector4::zeros(); k],
            d_opacity_raw: vec![0.0; k],
            d_color: vec![Vector3::zeros(); k],
            d_normal_raw: vec![Vector3::zeros(); k],
            d_albedo: vec![Vector3::zeros(); k],
            d_roughness: vec![0.0; k],
            d_metallic: vec![0.0; k],
            d_sh: [[0.0; 3]; SH_COUNT],
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for i in 0..self.d_position.len() {
            self.d_position[i] += other.d_position[i];
            self.d_log_scale[i] += other.d_log_scale[i];
            self.d_rotation[i] += other.d_rotation[i];
            self.d_opacity_raw[i] += other.d_opacity_raw[i];
            self.d_color[i] += other.d_color[i];
            self.d_normal_raw[i] += other.d_normal_raw[i];
            self.d_albedo[i] += other.d_albedo[i];
            self.d_roughness[i] += other.d_roughness[i];
            self.d_metallic[i] += other.d_metallic[i];
        }
        for k in 0..SH_COUNT {
            for ch in 0..3 {
                self.d_sh[k][ch] += other.d_sh[k][ch];
            }
        }
    }

    pub fn scale(&mut self, f: f64) {
        for i in 0..self.d_position.len() {
            self.d_position[i] *= f;
            self.d_log_scale[i] *= f;
            self.d_rotation[i] *= f;
            self.d_opacity_raw[i] *= f;
            self.d_color[i] *= f;
            self.d_normal_raw[i] *= f;
            self.d_albedo[i] *= f;
            self.d_roughness[i] *= f;
            self.d_metallic[i] *= f;
        }
        for k in 0..SH_COUNT {
            for ch in 0..3 {
                self.d_sh[k][ch] *= f;
            }
        }
    }
}

fn eval_view(
    cloud: &GaussianCloud,
    acts: &[crate::gaussian::ActivatedGaussian],
    light: &SHLighting,
    view: &SupervisionView,
    frozen: Option<&ConsistencyTarget>,
    samples: usize,
    settings: &RasterSettings,
    weights: &LossWeights,
) -> Result<(LossTerms, ParamGrads)> {
    view.validate()?;
    let scene = RasterScene::prepare(cloud, &view.camera, settings)?;
    let pbr_vals = shade_cloud(acts, light, &view.camera, samples, BrdfMode::Full)?;
    let channels = PrimitiveChannels::from_activated(acts, pbr_vals)?;
    let out = scene.forward(&channels)?;
    let (w, h) = (out.width(), out.height());

    let built;
    let target = match frozen {
        Some(t) => t,
        None => {
            built = consistency_target(&out.depth, &out.alpha, &view.camera)?;
            &built
        }
    };

    let mut up = RenderOutput::zeros(w, h);
    let mut terms = LossTerms::zero();
    terms.image = masked_mse_impl(&out.color, &view.image, &view.mask, weights.image, Some(&mut up.color))?;
    terms.pbr = masked_mse_impl(&out.pbr, &view.image, &view.mask, weights.pbr, Some(&mut up.pbr))?;
    let (material, supervised) = material_impl(
        &out.albedo,
        &out.roughness,
        &out.metallic,
        view.materials.as_ref(),
        &view.mask,
        weights.material,
        Some((&mut up.albedo, &mut up.roughness, &mut up.metallic)),
    )?;
    terms.material = material;
    terms.material_supervised = supervised;
    terms.consistency = consistency_impl(&out.normal, target, weights.consistency, Some(&mut up.normal))?;
    {
        let p = (w * h) as f64;
        let gs = weights.smooth / p;
        terms.smooth = (smooth_one_map(&out.albedo, &view.image, gs, Some(&mut up.albedo))
            + smooth_one_map(&out.roughness, &view.image, gs, Some(&mut up.roughness))
            + smooth_one_map(&out.metallic, &view.image, gs, Some(&mut up.metallic)))
            / p;
    }
    terms.total = weights.image * terms.image
        + weights.pbr * terms.pbr
        + weights.material * terms.material
        + weights.consistency * terms.consistency
        + weights.smooth * terms.smooth;

    let gb = scene.backward(&channels, &up)?;
    let k = cloud.len();
    let mut pg = ParamGrads {
        d_position: gb.d_position,
        d_log_scale: gb.d_log_scale,
        d_rotation: gb.d_rotation,
        d_opacity_raw: gb.d_opacity_raw,
        d_color: gb.d_channels.color,
        d_normal_raw: vec![Vector3::zeros(); k],
        d_albedo: gb.d_channels.albedo,
        d_roughness: gb.d_channels.roughness,
        d_metallic: gb.d_channels.metallic,
        d_sh: [[0.0; 3]; SH_COUNT],
    };

    // The pbr channel is a function of (normal, albedo, roughness,
    // metallic, SH, position-through-ω_o); chain its upstream through the
    // shading quadrature. Collected in parallel, merged in index order.
    let center = view.camera.center();
    let chains: Vec<Result<Option<(crate::shading::ShadeGrads, Vector3<f64>)>>> = (0..k)
        .into_par_iter()
        .map(|i| {
            let up_pbr = gb.d_channels.pbr[i];
            if up_pbr == Vector3::zeros() {
                return Ok(None);
            }
            let v = center - acts[i].position;
            let norm = v.norm();
            if norm < 1e-9 {
                return Err(Error::Degenerate(format!(
                    "primitive {i} coincides with the camera center"
                )));
            }
            let wo = v / norm;
            let (_, sg) = shade_primitive_grad(&acts[i], light, &wo, samples, BrdfMode::Full, &up_pbr)?;
            // ω_o = v/|v| with v = center - μ, so dμ = -(∂ω_o/∂v)ᵀ dω_o.
            let d_pos = -(d_normalize3(&v).transpose() * sg.d_wo);
            Ok(Some((sg, d_pos)))
        })
        .collect();
    for (i, chain) in chains.into_iter().enumerate() {
        let mut d_unit_normal = gb.d_channels.normal[i];
        if let Some((sg, d_pos)) = chain? {
            pg.d_albedo[i] += sg.d_albedo;
            pg.d_roughness[i] += sg.d_roughness;
            pg.d_metallic[i] += sg.d_metallic;
            pg.d_position[i] += d_pos;
            d_unit_normal += sg.d_normal;
            for kk in 0..SH_COUNT {
                for ch in 0..3 {
                    pg.d_sh[kk][ch] += sg.d_sh[kk][ch];
                }
            }
        }
        pg.d_normal_raw[i] =
            d_normalize3(&cloud.primitives[i].normal_raw).transpose() * d_unit_normal;
    }
    Ok((terms, pg))
}

fn eval_batch(
    cloud: &GaussianCloud,
    light: &SHLighting,
    views: &[SupervisionView],
    frozen: Option<&[ConsistencyTarget]>,
    samples: usize,
    settings: &RasterSettings,
    weights: &LossWeights,
) -> Result<(LossTerms, ParamGrads)> {
    if views.is_empty() {
        return Err(Error::Usage("loss needs at least one supervision view".into()));
    }
    weights.validate()?;
    light.validate()?;
    let acts = cloud.activate()?;
    let evals: Vec<Result<(LossTerms, ParamGrads)>> = views
        .par_iter()
        .enumerate()
        .map(|(vi, view)| {
            eval_view(cloud, &acts, light, view, frozen.map(|t| &t[vi]), samples, settings, weights)
        })
        .collect();
    let mut terms = LossTerms::zero();
    let mut grads = ParamGrads::zeros(cloud.len());
    for e in evals {
        let (t, g) = e?;
        terms.accumulate(&t);
        grads.add_assign(&g);
    }
    let inv = 1.0 / views.len() as f64;
    terms.scale(inv);
    grads.scale(inv);
    Ok((terms, grads))
}

/// Renders every view, evaluates all five terms and assembles the full
/// gradient. Terms are reported unweighted and averaged over views;
/// `total` and the gradients carry the weights.
pub fn loss_total(
    cloud: &GaussianCloud,
    light: &SHLighting,
    views: &[SupervisionView],
    samples: usize,
    settings: &RasterSettings,
    weights: &LossWeights,
) -> Result<(LossTerms, ParamGrads)> {
    eval_batch(cloud, light, views, None, samples, settings, weights)
}

/// [`loss_total`] with the consistency targets supplied by the caller
/// instead of rebuilt from the current geometry. The analytic gradients
/// treat the targets as constants either way, so at the point the targets
/// were built from, both variants agree exactly; this form keeps the
/// objective a fixed function of the parameters for finite differences.
pub fn loss_total_frozen(
    cloud: &GaussianCloud,
    light: &SHLighting,
    views: &[SupervisionView],
    targets: &[ConsistencyTarget],
    samples: usize,
    settings: &RasterSettings,
    weights: &LossWeights,
) -> Result<(LossTerms, ParamGrads)> {
    if targets.len() != views.len() {
        return Err(Error::Mismatch(format!(
            "{} consistency targets for {} views",
            targets.len(),
            views.len()
        )));
    }
    eval_batch(cloud, light, views, Some(targets), samples, settings, weights)
}

/// Current detached consistency targets, one per view. Channel values do
/// not matter for depth/alpha, so the forward runs with zeroed shading.
pub fn build_consistency_targets(
    cloud: &GaussianCloud,
    views: &[SupervisionView],
    settings: &RasterSettings,
) -> Result<Vec<ConsistencyTarget>> {
    let acts = cloud.activate()?;
    views
        .iter()
        .map(|v| {
            let channels = PrimitiveChannels::from_activated(&acts, vec![Vector3::zeros(); acts.len()])?;
            let out = crate::splat::rasterize(cloud, &channels, &v.camera, settings)?;
            consistency_target(&out.depth, &out.alpha, &v.camera)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::look_at;
    use crate::gaussian::RelightableGaussian;
    use nalgebra::{Isometry3, Quaternion, Vector2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat(w: usize, h: usize, c: usize, v: f64) -> Raster {
        Raster::from_vec(w, h, c, vec![v; w * h * c]).unwrap()
    }

    #[test]
    fn masked_mse_reference_values() {
        let a = flat(5, 4, 3, 0.5);
        let mask = vec![true; 20];
        assert_eq!(loss_image(&a, &a, &mask).unwrap(), 0.0);

        let b = flat(5, 4, 3, 0.6);
        let v = loss_image(&a, &b, &mask).unwrap();
        assert!((v - 0.01).abs() < 1e-15, "{v}");

        // One pixel differing by 1 in every channel among P masked pixels.
        let mut c = a.clone();
        for ch in 0..3 {
            c.set(2, 1, ch, a.at(2, 1, ch) + 1.0);
        }
        let v = loss_image(&a, &c, &mask).unwrap();
        assert!((v - 1.0 / 20.0).abs() < 1e-15, "{v}");

        // Masked-out differences are invisible; empty mask is zero.
        let mut m2 = mask.clone();
        m2[1 * 5 + 2] = false;
        assert_eq!(loss_image(&a, &c, &m2).unwrap(), 0.0);
        assert_eq!(loss_image(&a, &c, &vec![false; 20]).unwrap(), 0.0);

        assert!(loss_image(&a, &flat(4, 5, 3, 0.5), &mask).is_err());
        assert!(loss_image(&a, &b, &vec![true; 19]).is_err());
        assert_eq!(loss_pbr(&a, &b, &mask).unwrap(), loss_image(&a, &b, &mask).unwrap());
    }

    #[test]
    fn consistency_reference_values() {
        let w = 6;
        let h = 3;
        let mut n = Raster::new(w, h, 3);
        for x in 0..w {
            for y in 0..h {
                n.set(x, y, 2, 1.0);
            }
        }
        let opaque = flat(w, h, 1, 1.0);
        // Perfect agreement on a fully opaque region.
        assert_eq!(loss_consistency(&n, &n, &opaque).unwrap(), 0.0);

        // Opposite unit vectors: ||n - (-n)||^2 = 4 per pixel.
        let mut flipped = n.clone();
        for v in flipped.data_mut() {
            *v = -*v;
        }
        let v = loss_consistency(&n, &flipped, &opaque).unwrap();
        assert!((v - 4.0).abs() < 1e-15, "{v}");

        // Empty foreground: gate never opens.
        let transparent = flat(w, h, 1, 0.3);
        assert_eq!(loss_consistency(&n, &flipped, &transparent).unwrap(), 0.0);

        // The alpha scaling is part of the target.
        let half = flat(w, h, 1, 0.8);
        let v = loss_consistency(&n, &n, &half).unwrap();
        // target = 0.8 n, diff = 0.2 n, ||diff||^2 = 0.04.
        assert!((v - 0.04).abs() < 1e-12, "{v}");
    }

    #[test]
    fn material_reference_values() {
        let w = 4;
        let h = 4;
        let gt = MaterialGt {
            albedo: flat(w, h, 3, 0.5),
            roughness: flat(w, h, 1, 0.7),
            metallic: flat(w, h, 1, 0.1),
        };
        let mask = vec![true; w * h];
        let (v, flag) =
            loss_material(&gt.albedo, &gt.roughness, &gt.metallic, Some(&gt), &mask).unwrap();
        assert_eq!((v, flag), (0.0, true));

        let (v, flag) = loss_material(&gt.albedo, &gt.roughness, &gt.metallic, None, &mask).unwrap();
        assert_eq!((v, flag), (0.0, false));

        let off = flat(w, h, 1, 0.2); // roughness off by 0.5
        let (v, flag) = loss_material(&gt.albedo, &off, &gt.metallic, Some(&gt), &mask).unwrap();
        assert!(flag);
        assert!((v - 0.25).abs() < 1e-15, "{v}");
    }

    #[test]
    fn smooth_reference_values() {
        let w = 8;
        let h = 4;
        let image_flat = flat(w, h, 3, 0.5);
        let b = flat(w, h, 3, 0.3);
        let r = flat(w, h, 1, 0.7);
        let m = flat(w, h, 1, 0.1);
        assert_eq!(loss_smooth(&b, &r, &m, &image_flat).unwrap(), 0.0);

        // Vertical step of 0.6 in roughness on a flat image: the boundary
        // column contributes 0.6 per row, averaged over W*H pixels.
        let mut step = r.clone();
        for y in 0..h {
            for x in w / 2..w {
                step.set(x, y, 0, 0.7 + 0.6);
            }
        }
        let v = loss_smooth(&b, &step, &m, &image_flat).unwrap();
        assert!((v - 0.6 / w as f64).abs() < 1e-12, "{v}");

        // The same step aligned with a huge radiance edge is suppressed.
        let mut image_edge = image_flat.clone();
        for y in 0..h {
            for x in w / 2..w {
                for ch in 0..3 {
                    image_edge.set(x, y, ch, 20.5);
                }
            }
        }
        let v = loss_smooth(&b, &step, &m, &image_edge).unwrap();
        assert!(v < 1e-9, "{v}");
        // An albedo step is averaged over its 3 channels, same magnitude.
        let mut bstep = b.clone();
        for y in 0..h {
            for x in w / 2..w {
                for ch in 0..3 {
                    bstep.set(x, y, ch, 0.9);
                }
            }
        }
        let v = loss_smooth(&bstep, &r, &m, &image_flat).unwrap();
        assert!((v - 0.6 / w as f64).abs() < 1e-12, "{v}");
    }

    // --- full objective ---------------------------------------------------

    fn fd_cam(side: usize) -> Camera {
        let c = side as f64 / 2.0 + 0.5;
        Camera::new(
            Vector2::new(42.0, 42.0),
            Vector2::new(c, c),
            (side, side),
            Isometry3::identity(),
        )
        .unwrap()
    }

    fn random_cloud(seed: u64, k: usize) -> GaussianCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prims = (0..k)
            .map(|_| RelightableGaussian {
                position: Vector3::new(
                    rng.random_range(-0.7..0.7),
                    rng.random_range(-0.7..0.7),
                    rng.random_range(4.0..6.0),
                ),
                log_scale: Vector3::new(
                    rng.random_range(0.25..0.55f64).ln(),
                    rng.random_range(0.25..0.55f64).ln(),
                    rng.random_range(0.25..0.55f64).ln(),
                ),
                rotation: Quaternion::new(
                    rng.random_range(0.6..1.4),
                    rng.random_range(-0.4..0.4),
                    rng.random_range(-0.4..0.4),
                    rng.random_range(-0.4..0.4),
                ),
                opacity_raw: rng.random_range(0.5..2.5),
                color: Vector3::new(rng.random(), rng.random(), rng.random()),
                normal_raw: Vector3::new(
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    -1.0 - rng.random_range(0.0..0.5),
                ),
                albedo: Vector3::new(
                    rng.random_range(0.2..0.9),
                    rng.random_range(0.2..0.9),
                    rng.random_range(0.2..0.9),
                ),
                roughness: rng.random_range(0.3..0.9),
                metallic: rng.random_range(0.05..0.6),
            })
            .collect();
        GaussianCloud::new(prims).unwrap()
    }

    fn dc_dominant_light(seed: u64) -> SHLighting {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut l = SHLighting::uniform([1.1, 1.0, 0.9]);
        for k in 1..SH_COUNT {
            for ch in 0..3 {
                l.coeffs[k][ch] = rng.random_range(-0.06..0.06);
            }
        }
        l
    }

    /// Supervision rendered from a perturbed copy of the scene, so every
    /// loss term sees realistic nonzero residuals.
    fn make_views(cloud: &GaussianCloud, light: &SHLighting, settings: &RasterSettings) -> Vec<SupervisionView> {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut gt_cloud = cloud.clone();
        for g in &mut gt_cloud.primitives {
            g.position += Vector3::new(
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
            );
            g.albedo = g.albedo.map(|v| (v + rng.random_range(-0.1..0.1)).clamp(0.05, 0.95));
            g.roughness = (g.roughness + rng.random_range(-0.1..0.1)).clamp(0.1, 0.95);
            g.color = g.color.map(|v| (v + rng.random_range(-0.1..0.1)).clamp(0.05, 0.95));
        }
        let cams = [
            fd_cam(24),
            Camera::new(
                Vector2::new(42.0, 42.0),
                Vector2::new(12.5, 12.5),
                (24, 24),
                look_at(
                    Vector3::new(1.5, -1.0, -0.5),
                    Vector3::new(0.0, 0.0, 5.0),
                    Vector3::y(),
                )
                .unwrap(),
            )
            .unwrap(),
        ];
        cams.iter()
            .map(|cam| {
                let out = crate::shading::render_all(&gt_cloud, light, cam, 32, settings).unwrap();
                let mask: Vec<bool> = out.alpha.data().iter().map(|&a| a > 0.3).collect();
                let covered = mask.iter().filter(|&&m| m).count();
                assert!(covered > 25 && covered < mask.len(), "degenerate mask: {covered}");
                SupervisionView {
                    camera: cam.clone(),
                    image: out.color.clone(),
                    mask,
                    materials: Some(MaterialGt {
                        albedo: out.albedo.clone(),
                        roughness: out.roughness.clone(),
                        metallic: out.metallic.clone(),
                    }),
                }
            })
            .collect()
    }

    #[test]
    fn total_is_linear_in_weights() {
        let cloud = random_cloud(5, 4);
        let light = dc_dominant_light(6);
        let settings = RasterSettings::default();
        let views = make_views(&cloud, &light, &settings);

        let zero = LossWeights {
            image: 0.0,
            pbr: 0.0,
            material: 0.0,
            consistency: 0.0,
            smooth: 0.0,
        };
        let (t0, g0) = loss_total(&cloud, &light, &views, 16, &settings, &zero).unwrap();
        assert_eq!(t0.total, 0.0);
        assert!(g0.d_position.iter().all(|v| *v == Vector3::zeros()));
        assert!(g0.d_sh.iter().flatten().all(|&v| v == 0.0));

        let only_image = LossWeights {
            image: 2.5,
            ..zero.clone()
        };
        let (t1, _) = loss_total(&cloud, &light, &views, 16, &settings, &only_image).unwrap();
        assert!((t1.total - 2.5 * t1.image).abs() < 1e-12);
        assert!(t1.image > 0.0);

        // Unweighted term values do not depend on the weights.
        let (t2, _) = loss_total(&cloud, &light, &views, 16, &settings, &LossWeights::default()).unwrap();
        assert!((t2.image - t1.image).abs() < 1e-12);
        let expected = t2.image + t2.pbr + t2.material + 0.1 * t2.consistency + 0.01 * t2.smooth;
        assert!((t2.total - expected).abs() < 1e-12);
    }

    #[test]
    fn frozen_targets_reproduce_live_loss_at_the_base_point() {
        let cloud = random_cloud(11, 5);
        let light = dc_dominant_light(12);
        let settings = RasterSettings::default();
        let views = make_views(&cloud, &light, &settings);
        let weights = LossWeights::default();

        let targets = build_consistency_targets(&cloud, &views, &settings).unwrap();
        let (ta, ga) = loss_total(&cloud, &light, &views, 16, &settings, &weights).unwrap();
        let (tb, gb) = loss_total_frozen(&cloud, &light, &views, &targets, 16, &settings, &weights).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(ga, gb);
    }

    #[test]
    fn total_gradients_match_central_finite_differences() {
        let cloud = random_cloud(23, 8);
        let light = dc_dominant_light(24);
        let settings = RasterSettings::smooth();
        let views = make_views(&cloud, &light, &settings);
        let weights = LossWeights::default();
        // The dropped hemisphere-lattice derivative in the normal lane
        // shrinks with the sample count; 2048 keeps it inside 5e-2.
        let m = 2048;

        let targets = build_consistency_targets(&cloud, &views, &settings).unwrap();
        let (_, grads) =
            loss_total_frozen(&cloud, &light, &views, &targets, m, &settings, &weights).unwrap();

        let eval = |cl: &GaussianCloud, li: &SHLighting| -> f64 {
            loss_total_frozen(cl, li, &views, &targets, m, &settings, &weights)
                .unwrap()
                .0
                .total
        };

        let h = 1e-3;
        let mut checked = 0usize;
        let mut check = |an: f64, fd: f64, what: &str, rel: f64| {
            let tol = 1e-6 + rel * fd.abs().max(an.abs());
            assert!(
                (an - fd).abs() <= tol,
                "{what}: analytic {an} vs fd {fd} (tol {tol})"
            );
            checked += 1;
        };

        for i in 0..cloud.len() {
            let fd_of = |mutate: &dyn Fn(&mut RelightableGaussian, f64)| -> Vec<f64> {
                let mut out = Vec::new();
                for s in [h, -h] {
                    let mut c = cloud.clone();
                    mutate(&mut c.primitives[i], s);
                    out.push(eval(&c, &light));
                }
                vec![(out[0] - out[1]) / (2.0 * h)]
            };
            for k in 0..3 {
                let fd = fd_of(&|g, s| g.position[k] += s)[0];
                check(grads.d_position[i][k], fd, &format!("position[{i}][{k}]"), 2e-3);
                let fd = fd_of(&|g, s| g.log_scale[k] += s)[0];
                check(grads.d_log_scale[i][k], fd, &format!("log_scale[{i}][{k}]"), 2e-3);
                let fd = fd_of(&|g, s| g.color[k] += s)[0];
                check(grads.d_color[i][k], fd, &format!("color[{i}][{k}]"), 2e-3);
                let fd = fd_of(&|g, s| g.albedo[k] += s)[0];
                check(grads.d_albedo[i][k], fd, &format!("albedo[{i}][{k}]"), 2e-3);
                let fd = fd_of(&|g, s| g.normal_raw[k] += s)[0];
                // The pseudo-normal path makes this lane the least smooth.
                check(grads.d_normal_raw[i][k], fd, &format!("normal_raw[{i}][{k}]"), 5e-2);
            }
            // Raw quaternion: d_rotation is (w, x, y, z); coords are (x, y, z, w).
            for (row, coord) in [(0usize, 3usize), (1, 0), (2, 1), (3, 2)] {
                let fd = fd_of(&|g, s| g.rotation.coords[coord] += s)[0];
                check(grads.d_rotation[i][row], fd, &format!("rotation[{i}][{row}]"), 2e-3);
            }
            let fd = fd_of(&|g, s| g.opacity_raw += s)[0];
            check(grads.d_opacity_raw[i], fd, &format!("opacity_raw[{i}]"), 2e-3);
            let fd = fd_of(&|g, s| g.roughness += s)[0];
            check(grads.d_roughness[i], fd, &format!("roughness[{i}]"), 2e-3);
            let fd = fd_of(&|g, s| g.metallic += s)[0];
            check(grads.d_metallic[i], fd, &format!("metallic[{i}]"), 2e-3);
        }

        for k in [0usize, 1, 4, 8, 12, 15] {
            for ch in 0..3 {
                let mut lp = light.clone();
                lp.coeffs[k][ch] += h;
                let mut lm = light.clone();
                lm.coeffs[k][ch] -= h;
                let fd = (eval(&cloud, &lp) - eval(&cloud, &lm)) / (2.0 * h);
                check(grads.d_sh[k][ch], fd, &format!("sh[{k}][{ch}]"), 2e-3);
            }
        }
        assert!(checked > 180, "only {checked} gradient entries checked");
    }
}
