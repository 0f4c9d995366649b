//! Per-scene first-order fitting: Adam on the total loss over a fixed
//! primitive budget.
//!
//! Color, albedo, roughness and metallic live as logits so the optimizer
//! can never leave [0, 1]; everything else (position, log-scale, raw
//! quaternion, raw opacity, raw normal, SH coefficients) is optimized
//! directly. There is no densification or pruning: the budget K is fixed
//! at initialization, which keeps every iteration's bookkeeping identical
//! and the whole run bit-deterministic for a given (supervision, config,
//! seed) triple under single-worker execution.

use nalgebra::{Quaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gaussian::{logit_clamped, sigmoid, sigmoid_derivative, GaussianCloud, RelightableGaussian};
use crate::io::SceneAsset;
use crate::loss::{loss_total, LossTerms, LossWeights, ParamGrads, SupervisionView};
use crate::sh::{SHLighting, SH_COUNT};
use crate::splat::RasterSettings;
use crate::{Error, Result};

/// The complete supervision for one scene: posed views with ground-truth
/// images, foreground masks and optional material maps.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionSet {
    pub views: Vec<SupervisionView>,
}

impl SupervisionSet {
    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::Usage("supervision set has no views".into()));
        }
        for v in &self.views {
            v.validate()?;
        }
        Ok(())
    }

    fn any_mask_pixel(&self) -> bool {
        self.views.iter().any(|v| v.mask.iter().any(|&m| m))
    }
}

/// Per-group Adam step sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningRates {
    pub position: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub color: f64,
    pub material: f64,
    pub normal: f64,
    pub lighting: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 2e-4,
            rotation: 1e-3,
            scale: 1e-3,
            opacity: 5e-2,
            color: 1e-2,
            material: 1e-2,
            normal: 1e-2,
            lighting: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Adam iterations; 0 returns the initialization untouched.
    pub iterations: usize,
    /// Primitive budget K, fixed for the whole run.
    pub count: usize,
    /// Shading quadrature sample count M.
    pub samples: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub settings: RasterSettings,
    pub rates: LearningRates,
    /// Primitives initialize along masked pixel rays at distances drawn
    /// uniformly from this range.
    pub depth_range: (f64, f64),
    /// Isotropic initial scale.
    pub init_scale: f64,
    /// When the capture lighting is known, fix the SH environment at this
    /// value instead of estimating it; removes the albedo-times-lighting
    /// scale ambiguity.
    pub known_lighting: Option<SHLighting>,
    /// Console/trace thinning hint for callers; the returned trace is
    /// always complete.
    pub log_every: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            iterations: 1500,
            count: 64,
            samples: 64,
            seed: 0,
            weights: LossWeights::default(),
            settings: RasterSettings::default(),
            rates: LearningRates::default(),
            depth_range: (2.0, 8.0),
            init_scale: 0.15,
            known_lighting: None,
            log_every: 50,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Usage("primitive budget must be >= 1".into()));
        }
        if self.samples == 0 {
            return Err(Error::Usage("shading sample count must be >= 1".into()));
        }
        let (lo, hi) = self.depth_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi) {
            return Err(Error::Usage(format!("bad depth range ({lo}, {hi})")));
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return Err(Error::Usage(format!("bad init scale {}", self.init_scale)));
        }
        self.weights.validate()?;
        let r = &self.rates;
        for (name, v) in [
            ("position", r.position),
            ("rotation", r.rotation),
            ("scale", r.scale),
            ("opacity", r.opacity),
            ("color", r.color),
            ("material", r.material),
            ("normal", r.normal),
            ("lighting", r.lighting),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Usage(format!("learning rate {name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// One loss evaluation, recorded before the parameter update of the same
/// iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub image: f64,
    pub pbr: f64,
    pub material: f64,
    pub consistency: f64,
    pub smooth: f64,
    pub total: f64,
}

impl TraceRow {
    fn new(iteration: usize, t: &LossTerms) -> Self {
        TraceRow {
            iteration,
            image: t.image,
            pbr: t.pbr,
            material: t.material,
            consistency: t.consistency,
            smooth: t.smooth,
            total: t.total,
        }
    }

    pub const CSV_HEADER: &'static str = "iteration,image,pbr,material,consistency,smooth,total";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iteration, self.image, self.pbr, self.material, self.consistency, self.smooth, self.total
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub asset: SceneAsset,
    pub trace: Vec<TraceRow>,
}

// Flat parameter layout: 22 scalars per primitive, then 48 SH scalars.
const POS: usize = 0;
const LSC: usize = 3;
const ROT: usize = 6; // (w, x, y, z)
const OPA: usize = 10;
const COL: usize = 11; // logits
const NRM: usize = 14;
const ALB: usize = 17; // logits
const RGH: usize = 20; // logit
const MET: usize = 21; // logit
const PER_PRIM: usize = 22;
const LOGIT_EPS: f64 = 1e-6;

struct Flat {
    x: Vec<f64>,
    k: usize,
}

impl Flat {
    fn sh_base(&self) -> usize {
        self.k * PER_PRIM
    }

    fn materialize(&self) -> Result<(GaussianCloud, SHLighting)> {
        let prims = (0..self.k)
            .map(|i| {
                let b = i * PER_PRIM;
                let x = &self.x;
                RelightableGaussian {
                    position: Vector3::new(x[b + POS], x[b + POS + 1], x[b + POS + 2]),
                    log_scale: Vector3::new(x[b + LSC], x[b + LSC + 1], x[b + LSC + 2]),
                    rotation: Quaternion::new(x[b + ROT], x[b + ROT + 1], x[b + ROT + 2], x[b + ROT + 3]),
                    opacity_raw: x[b + OPA],
                    color: Vector3::new(x[b + COL], x[b + COL + 1], x[b + COL + 2]).map(sigmoid),
                    normal_raw: Vector3::new(x[b + NRM], x[b + NRM + 1], x[b + NRM + 2]),
                    albedo: Vector3::new(x[b + ALB], x[b + ALB + 1], x[b + ALB + 2]).map(sigmoid),
                    roughness: sigmoid(x[b + RGH]),
                    metallic: sigmoid(x[b + MET]),
                }
            })
            .collect();
        let cloud = GaussianCloud::new(prims)?;
        let mut light = SHLighting::zeros();
        let s = self.sh_base();
        for kk in 0..SH_COUNT {
            for ch in 0..3 {
                light.coeffs[kk][ch] = self.x[s + 3 * kk + ch];
            }
        }
        Ok((cloud, light))
    }

    /// Flattens a gradient buffer into the parameter layout, chaining the
    /// sigmoid for every logit lane (`σ' = s(1−s)` with s the activated
    /// value, recomputed from the current parameters).
    fn flatten_grads(&self, pg: &ParamGrads) -> Vec<f64> {
        let mut g = vec![0.0; self.x.len()];
        for i in 0..self.k {
            let b = i * PER_PRIM;
            for c in 0..3 {
                g[b + POS + c] = pg.d_position[i][c];
                g[b + LSC + c] = pg.d_log_scale[i][c];
                g[b + NRM + c] = pg.d_normal_raw[i][c];
                g[b + COL + c] = pg.d_color[i][c] * sigmoid_derivative(sigmoid(self.x[b + COL + c]));
                g[b + ALB + c] = pg.d_albedo[i][c] * sigmoid_derivative(sigmoid(self.x[b + ALB + c]));
            }
            for c in 0..4 {
                g[b + ROT + c] = pg.d_rotation[i][c];
            }
            g[b + OPA] = pg.d_opacity_raw[i];
            g[b + RGH] = pg.d_roughness[i] * sigmoid_derivative(sigmoid(self.x[b + RGH]));
            g[b + MET] = pg.d_metallic[i] * sigmoid_derivative(sigmoid(self.x[b + MET]));
        }
        let s = self.sh_base();
        for kk in 0..SH_COUNT {
            for ch in 0..3 {
                g[s + 3 * kk + ch] = pg.d_sh[kk][ch];
            }
        }
        g
    }

    fn learning_rates(&self, r: &LearningRates) -> Vec<f64> {
        let mut lr = vec![0.0; self.x.len()];
        for i in 0..self.k {
            let b = i * PER_PRIM;
            for c in 0..3 {
                lr[b + POS + c] = r.position;
                lr[b + LSC + c] = r.scale;
                lr[b + NRM + c] = r.normal;
                lr[b + COL + c] = r.color;
                lr[b + ALB + c] = r.material;
            }
            for c in 0..4 {
                lr[b + ROT + c] = r.rotation;
            }
            lr[b + OPA] = r.opacity;
            lr[b + RGH] = r.material;
            lr[b + MET] = r.material;
        }
        for v in lr[self.sh_base()..].iter_mut() {
            *v = r.lighting;
        }
        lr
    }
}

/// Standard Adam state over the flat parameter vector, β = (0.9, 0.999),
/// ε = 1e-8, with per-index step sizes.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, x: &mut [f64], g: &[f64], lr: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let c2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for i in 0..x.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            x[i] -= lr[i] * mhat / (vhat.sqrt() + Self::EPS);
        }
    }
}

/// The documented initialization: K primitives seeded on rays through
/// masked pixels (view chosen round-robin, pixel uniform over that view's
/// mask, distance uniform in `depth_range`), isotropic scale, identity
/// rotation, opacity 0.1, gray color and albedo 0.5, roughness 0.7,
/// metallic 0.1, normals pointing outward from the seed centroid,
/// lighting gray DC of 0.5 unless a known lighting is supplied.
fn initialize(sup: &SupervisionSet, cfg: &FitConfig) -> Result<Flat> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let masked: Vec<(usize, Vec<usize>)> = sup
        .views
        .iter()
        .enumerate()
        .filter_map(|(vi, v)| {
            let px: Vec<usize> = (0..v.mask.len()).filter(|&p| v.mask[p]).collect();
            if px.is_empty() {
                None
            } else {
                Some((vi, px))
            }
        })
        .collect();
    if masked.is_empty() {
        return Err(Error::Mismatch("every supervision mask is empty".into()));
    }
    let k = cfg.count;
    let positions: Vec<Vector3<f64>> = (0..k)
        .map(|i| {
            let (vi, pixels) = &masked[i % masked.len()];
            let cam = &sup.views[*vi].camera;
            let p = pixels[rng.random_range(0..pixels.len())];
            let dir = cam.pixel_ray(p % cam.width(), p / cam.width());
            let dist = rng.random_range(cfg.depth_range.0..cfg.depth_range.1);
            cam.center() + dir * dist
        })
        .collect();
    let centroid = positions.iter().sum::<Vector3<f64>>() / k as f64;

    let mut x = vec![0.0; k * PER_PRIM + 3 * SH_COUNT];
    for (i, pos) in positions.iter().enumerate() {
        // Outward from the seeded cluster, the right hemisphere for any
        // shell-like subject; shading is sign-agnostic, the consistency
        // term corrects the rest.
        let outward = pos - centroid;
        let normal = if outward.norm() > 1e-9 {
            outward.normalize()
        } else {
            Vector3::new(0.0, 0.0, -1.0)
        };

        let b = i * PER_PRIM;
        for c in 0..3 {
            x[b + POS + c] = pos[c];
            x[b + LSC + c] = cfg.init_scale.ln();
            x[b + NRM + c] = normal[c];
            x[b + COL + c] = logit_clamped(0.5, LOGIT_EPS);
            x[b + ALB + c] = logit_clamped(0.5, LOGIT_EPS);
        }
        x[b + ROT] = 1.0; // identity (w, x, y, z)
        x[b + OPA] = logit_clamped(0.1, LOGIT_EPS);
        x[b + RGH] = logit_clamped(0.7, LOGIT_EPS);
        x[b + MET] = logit_clamped(0.1, LOGIT_EPS);
    }
    let light = cfg
        .known_lighting
        .clone()
        .unwrap_or_else(|| SHLighting::uniform([0.5, 0.5, 0.5]));
    let s = k * PER_PRIM;
    for kk in 0..SH_COUNT {
        for ch in 0..3 {
            x[s + 3 * kk + ch] = light.coeffs[kk][ch];
        }
    }
    Ok(Flat { x, k })
}

/// Fits a relightable scene to the supervision with full-batch Adam and
/// returns the asset plus the complete per-iteration loss trace.
pub fn fit_scene(sup: &SupervisionSet, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    sup.validate()?;
    if !sup.any_mask_pixel() {
        return Err(Error::Mismatch("every supervision mask is empty".into()));
    }

    let mut flat = initialize(sup, cfg)?;
    let mut lr = flat.learning_rates(&cfg.rates);
    if cfg.known_lighting.is_some() {
        for v in lr[flat.sh_base()..].iter_mut() {
            *v = 0.0;
        }
    }
    let mut adam = Adam::new(flat.x.len());
    let mut trace = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        let (cloud, light) = flat.materialize()?;
        let (terms, grads) = loss_total(&cloud, &light, &sup.views, cfg.samples, &cfg.settings, &cfg.weights)?;
        trace.push(TraceRow::new(it, &terms));
        let g = flat.flatten_grads(&grads);
        adam.step(&mut flat.x, &g, &lr);
    }

    let (cloud, lighting) = flat.materialize()?;
    Ok(FitResult {
        asset: SceneAsset { cloud, lighting },
        trace,
    })
}
