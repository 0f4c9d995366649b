//! Differentiable tile-based rasterizer.
//!
//! Forward: project each Gaussian to a screen-space Gaussian (EWA-style
//! local affine approximation), sort globally by view depth, bin into
//! 16x16 pixel tiles, then per pixel front-to-back α-blend arbitrary
//! per-primitive channel values plus depth and accumulated alpha.
//!
//! Backward: recompute each pixel's blend front-to-back, then walk it in
//! reverse with a suffix accumulator to get exact analytic gradients of
//! every output map with respect to channel values, opacity, position,
//! log-scale and rotation. No per-pixel transcripts are stored.
//!
//! Determinism: all parallel loops produce per-tile or per-primitive
//! results that are merged in a fixed index order, so outputs and
//! gradients are bit-identical for any worker count.

mod backward;
mod forward;
mod pseudo;

pub use backward::GradientBuffer;
pub use forward::rasterize_reference;
pub use pseudo::pseudo_normal;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3, Vector4};

use crate::camera::Camera;
use crate::gaussian::{covariance, ActivatedGaussian, GaussianCloud};
use crate::raster::RenderOutput;
use crate::{Error, Result};

/// Per-primitive footprint used for binning and the per-pixel overlap
/// test. `ThreeSigma` is the production path; `Full` makes every
/// surviving primitive contribute to every pixel, which removes the
/// footprint discontinuity for finite-difference checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Footprint {
    #[default]
    ThreeSigma,
    Full,
}

/// Rasterization controls. The defaults are the production values; the
/// test-oriented constructors relax the non-differentiable shortcuts.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterSettings {
    /// Tile edge in pixels.
    pub tile_size: usize,
    /// Contributions with α below this are skipped. `None` disables.
    pub alpha_cutoff: Option<f64>,
    /// Front-to-back blending stops once transmittance drops below this.
    pub transmittance_floor: Option<f64>,
    pub footprint: Footprint,
    /// Primitives at camera-space depth ≤ `near` are culled.
    pub near: f64,
    /// Diagonal low-pass added to cov2d, in pixels².
    pub lowpass: f64,
}

impl Default for RasterSettings {
    fn default() -> Self {
        RasterSettings {
            tile_size: 16,
            alpha_cutoff: Some(1.0 / 255.0),
            transmittance_floor: Some(1e-4),
            footprint: Footprint::ThreeSigma,
            near: 0.01,
            lowpass: 0.3,
        }
    }
}

impl RasterSettings {
    /// Thresholds off, footprint kept: the configuration under which the
    /// tile path and the naive reference must agree exactly.
    pub fn oracle() -> Self {
        RasterSettings {
            alpha_cutoff: None,
            transmittance_floor: None,
            ..RasterSettings::default()
        }
    }

    /// Thresholds off and full footprint: the blend becomes smooth in
    /// every parameter, as finite-difference gradient checks require.
    pub fn smooth() -> Self {
        RasterSettings {
            alpha_cutoff: None,
            transmittance_floor: None,
            footprint: Footprint::Full,
            ..RasterSettings::default()
        }
    }
}

/// Inclusive pixel-index rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl PixelRect {
    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

/// A Gaussian after projection to screen space.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreenGaussian {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub inv_cov: Matrix2<f64>,
    /// Camera-space z of the mean; blend sort key.
    pub view_depth: f64,
    pub opacity: f64,
    /// Pixels this Gaussian may touch (3σ axis-aligned bound).
    pub rect: PixelRect,
    pub source_index: usize,
}

/// α contribution of a screen Gaussian at a pixel center. Shared by the
/// tile path, the naive reference and the backward recomputation, so all
/// three agree bit-for-bit.
#[inline]
pub(crate) fn splat_alpha(sg: &ScreenGaussian, px: f64, py: f64) -> f64 {
    let dx = px - sg.mean2d.x;
    let dy = py - sg.mean2d.y;
    let q = sg.inv_cov[(0, 0)] * dx * dx
        + 2.0 * sg.inv_cov[(0, 1)] * dx * dy
        + sg.inv_cov[(1, 1)] * dy * dy;
    sg.opacity * (-0.5 * q).exp()
}

/// Projection intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct ProjCache {
    /// Camera-space mean.
    pub t: Vector3<f64>,
    /// Affine Jacobian of the perspective map at `t`.
    pub j: Matrix2x3<f64>,
    /// Camera-space covariance `W Σ Wᵀ`.
    pub m_cam: Matrix3<f64>,
    /// Rotation matrix of the normalized quaternion.
    pub rot: Matrix3<f64>,
    /// Normalized quaternion as (w, x, y, z).
    pub q_hat: Vector4<f64>,
    /// Norm of the raw stored quaternion (normalization chain).
    pub q_norm: f64,
    pub scale: Vector3<f64>,
    pub opacity: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct CamFrame {
    pub rot_cw: Matrix3<f64>,
    pub rot_wc: Matrix3<f64>,
    pub center: Vector3<f64>,
    pub focal: Vector2<f64>,
    pub pp: Vector2<f64>,
    pub width: usize,
    pub height: usize,
}

impl CamFrame {
    pub fn new(cam: &Camera) -> Self {
        CamFrame {
            rot_cw: cam.rotation_cw(),
            rot_wc: cam.rotation_wc(),
            center: cam.center(),
            focal: cam.focal,
            pp: cam.principal_point,
            width: cam.width(),
            height: cam.height(),
        }
    }
}

/// Pixel-index rect covered by an axis-aligned radius around a screen
/// point, or `None` when it misses the image. Pixel `i` covers centers
/// at `i + 0.5`.
fn pixel_rect(mean: Vector2<f64>, rx: f64, ry: f64, width: usize, height: usize) -> Option<PixelRect> {
    let x0 = (mean.x - rx - 0.5).ceil().max(0.0);
    let y0 = (mean.y - ry - 0.5).ceil().max(0.0);
    let x1 = (mean.x + rx - 0.5).floor().min(width as f64 - 1.0);
    let y1 = (mean.y + ry - 0.5).floor().min(height as f64 - 1.0);
    if x0 > x1 || y0 > y1 || !x0.is_finite() || !y1.is_finite() {
        return None;
    }
    Some(PixelRect {
        x0: x0 as usize,
        x1: x1 as usize,
        y0: y0 as usize,
        y1: y1 as usize,
    })
}

/// EWA projection of one activated primitive. `None` means culled:
/// behind the near plane, or the 3σ footprint misses the image.
pub(crate) fn project_cached(
    g: &ActivatedGaussian,
    frame: &CamFrame,
    settings: &RasterSettings,
    source_index: usize,
    q_norm: f64,
) -> Option<(ScreenGaussian, ProjCache)> {
    let t = frame.rot_cw * (g.position - frame.center);
    if !(t.z > settings.near) {
        return None;
    }
    let inv_z = 1.0 / t.z;
    let mean2d = Vector2::new(
        frame.focal.x * t.x * inv_z + frame.pp.x,
        frame.focal.y * t.y * inv_z + frame.pp.y,
    );
    #[rustfmt::skip]
    let j = Matrix2x3::new(
        frame.focal.x * inv_z, 0.0,                   -frame.focal.x * t.x * inv_z * inv_z,
        0.0,                   frame.focal.y * inv_z, -frame.focal.y * t.y * inv_z * inv_z,
    );
    let sigma = covariance(&g.scale, &g.rotation);
    let m_cam = frame.rot_cw * sigma * frame.rot_cw.transpose();
    let mut cov2d = j * m_cam * j.transpose();
    cov2d[(0, 0)] += settings.lowpass;
    cov2d[(1, 1)] += settings.lowpass;
    let det = cov2d[(0, 0)] * cov2d[(1, 1)] - cov2d[(0, 1)] * cov2d[(1, 0)];
    if !(det > 0.0) {
        return None;
    }
    let inv_cov = Matrix2::new(cov2d[(1, 1)], -cov2d[(0, 1)], -cov2d[(1, 0)], cov2d[(0, 0)]) / det;
    let rect = match settings.footprint {
        Footprint::Full => PixelRect {
            x0: 0,
            x1: frame.width - 1,
            y0: 0,
            y1: frame.height - 1,
        },
        Footprint::ThreeSigma => {
            let rx = 3.0 * cov2d[(0, 0)].sqrt();
            let ry = 3.0 * cov2d[(1, 1)].sqrt();
            pixel_rect(mean2d, rx, ry, frame.width, frame.height)?
        }
    };
    let q = g.rotation.quaternion();
    Some((
        ScreenGaussian {
            mean2d,
            cov2d,
            inv_cov,
            view_depth: t.z,
            opacity: g.opacity,
            rect,
            source_index,
        },
        ProjCache {
            t,
            j,
            m_cam,
            rot: *g.rotation.to_rotation_matrix().matrix(),
            q_hat: Vector4::new(q.w, q.i, q.j, q.k),
            q_norm,
            scale: g.scale,
            opacity: g.opacity,
        },
    ))
}

/// Projects a single primitive; `None` is a cull, not an error.
pub fn project(g: &ActivatedGaussian, cam: &Camera, settings: &RasterSettings) -> Option<ScreenGaussian> {
    let frame = CamFrame::new(cam);
    project_cached(g, &frame, settings, 0, 1.0).map(|(sg, _)| sg)
}

/// Depth-sorted screen Gaussians binned into one tile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileBin {
    pub tile_x: usize,
    pub tile_y: usize,
    /// Indices into the scene's `screen` list, ascending (depth, index).
    pub indices: Vec<u32>,
}

/// Per-primitive channel values to blend. All lists have length K; the
/// rasterizer itself never reads primitive attributes other than
/// geometry and opacity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrimitiveChannels {
    pub color: Vec<Vector3<f64>>,
    pub pbr: Vec<Vector3<f64>>,
    pub normal: Vec<Vector3<f64>>,
    pub albedo: Vec<Vector3<f64>>,
    pub roughness: Vec<f64>,
    pub metallic: Vec<f64>,
}

impl PrimitiveChannels {
    pub fn zeros(k: usize) -> Self {
        PrimitiveChannels {
            color: vec![Vector3::zeros(); k],
            pbr: vec![Vector3::zeros(); k],
            normal: vec![Vector3::zeros(); k],
            albedo: vec![Vector3::zeros(); k],
            roughness: vec![0.0; k],
            metallic: vec![0.0; k],
        }
    }

    /// Attribute channels straight from the activated primitives, with
    /// externally computed shading colors.
    pub fn from_activated(acts: &[ActivatedGaussian], pbr: Vec<Vector3<f64>>) -> Result<Self> {
        if pbr.len() != acts.len() {
            return Err(Error::Mismatch(format!(
                "pbr channel has length {}, cloud has {}",
                pbr.len(),
                acts.len()
            )));
        }
        Ok(PrimitiveChannels {
            color: acts.iter().map(|g| g.color).collect(),
            pbr,
            normal: acts.iter().map(|g| g.normal).collect(),
            albedo: acts.iter().map(|g| g.albedo).collect(),
            roughness: acts.iter().map(|g| g.roughness).collect(),
            metallic: acts.iter().map(|g| g.metallic).collect(),
        })
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        let lens = [
            self.color.len(),
            self.pbr.len(),
            self.normal.len(),
            self.albedo.len(),
            self.roughness.len(),
            self.metallic.len(),
        ];
        if lens.iter().any(|&l| l != k) {
            return Err(Error::Mismatch(format!(
                "channel lengths {lens:?} do not all equal primitive count {k}"
            )));
        }
        Ok(())
    }
}

/// A cloud projected, sorted and binned for one camera; the unit that
/// forward and backward passes run against.
pub struct RasterScene {
    pub(crate) width: usize,
    pub(crate) height: usize,
    pub(crate) settings: RasterSettings,
    pub(crate) k: usize,
    pub(crate) screen: Vec<ScreenGaussian>,
    pub(crate) proj: Vec<ProjCache>,
    /// Global blend order: indices into `screen`, ascending (depth, source).
    pub(crate) order: Vec<u32>,
    pub(crate) bins: Vec<TileBin>,
    pub(crate) tiles_x: usize,
    pub(crate) frame: CamFrame,
}

impl RasterScene {
    pub fn prepare(cloud: &GaussianCloud, cam: &Camera, settings: &RasterSettings) -> Result<Self> {
        let acts = cloud.activate()?;
        let frame = CamFrame::new(cam);
        let mut screen = Vec::new();
        let mut proj = Vec::new();
        for (i, g) in acts.iter().enumerate() {
            let q_norm = cloud.primitives[i].rotation.norm();
            if let Some((sg, pc)) = project_cached(g, &frame, settings, i, q_norm) {
                screen.push(sg);
                proj.push(pc);
            }
        }

        let mut order: Vec<u32> = (0..screen.len() as u32).collect();
        order.sort_unstable_by(|&a, &b| {
            let ga = &screen[a as usize];
            let gb = &screen[b as usize];
            ga.view_depth
                .total_cmp(&gb.view_depth)
                .then(ga.source_index.cmp(&gb.source_index))
        });

        let ts = settings.tile_size.max(1);
        let tiles_x = frame.width.div_ceil(ts);
        let tiles_y = frame.height.div_ceil(ts);
        let mut bins: Vec<TileBin> = (0..tiles_x * tiles_y)
            .map(|t| TileBin {
                tile_x: t % tiles_x,
                tile_y: t / tiles_x,
                indices: Vec::new(),
            })
            .collect();
        // Pushing in global blend order keeps each bin depth-sorted.
        for &si in &order {
            let rect = screen[si as usize].rect;
            for ty in rect.y0 / ts..=rect.y1 / ts {
                for tx in rect.x0 / ts..=rect.x1 / ts {
                    bins[ty * tiles_x + tx].indices.push(si);
                }
            }
        }

        Ok(RasterScene {
            width: frame.width,
            height: frame.height,
            settings: settings.clone(),
            k: cloud.len(),
            screen,
            proj,
            order,
            bins,
            tiles_x,
            frame,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Screen Gaussians that survived culling.
    pub fn screen(&self) -> &[ScreenGaussian] {
        &self.screen
    }

    pub fn bins(&self) -> &[TileBin] {
        &self.bins
    }
}

/// One-call forward rasterization of a cloud.
pub fn rasterize(
    cloud: &GaussianCloud,
    channels: &PrimitiveChannels,
    cam: &Camera,
    settings: &RasterSettings,
) -> Result<RenderOutput> {
    RasterScene::prepare(cloud, cam, settings)?.forward(channels)
}
