//! Backward pass: exact gradients of every blended map.
//!
//! Phase 1 recomputes each pixel's front-to-back blend (same skip and
//! termination logic as forward, so only contributions that actually
//! happened get gradients), then walks it in reverse with a suffix
//! accumulator:
//!
//!   ∂out/∂α_i = v_i·T_i − (Σ_{k>i} v_k·α_k·T_k) / (1−α_i)
//!
//! and chains α = opacity·exp(−q/2), q = dᵀ Σ2d⁻¹ d into screen-space
//! gradients. Phase 2 chains those through the EWA projection into
//! position, log-scale, rotation (raw quaternion) and opacity_raw.
//!
//! Per-tile gradient blocks and per-primitive chains are reduced in
//! fixed index order: bit-deterministic for any worker count.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3, Vector4};
use rayon::prelude::*;

use crate::raster::RenderOutput;
use crate::{Error, Result};

use super::forward::{pack_values, LANES, VALUE_LANES};
use super::{splat_alpha, PrimitiveChannels, ProjCache, RasterScene, ScreenGaussian};

/// Accumulated gradients for one backward pass, indexed by primitive.
///
/// `d_rotation` is with respect to the raw stored quaternion (w, x, y, z);
/// the normalization chain is already applied. `d_channels` mirrors the
/// channel layout that was blended.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    pub d_position: Vec<Vector3<f64>>,
    pub d_log_scale: Vec<Vector3<f64>>,
    pub d_rotation: Vec<Vector4<f64>>,
    pub d_opacity_raw: Vec<f64>,
    pub d_channels: PrimitiveChannels,
}

impl GradientBuffer {
    pub fn zeros(k: usize) -> Self {
        GradientBuffer {
            d_position: vec![Vector3::zeros(); k],
            d_log_scale: vec![Vector3::zeros(); k],
            d_rotation: vec![Vector4::zeros(); k],
            d_opacity_raw: vec![0.0; k],
            d_channels: PrimitiveChannels::zeros(k),
        }
    }

    /// Elementwise sum, used to combine per-view gradients.
    pub fn add_assign(&mut self, other: &GradientBuffer) {
        let k = self.d_position.len();
        assert_eq!(k, other.d_position.len());
        for i in 0..k {
            self.d_position[i] += other.d_position[i];
            self.d_log_scale[i] += other.d_log_scale[i];
            self.d_rotation[i] += other.d_rotation[i];
            self.d_opacity_raw[i] += other.d_opacity_raw[i];
            self.d_channels.color[i] += other.d_channels.color[i];
            self.d_channels.pbr[i] += other.d_channels.pbr[i];
            self.d_channels.normal[i] += other.d_channels.normal[i];
            self.d_channels.albedo[i] += other.d_channels.albedo[i];
            self.d_channels.roughness[i] += other.d_channels.roughness[i];
            self.d_channels.metallic[i] += other.d_channels.metallic[i];
        }
    }
}

/// Screen-space gradient accumulator for one screen Gaussian.
#[derive(Debug, Clone, Copy)]
struct ScreenGrad {
    d_mean: Vector2<f64>,
    /// dL/d(inv_cov) in full-matrix convention: entries (0,0), (0,1)=(1,0), (1,1).
    d_invcov: [f64; 3],
    d_depth: f64,
    d_opacity: f64,
    d_values: [f64; VALUE_LANES],
}

impl ScreenGrad {
    fn zero() -> Self {
        ScreenGrad {
            d_mean: Vector2::zeros(),
            d_invcov: [0.0; 3],
            d_depth: 0.0,
            d_opacity: 0.0,
            d_values: [0.0; VALUE_LANES],
        }
    }

    fn add(&mut self, o: &ScreenGrad) {
        self.d_mean += o.d_mean;
        for i in 0..3 {
            self.d_invcov[i] += o.d_invcov[i];
        }
        self.d_depth += o.d_depth;
        self.d_opacity += o.d_opacity;
        for i in 0..VALUE_LANES {
            self.d_values[i] += o.d_values[i];
        }
    }
}

/// Interleaves the 8 upstream maps into one W*H*16 lane buffer.
fn mux_upstream(up: &RenderOutput, width: usize, height: usize) -> Result<Vec<f64>> {
    for (name, map) in up.maps() {
        let ch = match name {
            "color" | "pbr" | "normal" | "albedo" => 3,
            _ => 1,
        };
        map.expect_shape(width, height, ch)
            .map_err(|_| Error::Mismatch(format!("upstream {name} map does not match forward resolution")))?;
    }
    let mut buf = vec![0.0f64; width * height * LANES];
    for p in 0..width * height {
        let l = &mut buf[p * LANES..(p + 1) * LANES];
        l[0..3].copy_from_slice(&up.color.data()[p * 3..p * 3 + 3]);
        l[3..6].copy_from_slice(&up.pbr.data()[p * 3..p * 3 + 3]);
        l[6..9].copy_from_slice(&up.normal.data()[p * 3..p * 3 + 3]);
        l[9..12].copy_from_slice(&up.albedo.data()[p * 3..p * 3 + 3]);
        l[12] = up.roughness.data()[p];
        l[13] = up.metallic.data()[p];
        l[14] = up.depth.data()[p];
        l[15] = up.alpha.data()[p];
    }
    Ok(buf)
}

/// ∂R/∂q̂ for the unit-quaternion rotation matrix, q̂ = (w, x, y, z).
#[rustfmt::skip]
fn rotation_quat_jacobian(q: &Vector4<f64>) -> [Matrix3<f64>; 4] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    [
        Matrix3::new(
             0.0, -2.0 * z,  2.0 * y,
             2.0 * z,  0.0, -2.0 * x,
            -2.0 * y,  2.0 * x,  0.0,
        ),
        Matrix3::new(
             0.0,      2.0 * y,  2.0 * z,
             2.0 * y, -4.0 * x, -2.0 * w,
             2.0 * z,  2.0 * w, -4.0 * x,
        ),
        Matrix3::new(
            -4.0 * y,  2.0 * x,  2.0 * w,
             2.0 * x,  0.0,      2.0 * z,
            -2.0 * w,  2.0 * z, -4.0 * y,
        ),
        Matrix3::new(
            -4.0 * z, -2.0 * w,  2.0 * x,
             2.0 * w, -4.0 * z,  2.0 * y,
             2.0 * x,  2.0 * y,  0.0,
        ),
    ]
}

/// Per-primitive gradients after the projection chain.
struct PrimGrad {
    source_index: usize,
    position: Vector3<f64>,
    log_scale: Vector3<f64>,
    rotation: Vector4<f64>,
    opacity_raw: f64,
    values: [f64; VALUE_LANES],
}

/// Chains one screen Gaussian's screen-space gradients through the EWA
/// projection back to raw primitive parameters.
fn chain_projection(
    scene: &RasterScene,
    sg: &ScreenGaussian,
    pc: &ProjCache,
    acc: &ScreenGrad,
) -> PrimGrad {
    let frame = &scene.frame;
    let (fx, fy) = (frame.focal.x, frame.focal.y);
    let (tx, ty, tz) = (pc.t.x, pc.t.y, pc.t.z);
    let inv_z = 1.0 / tz;
    let inv_z2 = inv_z * inv_z;

    // inv_cov -> cov2d:  dL/dC = -Q · dL/dQ · Q  (Q = C⁻¹, full-matrix).
    let gq = Matrix2::new(acc.d_invcov[0], acc.d_invcov[1], acc.d_invcov[1], acc.d_invcov[2]);
    let gc = -(sg.inv_cov * gq * sg.inv_cov);

    // cov2d = J M Jᵀ (+ const low-pass):
    let gj = 2.0 * gc * pc.j * pc.m_cam;
    let gm = pc.j.transpose() * gc * pc.j;
    // M = W Σ Wᵀ with W = camera-from-world rotation:
    let gsigma = frame.rot_wc * gm * frame.rot_cw;

    // Σ = R diag(s²) Rᵀ:
    let d = Matrix3::from_diagonal(&pc.scale.map(|s| s * s));
    let grot = (gsigma + gsigma.transpose()) * pc.rot * d;
    let gd = pc.rot.transpose() * gsigma * pc.rot;
    let log_scale = Vector3::new(
        2.0 * pc.scale.x * pc.scale.x * gd[(0, 0)],
        2.0 * pc.scale.y * pc.scale.y * gd[(1, 1)],
        2.0 * pc.scale.z * pc.scale.z * gd[(2, 2)],
    );

    // Rotation: through R(q̂), then the normalization of the raw quaternion.
    let jr = rotation_quat_jacobian(&pc.q_hat);
    let mut g_qhat = Vector4::zeros();
    for k in 0..4 {
        g_qhat[k] = grot.component_mul(&jr[k]).sum();
    }
    let proj = nalgebra::Matrix4::identity() - pc.q_hat * pc.q_hat.transpose();
    let rotation = proj * g_qhat / pc.q_norm;

    // Camera-space mean: mean2d, the Jacobian entries, and the depth lane.
    let mut gt = Vector3::new(
        acc.d_mean.x * fx * inv_z,
        acc.d_mean.y * fy * inv_z,
        -acc.d_mean.x * fx * tx * inv_z2 - acc.d_mean.y * fy * ty * inv_z2,
    );
    gt.x += gj[(0, 2)] * (-fx * inv_z2);
    gt.y += gj[(1, 2)] * (-fy * inv_z2);
    gt.z += gj[(0, 0)] * (-fx * inv_z2)
        + gj[(0, 2)] * (2.0 * fx * tx * inv_z2 * inv_z)
        + gj[(1, 1)] * (-fy * inv_z2)
        + gj[(1, 2)] * (2.0 * fy * ty * inv_z2 * inv_z);
    gt.z += acc.d_depth;

    PrimGrad {
        source_index: sg.source_index,
        position: frame.rot_wc * gt,
        log_scale,
        rotation,
        opacity_raw: acc.d_opacity * pc.opacity * (1.0 - pc.opacity),
        values: acc.d_values,
    }
}

impl RasterScene {
    /// Gradients of `Σ_maps Σ_pixels upstream ⊙ output` with respect to
    /// primitive parameters and channel values. `channels` must be the
    /// same values the forward pass blended.
    pub fn backward(&self, channels: &PrimitiveChannels, upstream: &RenderOutput) -> Result<GradientBuffer> {
        channels.validate(self.k)?;
        let up = mux_upstream(upstream, self.width, self.height)?;
        let values = pack_values(self, channels);
        let ts = self.settings.tile_size.max(1);

        // Phase 1: per-tile screen-space gradients, merged in tile order.
        let tile_grads: Vec<Option<Vec<ScreenGrad>>> = self
            .bins
            .par_iter()
            .map(|bin| {
                if bin.indices.is_empty() {
                    return None;
                }
                let mut local = vec![ScreenGrad::zero(); bin.indices.len()];
                let x0 = bin.tile_x * ts;
                let x1 = (x0 + ts).min(self.width);
                let y0 = bin.tile_y * ts;
                let y1 = (y0 + ts).min(self.height);
                let mut contributors: Vec<(usize, f64, f64)> = Vec::with_capacity(bin.indices.len());
                for y in y0..y1 {
                    for x in x0..x1 {
                        let g = &up[(y * self.width + x) * LANES..(y * self.width + x + 1) * LANES];
                        if g.iter().all(|v| *v == 0.0) {
                            continue;
                        }
                        self.pixel_backward(bin, x, y, &values, &mut contributors, g, &mut local);
                    }
                }
                Some(local)
            })
            .collect();

        let mut screen_grads = vec![ScreenGrad::zero(); self.screen.len()];
        for (bin, grads) in self.bins.iter().zip(tile_grads) {
            if let Some(grads) = grads {
                for (&si, g) in bin.indices.iter().zip(&grads) {
                    screen_grads[si as usize].add(g);
                }
            }
        }

        // Phase 2: chain through projection, per primitive.
        let prim_grads: Vec<PrimGrad> = (0..self.screen.len())
            .into_par_iter()
            .map(|si| chain_projection(self, &self.screen[si], &self.proj[si], &screen_grads[si]))
            .collect();

        let mut out = GradientBuffer::zeros(self.k);
        for pg in prim_grads {
            let i = pg.source_index;
            out.d_position[i] += pg.position;
            out.d_log_scale[i] += pg.log_scale;
            out.d_rotation[i] += pg.rotation;
            out.d_opacity_raw[i] += pg.opacity_raw;
            out.d_channels.color[i] += Vector3::new(pg.values[0], pg.values[1], pg.values[2]);
            out.d_channels.pbr[i] += Vector3::new(pg.values[3], pg.values[4], pg.values[5]);
            out.d_channels.normal[i] += Vector3::new(pg.values[6], pg.values[7], pg.values[8]);
            out.d_channels.albedo[i] += Vector3::new(pg.values[9], pg.values[10], pg.values[11]);
            out.d_channels.roughness[i] += pg.values[12];
            out.d_channels.metallic[i] += pg.values[13];
        }
        Ok(out)
    }

    /// Recompute-and-reverse for one pixel inside one tile bin.
    #[allow(clippy::too_many_arguments)]
    fn pixel_backward(
        &self,
        bin: &super::TileBin,
        x: usize,
        y: usize,
        values: &[[f64; LANES]],
        contributors: &mut Vec<(usize, f64, f64)>,
        g: &[f64],
        local: &mut [ScreenGrad],
    ) {
        let px = x as f64 + 0.5;
        let py = y as f64 + 0.5;
        contributors.clear();
        let mut transmittance = 1.0;
        for (pos, &si) in bin.indices.iter().enumerate() {
            let sg = &self.screen[si as usize];
            if !sg.rect.contains(x, y) {
                continue;
            }
            let alpha = splat_alpha(sg, px, py);
            if let Some(cut) = self.settings.alpha_cutoff {
                if alpha < cut {
                    continue;
                }
            }
            contributors.push((pos, alpha, transmittance));
            transmittance *= 1.0 - alpha;
            if let Some(floor) = self.settings.transmittance_floor {
                if transmittance < floor {
                    break;
                }
            }
        }

        let mut suffix = [0.0f64; LANES];
        for &(pos, alpha, t) in contributors.iter().rev() {
            let si = bin.indices[pos] as usize;
            let sg = &self.screen[si];
            let v = &values[si];
            let w = alpha * t;
            let acc = &mut local[pos];

            let mut d_alpha = 0.0;
            let inv_rest = 1.0 / (1.0 - alpha);
            for lane in 0..LANES {
                if g[lane] != 0.0 {
                    d_alpha += g[lane] * (v[lane] * t - suffix[lane] * inv_rest);
                }
                if lane < VALUE_LANES {
                    acc.d_values[lane] += g[lane] * w;
                }
            }
            acc.d_depth += g[14] * w;

            // α = opacity · exp(−q/2)
            acc.d_opacity += d_alpha * (alpha / sg.opacity);
            let dq_form = d_alpha * (-0.5 * alpha);
            let dx = px - sg.mean2d.x;
            let dy = py - sg.mean2d.y;
            let qd = Vector2::new(
                sg.inv_cov[(0, 0)] * dx + sg.inv_cov[(0, 1)] * dy,
                sg.inv_cov[(1, 0)] * dx + sg.inv_cov[(1, 1)] * dy,
            );
            acc.d_mean += qd * (-2.0 * dq_form);
            acc.d_invcov[0] += dq_form * dx * dx;
            acc.d_invcov[1] += dq_form * dx * dy;
            acc.d_invcov[2] += dq_form * dy * dy;

            for lane in 0..LANES {
                suffix[lane] += v[lane] * w;
            }
        }
    }
}
