//! Procedural ground-truth scenes and dataset emission.
//!
//! The generated scene is a surfel ellipsoid: K disc-like primitives tiled
//! over an ellipsoid shell with outward normals, smooth albedo/roughness/
//! metallic fields, and a DC-dominant SH environment. Everything derives
//! from one seed. The asset is quantized to storage precision *before*
//! rendering, so the emitted maps are bit-identical to re-rendering the
//! emitted asset file with the emitted lighting.
//!
//! Dataset directory layout (all little-endian PFM):
//!
//! ```text
//! cameras.txt   lighting.txt   scene.rgsa
//! view_000_color.pfm      blended color attribute map C
//! view_000_pbr.pfm        physically based render C̃ (the ground-truth image)
//! view_000_normal.pfm     blended normal map packed as (n+1)/2
//! view_000_albedo.pfm     view_000_roughness.pfm   view_000_metallic.pfm
//! view_000_depth.pfm      view_000_alpha.pfm
//! ```

use std::path::Path;

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{look_at, Camera};
use crate::gaussian::{logit, GaussianCloud, RelightableGaussian};
use crate::io::{
    pack_normal_map, save_asset, write_cameras, write_pfm, write_sh_text, SceneAsset,
};
use crate::sh::{SHLighting, SH_COUNT};
use crate::shading::render_all;
use crate::splat::RasterSettings;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Number of rendered views V.
    pub views: usize,
    /// Primitive count K.
    pub count: usize,
    pub seed: u64,
    pub resolution: (usize, usize),
    /// Shading quadrature sample count for the PBR maps.
    pub samples: usize,
    pub settings: RasterSettings,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            views: 16,
            count: 16,
            seed: 7,
            resolution: (64, 64),
            samples: 64,
            settings: RasterSettings::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.views == 0 {
            return Err(Error::Usage("synth needs at least one view".into()));
        }
        if self.count == 0 {
            return Err(Error::Usage("synth needs at least one primitive".into()));
        }
        if self.samples == 0 {
            return Err(Error::Usage("shading sample count must be >= 1".into()));
        }
        if self.resolution.0 < 8 || self.resolution.1 < 8 {
            return Err(Error::Usage(format!(
                "resolution {}x{} is below the 8x8 minimum",
                self.resolution.0, self.resolution.1
            )));
        }
        Ok(())
    }
}

/// A generated scene: the storage-precision asset plus its camera ring.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub asset: SceneAsset,
    pub cameras: Vec<Camera>,
}

/// Scene center; cameras orbit this point.
const CENTER: Vector3<f64> = Vector3::new(0.0, 0.0, 5.0);
const GOLDEN_ANGLE: f64 = 2.399963229728653; // π(3 − √5)

/// Smooth periodic scalar field over the sphere direction, range (0, 1).
fn field(dir: &Vector3<f64>, fa: f64, fb: f64, phase: f64) -> f64 {
    0.5 + 0.5 * (fa * dir.x + fb * dir.y + (fa - fb) * dir.z + phase).sin()
}

pub fn generate_scene(cfg: &SynthConfig) -> Result<SynthScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let radii = Vector3::new(
        rng.random_range(0.9..1.15),
        rng.random_range(0.75..1.0),
        rng.random_range(0.6..0.85),
    );
    // Tangent footprint sized so K discs tile the shell with overlap.
    let mean_r = f64::cbrt(radii.x * radii.y * radii.z);
    let spacing = (4.0 * std::f64::consts::PI * mean_r * mean_r / cfg.count as f64).sqrt();
    let s_tangent = 0.80 * spacing;
    let s_normal = 0.18 * s_tangent;

    let k = cfg.count;
    let phases: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));
    let mut prims = Vec::with_capacity(k);
    for i in 0..k {
        // Fibonacci sphere placement with a little seeded radial jitter.
        let z = 1.0 - (2.0 * i as f64 + 1.0) / k as f64;
        let r_xy = (1.0 - z * z).sqrt();
        let phi = GOLDEN_ANGLE * i as f64;
        let dir = Vector3::new(r_xy * phi.cos(), r_xy * phi.sin(), z);
        let jitter = rng.random_range(0.97..1.03);
        let position = CENTER + radii.component_mul(&dir) * jitter;

        // Outward ellipsoid normal: gradient of (x/a)² + (y/b)² + (z/c)².
        let normal = Vector3::new(
            dir.x / (radii.x * radii.x),
            dir.y / (radii.y * radii.y),
            dir.z / (radii.z * radii.z),
        )
        .normalize();
        let rotation = UnitQuaternion::rotation_between(&Vector3::z(), &normal)
            .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI))
            .into_inner();

        let albedo = Vector3::new(
            0.25 + 0.5 * field(&dir, 2.0, 1.0, phases[0]),
            0.25 + 0.5 * field(&dir, 1.0, 2.0, phases[1]),
            0.25 + 0.5 * field(&dir, 1.5, 1.5, phases[2]),
        );
        let color = Vector3::new(
            0.2 + 0.6 * field(&dir, 1.0, 3.0, phases[3]),
            0.2 + 0.6 * field(&dir, 3.0, 1.0, phases[4]),
            0.2 + 0.6 * field(&dir, 2.0, 2.0, phases[5]),
        );
        prims.push(RelightableGaussian {
            position,
            log_scale: Vector3::new(s_tangent.ln(), s_tangent.ln(), s_normal.ln()),
            rotation,
            opacity_raw: logit(rng.random_range(0.82..0.94)),
            color,
            normal_raw: normal,
            albedo,
            roughness: 0.45 + 0.3 * field(&dir, 2.5, 0.5, phases[0] + 1.0),
            metallic: 0.05 + 0.25 * field(&dir, 0.5, 2.5, phases[1] + 2.0),
        });
    }
    let cloud = GaussianCloud::new(prims)?;

    let mut lighting = SHLighting::uniform([
        rng.random_range(0.95..1.2),
        rng.random_range(0.9..1.15),
        rng.random_range(0.85..1.1),
    ]);
    for band in 1..SH_COUNT {
        let scale = 0.12 / (1.0 + (band as f64).sqrt());
        for ch in 0..3 {
            lighting.coeffs[band][ch] = rng.random_range(-scale..scale);
        }
    }

    let (w, h) = cfg.resolution;
    let focal = 1.1 * w.max(h) as f64;
    let pp = Vector2::new(w as f64 / 2.0 + 0.5, h as f64 / 2.0 + 0.5);
    let cameras = (0..cfg.views)
        .map(|i| {
            let azimuth = GOLDEN_ANGLE * i as f64;
            let elevation = 0.15 + 0.45 * ((i * 5) % cfg.views) as f64 / cfg.views as f64;
            let elevation = if i % 2 == 0 { elevation } else { -elevation };
            let dist = 4.5;
            let eye = CENTER
                + dist
                    * Vector3::new(
                        elevation.cos() * azimuth.cos(),
                        elevation.sin(),
                        elevation.cos() * azimuth.sin(),
                    );
            Camera::new(
                Vector2::new(focal, focal),
                pp,
                (w, h),
                look_at(eye, CENTER, Vector3::y())?,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SynthScene {
        asset: SceneAsset { cloud, lighting }.quantized(),
        cameras,
    })
}

pub fn view_file(dir: &Path, index: usize, map: &str) -> std::path::PathBuf {
    dir.join(format!("view_{index:03}_{map}.pfm"))
}

/// Generates the scene and writes the complete dataset directory.
pub fn write_dataset(dir: &Path, cfg: &SynthConfig) -> Result<SynthScene> {
    let scene = generate_scene(cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    write_cameras(&dir.join("cameras.txt"), &scene.cameras)?;
    write_sh_text(&dir.join("lighting.txt"), &scene.asset.lighting)?;
    save_asset(&dir.join("scene.rgsa"), &scene.asset)?;

    for (i, cam) in scene.cameras.iter().enumerate() {
        let out = render_all(
            &scene.asset.cloud,
            &scene.asset.lighting,
            cam,
            cfg.samples,
            &cfg.settings,
        )?;
        write_pfm(&view_file(dir, i, "color"), &out.color)?;
        write_pfm(&view_file(dir, i, "pbr"), &out.pbr)?;
        write_pfm(&view_file(dir, i, "normal"), &pack_normal_map(&out.normal)?)?;
        write_pfm(&view_file(dir, i, "albedo"), &out.albedo)?;
        write_pfm(&view_file(dir, i, "roughness"), &out.roughness)?;
        write_pfm(&view_file(dir, i, "metallic"), &out.metallic)?;
        write_pfm(&view_file(dir, i, "depth"), &out.depth)?;
        write_pfm(&view_file(dir, i, "alpha"), &out.alpha)?;
    }
    Ok(scene)
}
