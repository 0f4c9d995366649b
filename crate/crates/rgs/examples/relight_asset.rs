//! Saves a synthetic scene to disk, reloads it, and re-renders it under
//! three substituted lightings, reporting how far each image moves from
//! the original.
//!
//! ```text
//! cargo run --release --example relight_asset [out_dir]
//! ```

use rgs::io::{load_asset, save_asset, write_pfm};
use rgs::metrics::psnr;
use rgs::sh::project_envmap_to_sh;
use rgs::shading::{relight, render_pbr};
use rgs::splat::RasterSettings;
use rgs::synth::{generate_scene, SynthConfig};
use rgs::{EnvironmentMap, Raster, Result, SHLighting};

/// Equirectangular sky: blue gradient up top, warm band at the horizon.
fn sky_map() -> Result<EnvironmentMap> {
    let (w, h) = (64, 32);
    let mut raster = Raster::new(w, h, 3);
    for y in 0..h {
        let t = (y as f64 + 0.5) / h as f64; // 0 zenith, 1 nadir
        let sky = [0.35 + 0.2 * (1.0 - t), 0.5 + 0.3 * (1.0 - t), 1.1 * (1.0 - t) + 0.2];
        let glow = (-((t - 0.5) / 0.08).powi(2)).exp();
        for x in 0..w {
            let px = raster.pixel_mut(x, y);
            for c in 0..3 {
                px[c] = sky[c] + glow * [1.6, 1.1, 0.5][c];
            }
        }
    }
    EnvironmentMap::new(raster)
}

fn main() -> Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "relight_out".into());
    let out = std::path::PathBuf::from(out);
    std::fs::create_dir_all(&out).map_err(|e| rgs::Error::io(&out, e))?;

    let scene = generate_scene(&SynthConfig {
        views: 1,
        count: 24,
        seed: 42,
        resolution: (128, 128),
        samples: 64,
        ..SynthConfig::default()
    })?;
    let cam = &scene.cameras[0];
    let settings = RasterSettings::default();

    // Round-trip through storage; relighting operates on the loaded asset.
    let asset_path = out.join("scene.rgsa");
    save_asset(&asset_path, &scene.asset)?;
    let asset = load_asset(&asset_path)?;

    let original = render_pbr(&asset.cloud, &asset.lighting, cam, 64, &settings)?;
    write_pfm(&out.join("original.pfm"), &original)?;

    let lightings: [(&str, SHLighting); 3] = [
        ("warm", SHLighting::uniform([1.3, 0.9, 0.55])),
        ("cool", SHLighting::uniform([0.55, 0.8, 1.3])),
        ("sky", project_envmap_to_sh(&sky_map()?, 200_000, 7)?),
    ];

    println!("{:<10} {:>12}", "lighting", "psnr vs orig");
    for (name, light) in &lightings {
        let image = relight(&asset, light, cam, 64, &settings)?;
        write_pfm(&out.join(format!("{name}.pfm")), &image)?;
        println!("{name:<10} {:>9.2} dB", psnr(&image, &original)?);
    }
    println!("wrote images to {}", out.display());
    Ok(())
}
