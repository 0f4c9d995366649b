//! Renders every attribute map of a synthetic scene from one view and
//! writes them as PFM files.
//!
//! ```text
//! cargo run --release --example render_maps [out_dir]
//! ```

use rgs::io::{pack_normal_map, write_pfm};
use rgs::shading::render_all;
use rgs::splat::RasterSettings;
use rgs::synth::{generate_scene, view_file, SynthConfig};
use rgs::{Raster, Result};

fn main() -> Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "maps_out".into());
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
    let maps = render_all(
        &scene.asset.cloud,
        &scene.asset.lighting,
        cam,
        64,
        &RasterSettings::default(),
    )?;

    let packed_normal = pack_normal_map(&maps.normal)?;
    let named: [(&str, &Raster); 8] = [
        ("color", &maps.color),
        ("pbr", &maps.pbr),
        ("normal", &packed_normal),
        ("albedo", &maps.albedo),
        ("roughness", &maps.roughness),
        ("metallic", &maps.metallic),
        ("depth", &maps.depth),
        ("alpha", &maps.alpha),
    ];
    println!("{:<10} {:>4} {:>10} {:>10}", "map", "ch", "min", "max");
    for (name, raster) in named {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in raster.data() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        println!("{name:<10} {:>4} {lo:>10.4} {hi:>10.4}", raster.channels());
        write_pfm(&view_file(&out, 0, name), raster)?;
    }
    println!("wrote 8 maps to {}", out.display());
    Ok(())
}
