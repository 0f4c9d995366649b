//! Degradation study: perturbs a scene's positions with growing noise and
//! tracks every metric the crate provides.
//!
//! ```text
//! cargo run --release --example evaluate_metrics
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rgs::metrics::{chamfer_distance, extract_point_cloud, f_score, psnr, ssim};
use rgs::shading::render_pbr;
use rgs::splat::RasterSettings;
use rgs::synth::{generate_scene, SynthConfig};
use rgs::Result;

fn main() -> Result<()> {
    let scene = generate_scene(&SynthConfig {
        views: 1,
        count: 32,
        seed: 13,
        resolution: (96, 96),
        samples: 32,
        ..SynthConfig::default()
    })?;
    let cam = &scene.cameras[0];
    let settings = RasterSettings::default();
    let reference = render_pbr(&scene.asset.cloud, &scene.asset.lighting, cam, 32, &settings)?;
    let ref_cloud = extract_point_cloud(&scene.asset, 0.5)?;

    println!(
        "{:>8} {:>9} {:>8} {:>10} {:>8}",
        "sigma", "psnr", "ssim", "chamfer", "fscore"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for sigma in [0.0, 0.005, 0.02, 0.08, 0.3] {
        let mut asset = scene.asset.clone();
        for g in &mut asset.cloud.primitives {
            for c in 0..3 {
                g.position[c] += sigma * rng.random_range(-1.0..1.0);
            }
        }
        let image = render_pbr(&asset.cloud, &asset.lighting, cam, 32, &settings)?;
        let cloud = extract_point_cloud(&asset, 0.5)?;
        println!(
            "{sigma:>8.3} {:>9.2} {:>8.4} {:>10.6} {:>8.4}",
            psnr(&image, &reference)?,
            ssim(&image, &reference)?,
            chamfer_distance(&cloud, &ref_cloud)?,
            f_score(&cloud, &ref_cloud, 0.05)?
        );
    }
    Ok(())
}
