//! Projects an analytic environment map onto the 16-coefficient SH basis
//! at increasing sample counts and shows the estimate converging.
//!
//! ```text
//! cargo run --release --example project_environment
//! ```

use rgs::sh::project_envmap_to_sh;
use rgs::{EnvironmentMap, Raster, Result, SHLighting};

/// Overcast dome: radiance falls off linearly from zenith to horizon and
/// is zero below, a standard CIE-like test field.
fn overcast() -> Result<EnvironmentMap> {
    let (w, h) = (128, 64);
    let mut raster = Raster::new(w, h, 3);
    for y in 0..h {
        let elevation = 1.0 - 2.0 * (y as f64 + 0.5) / h as f64; // sin of altitude
        let v = elevation.max(0.0);
        for x in 0..w {
            raster.pixel_mut(x, y).copy_from_slice(&[v, v, v]);
        }
    }
    EnvironmentMap::new(raster)
}

fn band_norms(sh: &SHLighting) -> [f64; 4] {
    // Coefficients grouped by degree: 1, 3, 5, 7 entries.
    let mut norms = [0.0; 4];
    for (k, rgb) in sh.coeffs.iter().enumerate() {
        let l = (k as f64).sqrt() as usize;
        norms[l] += rgb.iter().map(|v| v * v).sum::<f64>();
    }
    norms.map(f64::sqrt)
}

fn main() -> Result<()> {
    let env = overcast()?;
    let reference = project_envmap_to_sh(&env, 4_000_000, 99)?;

    println!(
        "{:>9} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "samples", "dc", "|l=1|", "|l=2|", "|l=3|", "max err"
    );
    for samples in [10_000, 40_000, 160_000, 640_000, 2_560_000] {
        let sh = project_envmap_to_sh(&env, samples, 5)?;
        let norms = band_norms(&sh);
        let max_err = sh
            .coeffs
            .iter()
            .flatten()
            .zip(reference.coeffs.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!(
            "{samples:>9} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {max_err:>10.5}",
            sh.coeffs[0][0], norms[1], norms[2], norms[3]
        );
    }

    // The dome covers half the sphere with mean radiance 1/2 over it, so
    // the DC coefficient approaches 2√π times the sphere-wide mean 1/4.
    let expected_dc = 2.0 * std::f64::consts::PI.sqrt() * 0.25;
    println!("\nanalytic dc {expected_dc:.5}, estimated {:.5}", reference.coeffs[0][0]);
    Ok(())
}
