use nalgebra::{UnitQuaternion, Vector3};
use rgs::brdf::BrdfMode;
use rgs::gaussian::ActivatedGaussian;
use rgs::shading::shade_primitive;
use rgs::SHLighting;

fn surfel(albedo: f64, roughness: f64, metallic: f64) -> ActivatedGaussian {
    ActivatedGaussian {
        position: Vector3::new(0.0, 0.0, 5.0),
        scale: Vector3::new(0.1, 0.1, 0.01),
        rotation: UnitQuaternion::identity(),
        opacity: 1.0,
        color: Vector3::new(0.5, 0.5, 0.5),
        normal: Vector3::new(0.0, 0.0, -1.0),
        albedo: Vector3::new(albedo, albedo, albedo),
        roughness,
        metallic,
    }
}

fn main() {
    let light = SHLighting::uniform([1.0, 1.0, 1.0]);
    let wo = Vector3::new(0.0, 0.0, -1.0);
    println!("{:>10} {:>9} {:>12} {:>12}", "roughness", "samples", "dielectric", "metal");
    for roughness in [0.05f64, 0.1, 0.2, 0.3, 0.5, 1.0] {
        for samples in [64usize, 1024, 16384, 262144] {
            let d = shade_primitive(&surfel(1.0, roughness, 0.0), &light, &wo, samples, BrdfMode::Full).unwrap();
            let m = shade_primitive(&surfel(1.0, roughness, 1.0), &light, &wo, samples, BrdfMode::Full).unwrap();
            println!("{roughness:>10.2} {samples:>9} {:>12.5} {:>12.5}", d.x, m.x);
        }
    }
}
