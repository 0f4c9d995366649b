//! A healthy fit's loss trace trends downward: the trailing 100-iteration
//! moving average never rises more than 5% above its best value so far.

use rgs::fit::{fit_scene, FitConfig, SupervisionSet};
use rgs::loss::SupervisionView;
use rgs::shading::render_all;
use rgs::splat::RasterSettings;
use rgs::synth::{generate_scene, SynthConfig};

#[test]
fn trailing_moving_average_is_non_increasing() {
    let synth = SynthConfig {
        views: 6,
        count: 8,
        seed: 3,
        resolution: (48, 48),
        samples: 16,
        ..SynthConfig::default()
    };
    let scene = generate_scene(&synth).unwrap();
    let settings = RasterSettings::default();

    let views: Vec<SupervisionView> = scene
        .cameras
        .iter()
        .map(|camera| {
            let out = render_all(
                &scene.asset.cloud,
                &scene.asset.lighting,
                camera,
                synth.samples,
                &settings,
            )
            .unwrap();
            SupervisionView {
                camera: camera.clone(),
                image: out.pbr,
                mask: vec![true; camera.width() * camera.height()],
                materials: None,
            }
        })
        .collect();

    let result = fit_scene(
        &SupervisionSet { views },
        &FitConfig {
            iterations: 400,
            count: 16,
            samples: 16,
            seed: 1,
            depth_range: (3.6, 5.4),
            init_scale: 0.2,
            ..FitConfig::default()
        },
    )
    .unwrap();

    let totals: Vec<f64> = result.trace.iter().map(|r| r.total).collect();
    assert_eq!(totals.len(), 400);

    const WINDOW: usize = 100;
    let averages: Vec<f64> = (WINDOW..=totals.len())
        .map(|end| totals[end - WINDOW..end].iter().sum::<f64>() / WINDOW as f64)
        .collect();

    let mut best = f64::INFINITY;
    for (i, &ma) in averages.iter().enumerate() {
        assert!(
            ma <= best * 1.05,
            "moving average rose past tolerance at window {i}: {ma} vs best {best}"
        );
        best = best.min(ma);
    }
    assert!(
        averages.last().unwrap() < averages.first().unwrap(),
        "loss should decrease over the run"
    );
}
