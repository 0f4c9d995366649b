//! Batch command line for the engine: scene synthesis, fitting, rendering,
//! relighting, environment projection, and evaluation.
//!
//! Every run echoes its fully resolved configuration as `config:` lines so
//! transcripts document exactly what produced an artifact. All subcommands
//! are deterministic for a fixed seed; `--workers 1` additionally pins the
//! thread count, though results do not depend on it.
//!
//! Exit codes: 0 success, 2 usage, 3 unreadable or malformed input, 4
//! numerical failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use rgs::dataset::load_supervision;
use rgs::fit::{fit_scene, FitConfig, TraceRow};
use rgs::io::{
    load_asset, pack_normal_map, read_cameras, read_config, read_envmap, read_raster,
    read_sh_text, save_asset, write_pfm, write_sh_text,
};
use rgs::loss::LossWeights;
use rgs::metrics::{chamfer_distance, extract_point_cloud, f_score, psnr, ssim};
use rgs::sh::project_envmap_to_sh;
use rgs::shading::{relight, render_all};
use rgs::splat::RasterSettings;
use rgs::synth::{view_file, write_dataset, SynthConfig};
use rgs::{Error, Result};

#[derive(Parser)]
#[command(name = "rgs", version, about = "Relightable Gaussian splatting pipeline")]
struct Cli {
    /// Rayon thread count; 0 uses all cores. Outputs are identical for
    /// any value.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic ground-truth dataset directory.
    Synth(SynthArgs),
    /// Fit a relightable scene to a dataset directory.
    Fit(Box<FitArgs>),
    /// Render attribute maps of an asset from a stored camera.
    Render(RenderArgs),
    /// Re-render an asset's image under substituted lighting.
    Relight(RelightArgs),
    /// Project an equirectangular environment map onto the SH basis.
    ProjectEnv(ProjectEnvArgs),
    /// Image and point-cloud metrics between predictions and references.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    views: usize,
    #[arg(long, default_value_t = 16)]
    count: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// WxH, e.g. 64x64.
    #[arg(long, default_value = "64x64")]
    resolution: String,
    /// Shading quadrature sample count.
    #[arg(long, default_value_t = 64)]
    samples: usize,
}

#[derive(Args)]
struct FitArgs {
    /// Dataset directory (as written by `rgs synth`).
    #[arg(long)]
    data: PathBuf,
    /// Output directory for scene.rgsa, lighting.txt, trace.csv, metrics.csv.
    #[arg(long)]
    out: PathBuf,
    /// key=value config file; explicit flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Primitive budget K.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Initialization depth interval, LO:HI.
    #[arg(long, value_name = "LO:HI")]
    depth_range: Option<String>,
    #[arg(long)]
    init_scale: Option<f64>,
    /// SH text file with the known capture lighting; fixes the environment
    /// instead of estimating it.
    #[arg(long)]
    lighting: Option<PathBuf>,
    /// Ignore material maps even when the dataset has them.
    #[arg(long)]
    no_materials: bool,
    #[arg(long)]
    lambda_image: Option<f64>,
    #[arg(long)]
    lambda_pbr: Option<f64>,
    #[arg(long)]
    lambda_material: Option<f64>,
    #[arg(long)]
    lambda_consistency: Option<f64>,
    #[arg(long)]
    lambda_smooth: Option<f64>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    asset: PathBuf,
    /// Camera list file; `--view` indexes into it.
    #[arg(long)]
    cameras: PathBuf,
    #[arg(long)]
    view: usize,
    /// Comma-separated subset of color,pbr,normal,albedo,roughness,metallic,depth,alpha.
    #[arg(long, default_value = "pbr")]
    maps: String,
    #[arg(long, default_value_t = 64)]
    samples: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RelightArgs {
    #[arg(long)]
    asset: PathBuf,
    /// SH text file with the new lighting.
    #[arg(long, conflicts_with = "env")]
    sh: Option<PathBuf>,
    /// Equirectangular environment map (.hdr or .pfm) to project.
    #[arg(long)]
    env: Option<PathBuf>,
    /// Monte-Carlo samples for `--env` projection.
    #[arg(long, default_value_t = 200_000)]
    env_samples: usize,
    /// Projection seed for `--env`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    cameras: PathBuf,
    #[arg(long)]
    view: usize,
    #[arg(long, default_value_t = 64)]
    samples: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProjectEnvArgs {
    /// Equirectangular environment map (.hdr or .pfm).
    #[arg(long)]
    env: PathBuf,
    /// Output SH text file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted image file, or a directory of them.
    #[arg(long)]
    pred: PathBuf,
    /// Reference image file or directory; directories pair by file name.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Optional assets for point-cloud metrics.
    #[arg(long)]
    pred_asset: Option<PathBuf>,
    #[arg(long, requires = "pred_asset")]
    ref_asset: Option<PathBuf>,
    /// F-score distance threshold.
    #[arg(long, default_value_t = 0.01)]
    tau: f64,
    /// Primitives below this opacity are excluded from point clouds.
    #[arg(long, default_value_t = 0.5)]
    opacity_min: f64,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if cli.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
            .expect("rayon pool already initialized");
    }
    println!("config: workers = {}", cli.workers);
    let result = match cli.command {
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Fit(a) => cmd_fit(*a),
        Cmd::Render(a) => cmd_render(a),
        Cmd::Relight(a) => cmd_relight(a),
        Cmd::ProjectEnv(a) => cmd_project_env(a),
        Cmd::Eval(a) => cmd_eval(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn parse_resolution(s: &str) -> Result<(usize, usize)> {
    let parse = |t: &str| {
        t.parse::<usize>()
            .map_err(|_| Error::Usage(format!("bad resolution {s:?}, expected WxH")))
    };
    match s.split_once(['x', 'X']) {
        Some((w, h)) => Ok((parse(w)?, parse(h)?)),
        None => Err(Error::Usage(format!("bad resolution {s:?}, expected WxH"))),
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        views: a.views,
        count: a.count,
        seed: a.seed,
        resolution: parse_resolution(&a.resolution)?,
        samples: a.samples,
        ..SynthConfig::default()
    };
    println!("config: subcommand = synth");
    println!("config: out = {}", a.out.display());
    println!("config: views = {}", cfg.views);
    println!("config: count = {}", cfg.count);
    println!("config: seed = {}", cfg.seed);
    println!("config: resolution = {}x{}", cfg.resolution.0, cfg.resolution.1);
    println!("config: samples = {}", cfg.samples);
    let scene = write_dataset(&a.out, &cfg)?;
    println!(
        "synth: wrote {} views of {} primitives to {}",
        scene.cameras.len(),
        scene.asset.cloud.len(),
        a.out.display()
    );
    Ok(())
}

/// Flag value if given, else the config-file entry, else the default.
struct Resolver {
    entries: BTreeMap<String, String>,
}

impl Resolver {
    fn new(path: Option<&Path>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        if let Some(p) = path {
            for (k, v) in read_config(p)? {
                entries.insert(k, v);
            }
        }
        Ok(Resolver { entries })
    }

    fn take<T: std::str::FromStr>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        if let Some(v) = flag {
            self.entries.remove(key);
            return Ok(v);
        }
        match self.entries.remove(key) {
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::Usage(format!("config key {key}: cannot parse {raw:?}"))),
            None => Ok(default),
        }
    }

    /// Unknown keys are rejected, mirroring unknown-flag rejection.
    fn finish(self) -> Result<()> {
        if let Some(key) = self.entries.into_keys().next() {
            return Err(Error::Usage(format!("unknown config key {key:?}")));
        }
        Ok(())
    }
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let mut r = Resolver::new(a.config.as_deref())?;
    let defaults = FitConfig::default();
    let dw = LossWeights::default();
    let dr = defaults.rates.clone();

    let depth_range = match a.depth_range {
        Some(s) => {
            let (lo, hi) = s
                .split_once(':')
                .ok_or_else(|| Error::Usage(format!("bad depth range {s:?}, expected LO:HI")))?;
            let parse = |t: &str| {
                t.parse::<f64>()
                    .map_err(|_| Error::Usage(format!("bad depth range {s:?}, expected LO:HI")))
            };
            (parse(lo)?, parse(hi)?)
        }
        None => (
            r.take("depth_min", None, defaults.depth_range.0)?,
            r.take("depth_max", None, defaults.depth_range.1)?,
        ),
    };

    let mut cfg = FitConfig {
        iterations: r.take("iterations", a.iterations, defaults.iterations)?,
        count: r.take("count", a.count, defaults.count)?,
        samples: r.take("samples", a.samples, defaults.samples)?,
        seed: r.take("seed", a.seed, defaults.seed)?,
        weights: LossWeights {
            image: r.take("lambda_image", a.lambda_image, dw.image)?,
            pbr: r.take("lambda_pbr", a.lambda_pbr, dw.pbr)?,
            material: r.take("lambda_material", a.lambda_material, dw.material)?,
            consistency: r.take("lambda_consistency", a.lambda_consistency, dw.consistency)?,
            smooth: r.take("lambda_smooth", a.lambda_smooth, dw.smooth)?,
        },
        depth_range,
        init_scale: r.take("init_scale", a.init_scale, defaults.init_scale)?,
        log_every: r.take("log_every", None, defaults.log_every)?,
        ..FitConfig::default()
    };
    cfg.rates.position = r.take("lr_position", None, dr.position)?;
    cfg.rates.rotation = r.take("lr_rotation", None, dr.rotation)?;
    cfg.rates.scale = r.take("lr_scale", None, dr.scale)?;
    cfg.rates.opacity = r.take("lr_opacity", None, dr.opacity)?;
    cfg.rates.color = r.take("lr_color", None, dr.color)?;
    cfg.rates.material = r.take("lr_material", None, dr.material)?;
    cfg.rates.normal = r.take("lr_normal", None, dr.normal)?;
    cfg.rates.lighting = r.take("lr_lighting", None, dr.lighting)?;
    r.finish()?;
    if let Some(p) = &a.lighting {
        cfg.known_lighting = Some(read_sh_text(p)?);
    }

    println!("config: subcommand = fit");
    println!("config: data = {}", a.data.display());
    println!("config: out = {}", a.out.display());
    println!("config: iterations = {}", cfg.iterations);
    println!("config: count = {}", cfg.count);
    println!("config: samples = {}", cfg.samples);
    println!("config: seed = {}", cfg.seed);
    println!("config: depth_range = {}:{}", cfg.depth_range.0, cfg.depth_range.1);
    println!("config: init_scale = {}", cfg.init_scale);
    println!(
        "config: lambdas = image {} pbr {} material {} consistency {} smooth {}",
        cfg.weights.image, cfg.weights.pbr, cfg.weights.material, cfg.weights.consistency, cfg.weights.smooth
    );
    println!(
        "config: rates = position {} rotation {} scale {} opacity {} color {} material {} normal {} lighting {}",
        cfg.rates.position, cfg.rates.rotation, cfg.rates.scale, cfg.rates.opacity,
        cfg.rates.color, cfg.rates.material, cfg.rates.normal, cfg.rates.lighting
    );
    println!(
        "config: lighting = {}",
        a.lighting.as_ref().map_or("estimated".into(), |p| p.display().to_string())
    );
    println!("config: materials = {}", if a.no_materials { "ignored" } else { "used" });

    let sup = load_supervision(&a.data, !a.no_materials)?;
    let result = fit_scene(&sup, &cfg)?;
    for row in result.trace.iter().step_by(cfg.log_every.max(1)) {
        println!("fit: iter {:5}  total {:.6}", row.iteration, row.total);
    }

    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    // Quantize to storage precision first so the reported metrics are the
    // saved asset's, not the in-memory one's.
    let asset = result.asset.quantized();
    save_asset(&a.out.join("scene.rgsa"), &asset)?;
    write_sh_text(&a.out.join("lighting.txt"), &asset.lighting)?;
    let mut trace = String::from(TraceRow::CSV_HEADER);
    trace.push('\n');
    for row in &result.trace {
        trace.push_str(&row.csv_line());
        trace.push('\n');
    }
    let trace_path = a.out.join("trace.csv");
    std::fs::write(&trace_path, trace).map_err(|e| Error::io(&trace_path, e))?;

    let settings = RasterSettings::default();
    let mut metrics = String::from("view,psnr,ssim\n");
    let mut mean_psnr = 0.0;
    for (i, view) in sup.views.iter().enumerate() {
        let out = render_all(&asset.cloud, &asset.lighting, &view.camera, cfg.samples, &settings)?;
        let p = psnr(&out.pbr, &view.image)?;
        let s = ssim(&out.pbr, &view.image)?;
        metrics.push_str(&format!("{i},{p},{s}\n"));
        mean_psnr += p / sup.views.len() as f64;
    }
    let metrics_path = a.out.join("metrics.csv");
    std::fs::write(&metrics_path, metrics).map_err(|e| Error::io(&metrics_path, e))?;

    println!(
        "fit: final total {:.6}, training-view mean psnr {mean_psnr:.2} dB",
        result.trace.last().map_or(f64::NAN, |r| r.total)
    );
    println!("fit: wrote scene.rgsa, lighting.txt, trace.csv, metrics.csv to {}", a.out.display());
    Ok(())
}

const MAP_NAMES: [&str; 8] = [
    "color", "pbr", "normal", "albedo", "roughness", "metallic", "depth", "alpha",
];

fn cmd_render(a: RenderArgs) -> Result<()> {
    let maps: Vec<&str> = a.maps.split(',').map(str::trim).filter(|m| !m.is_empty()).collect();
    if maps.is_empty() {
        return Err(Error::Usage("no maps requested".into()));
    }
    for m in &maps {
        if !MAP_NAMES.contains(m) {
            return Err(Error::Usage(format!(
                "unknown map {m:?}; choose from {}",
                MAP_NAMES.join(",")
            )));
        }
    }
    println!("config: subcommand = render");
    println!("config: asset = {}", a.asset.display());
    println!("config: cameras = {}", a.cameras.display());
    println!("config: view = {}", a.view);
    println!("config: maps = {}", maps.join(","));
    println!("config: samples = {}", a.samples);
    println!("config: out = {}", a.out.display());

    let asset = load_asset(&a.asset)?;
    let cameras = read_cameras(&a.cameras)?;
    let cam = cameras.get(a.view).ok_or_else(|| {
        Error::Usage(format!("view {} out of range, camera list has {}", a.view, cameras.len()))
    })?;
    let settings = RasterSettings::default();
    let out = render_all(&asset.cloud, &asset.lighting, cam, a.samples, &settings)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for m in &maps {
        let raster = match *m {
            "color" => &out.color,
            "pbr" => &out.pbr,
            "normal" => &pack_normal_map(&out.normal)?,
            "albedo" => &out.albedo,
            "roughness" => &out.roughness,
            "metallic" => &out.metallic,
            "depth" => &out.depth,
            "alpha" => &out.alpha,
            _ => unreachable!(),
        };
        let path = view_file(&a.out, a.view, m);
        write_pfm(&path, raster)?;
        println!("render: wrote {}", path.display());
    }
    Ok(())
}

fn cmd_relight(a: RelightArgs) -> Result<()> {
    println!("config: subcommand = relight");
    println!("config: asset = {}", a.asset.display());
    let light = match (&a.sh, &a.env) {
        (Some(p), None) => {
            println!("config: lighting = sh {}", p.display());
            read_sh_text(p)?
        }
        (None, Some(p)) => {
            println!(
                "config: lighting = env {} ({} samples, seed {})",
                p.display(),
                a.env_samples,
                a.seed
            );
            project_envmap_to_sh(&read_envmap(p)?, a.env_samples, a.seed)?
        }
        _ => return Err(Error::Usage("pass exactly one of --sh or --env".into())),
    };
    println!("config: cameras = {}", a.cameras.display());
    println!("config: view = {}", a.view);
    println!("config: samples = {}", a.samples);
    println!("config: out = {}", a.out.display());

    let asset = load_asset(&a.asset)?;
    let cameras = read_cameras(&a.cameras)?;
    let cam = cameras.get(a.view).ok_or_else(|| {
        Error::Usage(format!("view {} out of range, camera list has {}", a.view, cameras.len()))
    })?;
    let image = relight(&asset, &light, cam, a.samples, &RasterSettings::default())?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let path = view_file(&a.out, a.view, "pbr");
    write_pfm(&path, &image)?;
    write_sh_text(&a.out.join("lighting.txt"), &light)?;
    println!("relight: wrote {}", path.display());
    Ok(())
}

fn cmd_project_env(a: ProjectEnvArgs) -> Result<()> {
    println!("config: subcommand = project-env");
    println!("config: env = {}", a.env.display());
    println!("config: out = {}", a.out.display());
    println!("config: samples = {}", a.samples);
    println!("config: seed = {}", a.seed);
    let sh = project_envmap_to_sh(&read_envmap(&a.env)?, a.samples, a.seed)?;
    write_sh_text(&a.out, &sh)?;
    println!("project-env: wrote {}", a.out.display());
    Ok(())
}

fn image_pairs(pred: &Path, reference: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    match (pred.is_dir(), reference.is_dir()) {
        (true, true) => {
            let names = |dir: &Path| -> Result<Vec<String>> {
                let mut v = Vec::new();
                for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
                    let entry = entry.map_err(|e| Error::io(dir, e))?;
                    let name = entry.file_name().to_string_lossy().into_owned();
                    if name.ends_with(".pfm") || name.ends_with(".png") {
                        v.push(name);
                    }
                }
                v.sort();
                Ok(v)
            };
            let refs = names(reference)?;
            let pairs: Vec<_> = names(pred)?
                .into_iter()
                .filter(|n| refs.contains(n))
                .map(|n| (n.clone(), pred.join(&n), reference.join(&n)))
                .collect();
            if pairs.is_empty() {
                return Err(Error::Mismatch(format!(
                    "no common image names between {} and {}",
                    pred.display(),
                    reference.display()
                )));
            }
            Ok(pairs)
        }
        (false, false) => {
            let name = pred
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "image".into());
            Ok(vec![(name, pred.to_path_buf(), reference.to_path_buf())])
        }
        _ => Err(Error::Usage(
            "--pred and --ref must both be files or both be directories".into(),
        )),
    }
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    if !(a.tau.is_finite() && a.tau > 0.0) {
        return Err(Error::Usage(format!("tau must be positive and finite, got {}", a.tau)));
    }
    println!("config: subcommand = eval");
    println!("config: pred = {}", a.pred.display());
    println!("config: ref = {}", a.reference.display());
    println!("config: tau = {}", a.tau);
    println!("config: opacity_min = {}", a.opacity_min);

    let mut csv = String::from("sample,psnr,ssim,chamfer,fscore\n");
    for (name, p, r) in image_pairs(&a.pred, &a.reference)? {
        let (pred, reference) = (read_raster(&p)?, read_raster(&r)?);
        let psnr_v = psnr(&pred, &reference)?;
        let ssim_v = ssim(&pred, &reference)?;
        csv.push_str(&format!("{name},{psnr_v},{ssim_v},,\n"));
    }
    if let (Some(pa), Some(ra)) = (&a.pred_asset, &a.ref_asset) {
        let pc = extract_point_cloud(&load_asset(pa)?, a.opacity_min)?;
        let rc = extract_point_cloud(&load_asset(ra)?, a.opacity_min)?;
        let chamfer = chamfer_distance(&pc, &rc)?;
        let fs = f_score(&pc, &rc, a.tau)?;
        csv.push_str(&format!("cloud,,,{chamfer},{fs}\n"));
    }
    match &a.out {
        Some(path) => {
            std::fs::write(path, &csv).map_err(|e| Error::io(path, e))?;
            println!("eval: wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}
