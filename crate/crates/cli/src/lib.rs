//! Command implementations behind the `egavatar` binary.
//!
//! Every command reads and writes through `egavatar::assets` and renders
//! through `egavatar::pipeline`, so the editor service and the command line
//! produce the same bytes for the same state.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use egavatar::assets::pfm::{dump_buffers, sha256_hex};
use egavatar::assets::png::{decode_png, encode_png};
use egavatar::assets::scene::{load_settings, yaw_sweep, SceneFile};
use egavatar::assets::{export_ply, load_bundle, save_bundle, AvatarBundle};
use egavatar::desk::{desk_avatar, random_cloud, scene_camera, DeskOptions};
use egavatar::gaussgen::GaussianCloud;
use egavatar::gradients::{fit_textures, forward, FitConfig, FitTarget, GradScene, LossReport, OcclusionSource, ParamSet};
use egavatar::headmodel::save_rig;
use egavatar::math::Vec3;
use egavatar::pipeline::{paste_albedo, render_track, validate_uv_rect, Avatar, Frame, FrameSpec, RenderSettings};
use egavatar::splatter::{rasterize, rasterize_reference, Camera};
use egavatar::Error;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_ASSET: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFinite(_) | Error::ZeroVector => EXIT_NUMERIC,
            _ => EXIT_ASSET,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "egavatar", version, about = "Render, edit and export Gaussian head avatars")]
pub struct Cli {
    /// Seed for every random choice a command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Render settings (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a still, a scene track or a yaw sweep to PNG frames.
    #[command(visible_alias = "animate")]
    Render(RenderArgs),
    /// Paste a PNG into the albedo map over a UV rectangle.
    Edit(EditArgs),
    /// Combine one bundle's face with another bundle's hair.
    SwapHair(SwapHairArgs),
    /// Write the Gaussian cloud of one pose as a PLY file.
    ExportPly(ExportPlyArgs),
    /// Fit albedo and bump to target views by gradient descent.
    Fit(FitArgs),
    /// Time the tile and reference rasterizers.
    Bench(BenchArgs),
    /// Build the procedural desk avatar bundle.
    MakeDeskRig(DeskArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ViewArgs {
    /// Scene JSON with one entry per frame.
    #[arg(long, conflicts_with = "yaw_sweep")]
    pub scene: Option<PathBuf>,
    /// Orbit this many frames around the head instead of reading a scene.
    #[arg(long, value_name = "FRAMES")]
    pub yaw_sweep: Option<usize>,
    #[arg(long, default_value_t = -30.0, allow_hyphen_values = true)]
    pub yaw_from: f64,
    #[arg(long, default_value_t = 30.0, allow_hyphen_values = true)]
    pub yaw_to: f64,
    /// Camera distance from the head center for generated views, meters.
    #[arg(long, default_value_t = 0.6)]
    pub distance: f64,
    #[arg(long, default_value_t = 512)]
    pub width: usize,
    #[arg(long, default_value_t = 512)]
    pub height: usize,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[command(flatten)]
    pub view: ViewArgs,
    /// Output directory for frame_NNNN.png.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Also write mask/depth/normal/albedo/alpha PFM files per frame.
    #[arg(long)]
    pub dump_buffers: bool,
    /// Reuse frame 0's attributes for later frames (default).
    #[arg(long, overrides_with = "no_cache")]
    pub cache: bool,
    /// Regenerate every attribute per frame.
    #[arg(long, overrides_with = "cache")]
    pub no_cache: bool,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// RGB patch to paste.
    #[arg(long)]
    pub image: PathBuf,
    /// Target rectangle u0,v0,u1,v1 in [0,1].
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    pub uv_rect: Vec<f64>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SwapHairArgs {
    /// Bundle providing everything but the hair.
    #[arg(long)]
    pub bundle: PathBuf,
    /// Bundle providing the hair decoder and tri-plane.
    #[arg(long)]
    pub hair_from: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportPlyArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Take the pose from this scene instead of the bundle defaults.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Posed target views; needs --images.
    #[arg(long, requires = "images")]
    pub scene: Option<PathBuf>,
    /// Directory with one frame_NNNN.png per scene frame.
    #[arg(long, requires = "scene")]
    pub images: Option<PathBuf>,
    /// Without targets: number of self-rendered views.
    #[arg(long, default_value_t = 3)]
    pub views: usize,
    /// Without targets: view resolution.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    /// Without targets: standard deviation of the uniform albedo noise.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long)]
    pub iters: Option<usize>,
    /// Optimizer and regularizer settings (TOML).
    #[arg(long)]
    pub fit_config: Option<PathBuf>,
    /// Loss history CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Bundle with the fitted textures.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Sample clouds from this avatar instead of random scenes.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "10000,50000")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 512)]
    pub resolution: usize,
    /// Print JSON instead of CSV.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct DeskArgs {
    /// Bundle to write.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Also write the bare rig file here.
    #[arg(long)]
    pub rig: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub subdivisions: usize,
    #[arg(long, default_value_t = 256)]
    pub t_tex: usize,
}

/// Runs a parsed command line, printing its report to stdout.
pub fn run(cli: &Cli) -> CliResult<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| CliError::usage(format!("--jobs: {e}")))?;
    pool.install(|| dispatch(cli))
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    let settings = match &cli.config {
        Some(p) => load_settings(p)?,
        None => RenderSettings::default(),
    };
    match &cli.command {
        Command::Render(a) => {
            let av = load_avatar(&a.bundle, &settings)?;
            let specs = view_specs(&av, &a.view)?;
            for line in render_to_dir(&av, &specs, !a.no_cache, &a.out, a.dump_buffers)? {
                println!("{line}");
            }
            Ok(())
        }
        Command::Edit(a) => {
            let mut bundle = load_bundle(&a.bundle)?;
            let patch = std::fs::read(&a.image).map_err(|e| CliError::from(Error::io(&a.image, e)))?;
            let rect = uv_rect(&a.uv_rect)?;
            let n = edit_bundle(&mut bundle, &patch, rect)?;
            save_bundle(&bundle, &a.out)?;
            println!("pasted {n} texels into {}", a.out.display());
            Ok(())
        }
        Command::SwapHair(a) => {
            let face = load_bundle(&a.bundle)?;
            let hair = load_bundle(&a.hair_from)?;
            let out = swap_hair(face, &hair)?;
            save_bundle(&out, &a.out)?;
            println!("wrote {}", a.out.display());
            Ok(())
        }
        Command::ExportPly(a) => {
            let av = load_avatar(&a.bundle, &settings)?;
            let params = match &a.scene {
                Some(p) => {
                    let specs = SceneFile::load(p)?.resolve(&av.params, &av.lighting)?;
                    let n = specs.len();
                    specs
                        .into_iter()
                        .nth(a.frame)
                        .ok_or_else(|| CliError::usage(format!("--frame {} but the scene has {n} frames", a.frame)))?
                        .params
                }
                None => av.params.clone(),
            };
            let cloud = av.generate(&params)?.cloud;
            export_ply(&cloud, &a.out)?;
            let [eye, face, hair] = cloud.group_counts();
            println!("wrote {} Gaussians (eye {eye}, face {face}, hair {hair}) to {}", cloud.len(), a.out.display());
            Ok(())
        }
        Command::Fit(a) => cmd_fit(a, &settings, cli.seed),
        Command::Bench(a) => {
            let rows = bench(a, &settings, cli.seed)?;
            if a.json {
                println!("{}", serde_json::to_string_pretty(&rows).map_err(|e| CliError::usage(e.to_string()))?);
            } else {
                println!("size,rasterizer,median_ms,reps");
                for r in &rows {
                    println!("{},{},{:.3},{}", r.size, r.rasterizer, r.median_ms, r.reps);
                }
            }
            Ok(())
        }
        Command::MakeDeskRig(a) => {
            let opts = DeskOptions {
                subdivisions: a.subdivisions,
                t_tex: a.t_tex,
                seed: cli.seed,
                ..DeskOptions::default()
            };
            let av = desk_avatar::<f32>(&opts)?;
            let bundle = AvatarBundle::from_avatar(&av);
            save_bundle(&bundle, &a.out)?;
            if let Some(r) = &a.rig {
                save_rig(&bundle.rig, r)?;
            }
            println!(
                "wrote {} ({} vertices, {} faces, t_tex {}, {} hair points)",
                a.out.display(),
                bundle.rig.template.len(),
                bundle.rig.faces.len(),
                bundle.textures.resolution(),
                bundle.decoder.n_hair()
            );
            Ok(())
        }
    }
}

pub fn load_avatar(path: &Path, settings: &RenderSettings) -> CliResult<Avatar<f32>> {
    Ok(load_bundle(path)?.into_avatar(settings.clone())?)
}

fn uv_rect(v: &[f64]) -> CliResult<[f64; 4]> {
    let rect: [f64; 4] = v
        .try_into()
        .map_err(|_| CliError::usage("--uv-rect takes exactly four values"))?;
    validate_uv_rect(rect).map_err(|e| CliError::usage(e.to_string()))?;
    Ok(rect)
}

/// Frames to render: the scene file, a yaw sweep, or one frontal view.
pub fn view_specs(av: &Avatar<f32>, v: &ViewArgs) -> CliResult<Vec<FrameSpec<f32>>> {
    if let Some(p) = &v.scene {
        return Ok(SceneFile::load(p)?.resolve(&av.params, &av.lighting)?);
    }
    let cams: Vec<Camera<f32>> = match v.yaw_sweep {
        Some(0) => return Err(CliError::usage("--yaw-sweep needs at least one frame")),
        Some(n) => yaw_sweep(av.rig.centroid(), v.distance as f32, n, v.yaw_from, v.yaw_to, v.width, v.height)?,
        None => vec![av.orbit_camera(0.0, v.distance as f32, v.width, v.height)?],
    };
    Ok(cams
        .into_iter()
        .map(|camera| FrameSpec {
            camera,
            params: av.params.clone(),
            lighting: av.lighting,
        })
        .collect())
}

pub fn frame_name(k: usize) -> String {
    format!("frame_{k:04}")
}

/// Renders a track into `out` and returns one `file sha256` line per
/// written file, in frame order.
pub fn render_to_dir(av: &Avatar<f32>, specs: &[FrameSpec<f32>], cached: bool, out: &Path, dump: bool) -> CliResult<Vec<String>> {
    std::fs::create_dir_all(out).map_err(|e| CliError::from(Error::io(out, e)))?;
    let frames = render_track(av, specs, cached)?;
    let mut lines = Vec::new();
    for (k, frame) in frames.iter().enumerate() {
        let name = format!("{}.png", frame_name(k));
        let png = frame_png(frame)?;
        let path = out.join(&name);
        std::fs::write(&path, &png).map_err(|e| CliError::from(Error::io(&path, e)))?;
        lines.push(format!("{name} {}", sha256_hex(&png)));
        if dump {
            let dir = out.join("buffers").join(frame_name(k));
            for (file, sum) in dump_buffers(&frame.buffers, &dir)? {
                lines.push(format!("buffers/{}/{file} {sum}", frame_name(k)));
            }
        }
    }
    Ok(lines)
}

/// PNG bytes of a frame's shaded image.
pub fn frame_png(frame: &Frame<f32>) -> CliResult<Vec<u8>> {
    Ok(encode_png(&frame.image)?)
}

/// Pastes PNG bytes into the bundle's albedo; returns the texels written.
pub fn edit_bundle(bundle: &mut AvatarBundle, png: &[u8], rect: [f64; 4]) -> CliResult<usize> {
    let patch = decode_png::<f32>(png)?;
    let n = paste_albedo(&mut bundle.textures.albedo, &patch, rect)?;
    bundle.validate()?;
    Ok(n)
}

/// `face` with the hair decoder and tri-plane of `hair`.
pub fn swap_hair(mut face: AvatarBundle, hair: &AvatarBundle) -> CliResult<AvatarBundle> {
    face.decoder = hair.decoder.clone();
    face.triplane = hair.triplane.clone();
    face.validate()?;
    Ok(face)
}

fn cmd_fit(a: &FitArgs, settings: &RenderSettings, seed: u64) -> CliResult<()> {
    let mut bundle = load_bundle(&a.bundle)?;
    let av = bundle.clone().into_avatar(settings.clone())?;
    let mut cfg = match &a.fit_config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::from(Error::io(p, e)))?;
            toml::from_str::<FitConfig>(&text).map_err(|e| CliError::from(Error::Schema(format!("{}: {e}", p.display()))))?
        }
        None => FitConfig::default(),
    };
    if let Some(n) = a.iters {
        cfg.iters = n;
    }
    let truth = ParamSet::new(&av.textures, &av.lighting);
    let (targets, init) = match (&a.scene, &a.images) {
        (Some(scene), Some(dir)) => {
            let specs = SceneFile::load(scene)?.resolve(&av.params, &av.lighting)?;
            let mut targets = Vec::new();
            for (k, spec) in specs.iter().enumerate() {
                let path = dir.join(format!("{}.png", frame_name(k)));
                let bytes = std::fs::read(&path).map_err(|e| CliError::from(Error::io(&path, e)))?;
                let image = decode_png::<f32>(&bytes)?;
                if (image.width, image.height) != (spec.camera.width, spec.camera.height) {
                    return Err(CliError::usage(format!(
                        "{}: {}x{} image for a {}x{} camera",
                        path.display(),
                        image.width,
                        image.height,
                        spec.camera.width,
                        spec.camera.height
                    )));
                }
                targets.push(FitTarget {
                    scene: fit_scene(&av, spec)?,
                    image,
                });
            }
            (targets, truth)
        }
        _ => {
            let n = a.views.max(1);
            let cams = yaw_sweep(av.rig.centroid(), 0.6, n, -30.0, 30.0, a.size, a.size)?;
            let mut targets = Vec::new();
            for camera in cams {
                let spec = FrameSpec {
                    camera,
                    params: av.params.clone(),
                    lighting: av.lighting,
                };
                let scene = fit_scene(&av, &spec)?;
                let image = forward(&scene, &truth)?.image;
                targets.push(FitTarget { scene, image });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = (a.noise * 3f64.sqrt()) as f32;
            let mut init = truth;
            if s > 0.0 {
                for c in &mut init.albedo.data {
                    let d = Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s));
                    *c = (*c + d).map(|v| v.clamp(0.0, 1.0));
                }
            }
            (targets, init)
        }
    };
    let t = Instant::now();
    let res = fit_textures(&targets, &init, &cfg)?;
    if let Some(h) = &a.history {
        LossReport::write_csv(&res.history, h)?;
    }
    bundle.textures = res.params.textures();
    bundle.lighting = res.params.light;
    bundle.validate()?;
    save_bundle(&bundle, &a.out)?;
    let first = &res.history[0];
    let best = &res.history[res.best_iteration];
    println!(
        "fit {} views, {} iterations in {:.1} s: PSNR {:.2} -> {:.2} dB (best iteration {})",
        targets.len(),
        cfg.iters,
        t.elapsed().as_secs_f64(),
        first.psnr,
        best.psnr,
        res.best_iteration
    );
    Ok(())
}

/// Gradient scene for one view; hair Gaussians are generated once and held
/// fixed.
fn fit_scene(av: &Avatar<f32>, spec: &FrameSpec<f32>) -> CliResult<GradScene<f32>> {
    let mut scene = GradScene::new(
        &av.rig,
        av.raster_uv(),
        &spec.params,
        av.settings.alpha_head,
        av.epsilon(),
        spec.camera,
        av.settings.raster,
        av.settings.background(),
        OcclusionSource::Estimate(av.settings.occlusion),
    )?;
    let g = av.generate(&spec.params)?;
    for i in g.n_face()..g.cloud.len() {
        scene.extra.push(g.cloud.get(i));
    }
    Ok(scene)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub size: usize,
    pub rasterizer: &'static str,
    pub median_ms: f64,
    pub reps: usize,
}

fn bench(a: &BenchArgs, settings: &RenderSettings, seed: u64) -> CliResult<Vec<BenchRow>> {
    if a.reps == 0 || a.sizes.is_empty() || a.resolution == 0 {
        return Err(CliError::usage("bench needs --reps >= 1, at least one size and a positive resolution"));
    }
    let source = match &a.bundle {
        Some(p) => {
            let av = load_avatar(p, settings)?;
            let cam = av.orbit_camera(0.0, 0.6, a.resolution, a.resolution)?;
            Some((av.generate(&av.params)?.cloud, cam))
        }
        None => None,
    };
    let cfg = &settings.raster;
    let mut rows = Vec::new();
    for (k, &n) in a.sizes.iter().enumerate() {
        let (cloud, cam) = match &source {
            Some((base, cam)) => (resample(base, n, seed.wrapping_add(k as u64)), *cam),
            None => (
                random_cloud::<f32>(n, 1.0, seed.wrapping_add(k as u64)),
                scene_camera(a.resolution, a.resolution),
            ),
        };
        let time = |f: &dyn Fn()| {
            let mut v: Vec<f64> = (0..a.reps)
                .map(|_| {
                    let t = Instant::now();
                    f();
                    t.elapsed().as_secs_f64() * 1e3
                })
                .collect();
            v.sort_by(|x, y| x.total_cmp(y));
            v[v.len() / 2]
        };
        rows.push(BenchRow {
            size: n,
            rasterizer: "tile",
            median_ms: time(&|| drop(rasterize(&cloud, &cam, cfg))),
            reps: a.reps,
        });
        rows.push(BenchRow {
            size: n,
            rasterizer: "reference",
            median_ms: time(&|| drop(rasterize_reference(&cloud, &cam, cfg))),
            reps: a.reps,
        });
    }
    Ok(rows)
}

/// `n` Gaussians drawn with replacement from `base`.
fn resample(base: &GaussianCloud<f32>, n: usize, seed: u64) -> GaussianCloud<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GaussianCloud::with_capacity(n);
    if base.is_empty() {
        return out;
    }
    for _ in 0..n {
        out.push(base.get(rng.random_range(0..base.len())));
    }
    out
}
