//! The `kplanes` command line.
//!
//! Exit codes are a stable contract: 0 on success, 1 for usage and I/O
//! problems, 2 when training or rendering hits a non-finite value.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::ablation::{rows_csv, run_suite, Suite};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::optim::{train, TrainOutput, TrainState};
use crate::planes::pair_name;
use crate::render::Camera;
use crate::scene_io::checkpoint::load_checkpoint;
use crate::scene_io::config::TrainConfig;
use crate::scene_io::dataset::{load_transforms_dataset, write_transforms_dataset, Split};
use crate::scene_io::metrics::{psnr, ssim};
use crate::scene_io::time_plane_image;
use crate::scene_io::toy::{make_toy_scene, orbit_camera, ToySpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "kplanes", version, about = "Train, render and inspect k-planes radiance fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a transforms-layout dataset.
    Train(TrainArgs),
    /// Render frames along a camera path from a checkpoint.
    Render(RenderArgs),
    /// Per-frame and mean PSNR/SSIM of a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Write full, static-only and dynamic renders of one view.
    Decompose(DecomposeArgs),
    /// Export space-time planes as grayscale images.
    Timeplanes(TimeplanesArgs),
    /// Train an ablation grid and write a CSV table.
    Ablate(AblateArgs),
    /// Generate a procedural dataset with analytic ground truth.
    Toygen(ToygenArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Scene configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Dataset directory containing transforms_train.json.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoints and metrics.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from this checkpoint instead of initializing.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

/// Camera selection shared by `render` and `decompose`.
#[derive(Debug, Args)]
pub struct CameraArgs {
    /// Image width for orbit paths.
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    /// Image height for orbit paths.
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    /// Horizontal field of view (radians) for orbit paths.
    #[arg(long, default_value_t = 0.7)]
    pub fov: f64,
    /// Orbit radius.
    #[arg(long, default_value_t = 3.6)]
    pub radius: f64,
    /// Orbit elevation (radians).
    #[arg(long, default_value_t = 0.5)]
    pub elevation: f64,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Checkpoint to render
    #[arg(long)]
    pub ckpt: PathBuf,
    /// JSON camera path file, or `orbit:N` for N views around the origin.
    #[arg(long, default_value = "orbit:8")]
    pub camera_path: String,
    #[command(flatten)]
    pub camera: CameraArgs,
    /// Normalized time for dynamic models.
    #[arg(long)]
    pub time: Option<f64>,
    /// Appearance code: an image id, or `interpolate A B ALPHA`.
    #[arg(long, num_args = 1..=4, value_name = "ID | interpolate A B ALPHA")]
    pub appearance: Vec<String>,
    /// Drop the space-time planes (4D models only).
    #[arg(long)]
    pub static_only: bool,
    /// Also write lossless float dumps.
    #[arg(long)]
    pub float: bool,
    /// Output directory for frames
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to score
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset directory
    #[arg(long)]
    pub data: PathBuf,
    /// One of train, val, test.
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// Checkpoint to decompose
    #[arg(long)]
    pub ckpt: PathBuf,
    /// JSON camera path file or `orbit:N`; see `--view`.
    #[arg(long, default_value = "orbit:8")]
    pub camera: String,
    /// Which camera of the path to use.
    #[arg(long, default_value_t = 0)]
    pub view: usize,
    #[command(flatten)]
    pub camera_opts: CameraArgs,
    /// Normalized time in [0, 1]
    #[arg(long, default_value_t = 0.0)]
    pub time: f64,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TimeplanesArgs {
    /// Checkpoint holding a 4D field
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Output directory for the plane images
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SuiteArg {
    Hadamard,
    Scales,
    Featlen,
    Smoothness,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Hadamard => Suite::Hadamard,
            SuiteArg::Scales => Suite::Scales,
            SuiteArg::Featlen => Suite::FeatLen,
            SuiteArg::Smoothness => Suite::Smoothness,
        }
    }
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Which ablation grid to train
    #[arg(long, value_enum)]
    pub suite: SuiteArg,
    /// Dataset directory
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the CSV table
    #[arg(long)]
    pub out: PathBuf,
    /// Base configuration; defaults to the desk-scale toy preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the iteration budget of every variant.
    #[arg(long)]
    pub iterations: Option<u64>,
    /// Overrides the configured seed
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ToyArg {
    Static,
    SingleView,
    Dynamic,
    Appearance,
}

#[derive(Debug, Args)]
pub struct ToygenArgs {
    /// Which procedural scene to generate
    #[arg(long, value_enum, default_value = "static")]
    pub kind: ToyArg,
    /// Output dataset directory
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for scene layout and cameras
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Image side length; keeps the preset size when omitted.
    #[arg(long)]
    pub size: Option<usize>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_USAGE
            }
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Render(a) => cmd_render(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Decompose(a) => cmd_decompose(a),
        Command::Timeplanes(a) => cmd_timeplanes(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Toygen(a) => cmd_toygen(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut config = TrainConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let dataset = load_transforms_dataset(&a.data, config.scene.background)?;
    let mut state = match &a.resume {
        Some(p) => {
            let mut s = load_checkpoint(p)?;
            // allow extending the budget; everything else comes from the file
            s.config.schedule.iterations = config.schedule.iterations;
            s
        }
        None => TrainState::new(config, &dataset)?,
    };
    create_dir(&a.out)?;
    let config_path = a.out.join("config.toml");
    std::fs::write(&config_path, state.config.to_toml()).map_err(|e| Error::io(&config_path, e))?;
    let report = train(&mut state, &dataset, &TrainOutput { dir: Some(a.out.clone()) })?;
    if let Some(last) = report.rows.last() {
        println!("{}", crate::optim::METRICS_HEADER);
        println!("{}", last.to_csv());
    }
    if let Some(p) = report.checkpoints.last() {
        println!("checkpoint {}", p.display());
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct CameraPathFile {
    camera_angle_x: f64,
    width: usize,
    height: usize,
    near: Option<f64>,
    far: Option<f64>,
    frames: Vec<CameraPathFrame>,
}

#[derive(Debug, Deserialize)]
struct CameraPathFrame {
    transform_matrix: Vec<Vec<f64>>,
}

/// Resolves `orbit:N` or a JSON file of poses into cameras.
///
/// The JSON layout mirrors a transforms descriptor:
/// `{"camera_angle_x", "width", "height", "near"?, "far"?, "frames": [{"transform_matrix"}]}`.
pub fn camera_path(spec: &str, opts: &CameraArgs) -> Result<Vec<Camera>> {
    if let Some(n) = spec.strip_prefix("orbit:") {
        let n: usize = n
            .parse()
            .map_err(|_| Error::Config(format!("orbit view count {n:?} is not an integer")))?;
        if n == 0 {
            return Err(Error::Config("orbit needs at least one view".into()));
        }
        return Ok((0..n)
            .map(|i| {
                let az = std::f64::consts::TAU * i as f64 / n as f64;
                orbit_camera(opts.width, opts.height, opts.fov, opts.radius, az, opts.elevation)
            })
            .collect());
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CameraPathFile =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    file.frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let m = &f.transform_matrix;
            if m.len() < 3 || m.iter().take(3).any(|r| r.len() != 4) {
                return Err(Error::Config(format!("{}: frames[{i}] pose must be 3x4 or 4x4", path.display())));
            }
            let mut c2w = [[0.0; 4]; 3];
            for (r, row) in c2w.iter_mut().enumerate() {
                row.copy_from_slice(&m[r]);
            }
            let mut cam = Camera::from_fov(file.width, file.height, file.camera_angle_x, c2w);
            if let (Some(n), Some(f)) = (file.near, file.far) {
                cam = cam.with_depth_range(n, f);
            }
            cam.validate()?;
            Ok(cam)
        })
        .collect()
}

/// Which appearance code to render with.
#[derive(Clone, Debug, PartialEq)]
pub enum AppearanceChoice {
    Default,
    Id(usize),
    Interpolate { a: usize, b: usize, alpha: f64 },
}

pub fn parse_appearance(values: &[String]) -> Result<AppearanceChoice> {
    let bad = || Error::Config(format!("--appearance expects ID or `interpolate A B ALPHA`, got {values:?}"));
    match values {
        [] => Ok(AppearanceChoice::Default),
        [id] => id.parse().map(AppearanceChoice::Id).map_err(|_| bad()),
        [kw, a, b, alpha] if kw == "interpolate" => Ok(AppearanceChoice::Interpolate {
            a: a.parse().map_err(|_| bad())?,
            b: b.parse().map_err(|_| bad())?,
            alpha: alpha.parse().map_err(|_| bad())?,
        }),
        _ => Err(bad()),
    }
}

fn resolve_code(state: &TrainState, choice: &AppearanceChoice) -> Result<Option<Vec<f64>>> {
    let table = state.model.appearance.as_ref();
    let missing = || Error::Config("checkpoint has no appearance codes".into());
    match *choice {
        AppearanceChoice::Default => Ok(None),
        AppearanceChoice::Id(id) => {
            let t = table.ok_or_else(missing)?;
            t.code(id)
                .map(|c| Some(c.to_vec()))
                .ok_or_else(|| Error::Config(format!("appearance id {id} out of range (0..{})", t.len())))
        }
        AppearanceChoice::Interpolate { a, b, alpha } => Ok(Some(table.ok_or_else(missing)?.interpolate(a, b, alpha)?)),
    }
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    // flags are checked before any rendering work
    let choice = parse_appearance(&a.appearance)?;
    let state = load_checkpoint(&a.ckpt)?;
    if a.static_only && state.model.dims() != 4 {
        return Err(Error::Config("--static-only needs a checkpoint with space-time planes (4D)".into()));
    }
    let code = resolve_code(&state, &choice)?;
    let cameras = camera_path(&a.camera_path, &a.camera)?;
    create_dir(&a.out)?;
    for (i, cam) in cameras.iter().enumerate() {
        let out = state.model.render_image(cam, a.time, code.as_deref(), a.static_only)?;
        out.rgb.save_png(a.out.join(format!("frame_{i:03}.png")))?;
        Image::from_gray(cam.width, cam.height, &out.opacity).save_png(a.out.join(format!("opacity_{i:03}.png")))?;
        if a.float {
            out.rgb.save_float(a.out.join(format!("frame_{i:03}.kplimg")))?;
        }
    }
    println!("rendered {} frames to {}", cameras.len(), a.out.display());
    Ok(())
}

/// One evaluated frame.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub frame: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Evaluation table as CSV: a header, one row per frame, then the mean.
pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from("frame,psnr,ssim\n");
    for r in rows {
        s.push_str(&format!("{},{:.6},{:.6}\n", r.frame, r.psnr, r.ssim));
    }
    let n = rows.len().max(1) as f64;
    let mp = rows.iter().map(|r| r.psnr).sum::<f64>() / n;
    let ms = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
    s.push_str(&format!("mean,{mp:.6},{ms:.6}\n"));
    s
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let split = Split::parse(&a.split)?;
    let state = load_checkpoint(&a.ckpt)?;
    let dataset = load_transforms_dataset(&a.data, state.config.scene.background)?;
    let frames = dataset.split(split);
    if frames.is_empty() {
        return Err(Error::Config(format!("split {} is empty", split.name())));
    }
    let mut rows = Vec::with_capacity(frames.len());
    for f in frames {
        let code = match (&state.model.appearance, f.appearance_id) {
            (Some(t), Some(id)) => t.code(id).map(|c| c.to_vec()),
            _ => None,
        };
        let out = state.model.render_image(&f.camera, f.time, code.as_deref(), false)?;
        rows.push(EvalRow {
            frame: f.file_path.clone(),
            psnr: psnr(&out.rgb, &f.image),
            ssim: ssim(&out.rgb, &f.image),
        });
    }
    print!("{}", eval_csv(&rows));
    Ok(())
}

fn cmd_decompose(a: DecomposeArgs) -> Result<()> {
    let state = load_checkpoint(&a.ckpt)?;
    if state.model.dims() != 4 {
        return Err(Error::Config("decompose needs a checkpoint with space-time planes (4D)".into()));
    }
    let cameras = camera_path(&a.camera, &a.camera_opts)?;
    let cam = cameras
        .get(a.view)
        .ok_or_else(|| Error::Config(format!("--view {} out of range (path has {})", a.view, cameras.len())))?;
    let d = state.model.decompose(cam, Some(a.time), None)?;
    create_dir(&a.out)?;
    d.full.save_png(a.out.join("full.png"))?;
    d.static_part.save_png(a.out.join("static.png"))?;
    d.dynamic.save_png(a.out.join("dynamic.png"))?;
    println!("wrote full, static and dynamic images to {}", a.out.display());
    Ok(())
}

fn cmd_timeplanes(a: TimeplanesArgs) -> Result<()> {
    let state = load_checkpoint(&a.ckpt)?;
    let field = &state.model.field;
    if field.dims() != 4 {
        return Err(Error::Config("checkpoint has no space-time planes (3D field)".into()));
    }
    create_dir(&a.out)?;
    let mut n = 0;
    for (s, scale) in field.scales().iter().enumerate() {
        for plane in scale.planes.iter().filter(|p| p.axes().1 == 3) {
            let img = time_plane_image(field, s, plane.axes())?;
            img.save_png(a.out.join(format!("scale{s}_{}.png", pair_name(plane.axes()))))?;
            n += 1;
        }
    }
    println!("wrote {n} time-plane images to {}", a.out.display());
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let suite: Suite = a.suite.into();
    let mut base = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None if suite == Suite::Smoothness => TrainConfig::toy_dynamic(),
        None => TrainConfig::toy_static(),
    };
    if let Some(it) = a.iterations {
        base.schedule.iterations = it;
    }
    if let Some(seed) = a.seed {
        base.seed = seed;
    }
    base.validate()?;
    let dataset = load_transforms_dataset(&a.data, base.scene.background)?;
    let rows = run_suite(suite, &base, &dataset)?;
    create_dir(&a.out)?;
    let csv = rows_csv(&rows);
    let path = a.out.join(format!("ablation_{suite}.csv"));
    std::fs::write(&path, &csv).map_err(|e| Error::io(&path, e))?;
    print!("{csv}");
    Ok(())
}

fn cmd_toygen(a: ToygenArgs) -> Result<()> {
    let mut spec = match a.kind {
        ToyArg::Static => ToySpec::static_scene(),
        ToyArg::SingleView => ToySpec::single_view(32),
        ToyArg::Dynamic => ToySpec::dynamic_scene(),
        ToyArg::Appearance => ToySpec::appearance_scene(),
    };
    if let Some(n) = a.size {
        if n == 0 {
            return Err(Error::Config("--size must be positive".into()));
        }
        spec.width = n;
        spec.height = n;
    }
    let (dataset, scene) = make_toy_scene(&spec, a.seed);
    write_transforms_dataset(&dataset, &a.out)?;
    let path = a.out.join("scene.json");
    let text = serde_json::to_string_pretty(&scene).expect("scene serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    println!(
        "wrote {} train / {} val frames to {}",
        dataset.train.len(),
        dataset.val.len(),
        a.out.display()
    );
    Ok(())
}
