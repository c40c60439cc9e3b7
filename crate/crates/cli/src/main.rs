use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mscarve::dataset::{
    generate_synthetic, import_telemetry, load_scene, split_dataset, GridRegion, ImportOptions, NoiseSpec,
    SceneDataset, Split, SyntheticSpec, DEFAULT_STRIDE,
};
use mscarve::image_io::{read_mask, read_rgb};
use mscarve::metrics::format_db;
use mscarve::pipeline::{carve_scales, evaluate_predictions, mean_psnr, split_name, ParamOverrides, PipelineConfig};
use mscarve::render::{blend_scales, render_parallel, RenderOptions, RenderedView};
use mscarve::{CarvedModel, Error, FramePose};

#[derive(Parser)]
#[command(name = "mscarve", version, about = "Multi-scale voxel carving from posed RGB-D frames")]
struct Cli {
    /// Worker threads (all cores by default).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a manifest for a directory with telemetry.csv, rgb/ and depth/.
    Import(ImportArgs),
    /// Generate the synthetic reference scene.
    Synth(SynthArgs),
    /// Carve the training frames at every scale and save the models.
    Carve(CarveArgs),
    /// Render saved models from the dataset poses.
    Render(RenderArgs),
    /// Composite per-scale renders, finest first.
    Blend(BlendArgs),
    /// Score a directory of predicted images against the dataset.
    Eval(EvalArgs),
    /// Carve, render, blend and evaluate in one go.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct ImportArgs {
    /// Directory holding telemetry.csv, rgb/ and depth/.
    dir: PathBuf,
    #[arg(long)]
    fx: f64,
    /// Defaults to fx.
    #[arg(long)]
    fy: Option<f64>,
    #[arg(long)]
    cx: Option<f64>,
    #[arg(long)]
    cy: Option<f64>,
    #[arg(long)]
    scene_id: Option<String>,
    #[arg(long)]
    stride: Option<usize>,
    /// Grid origin and extent in meters, `x,y,z`.
    #[arg(long, value_delimiter = ',', requires = "grid_extent")]
    grid_origin: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', requires = "grid_origin")]
    grid_extent: Option<Vec<f64>>,
    /// Block edge lengths in meters; the whole extent when absent.
    #[arg(long, value_delimiter = ',')]
    block_size: Option<Vec<f64>>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-axis position noise in meters.
    #[arg(long, default_value_t = 0.0)]
    pose_sigma: f64,
    /// Relative depth noise, e.g. 0.02.
    #[arg(long, default_value_t = 0.0)]
    depth_sigma: f64,
    /// Per-frame brightness jitter, e.g. 0.05 for +-5%.
    #[arg(long, default_value_t = 0.0)]
    brightness: f64,
    #[arg(long)]
    poses: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    size: Option<Vec<u32>>,
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// Dataset directory or manifest file.
    #[arg(long)]
    scene: PathBuf,
    /// Configuration file; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Voxel sizes in meters, e.g. `0.5,0.25,0.125`.
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<f64>>,
    #[arg(long)]
    eps_seen: Option<f64>,
    #[arg(long)]
    seen_threshold: Option<u32>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    eps_hsv: Option<f64>,
    #[arg(long)]
    max_distance: Option<f64>,
    /// Keep every n-th frame before splitting.
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
}

impl RunArgs {
    fn config(&self, jobs: Option<usize>) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("config: reading {}", path.display()))?;
                PipelineConfig::from_toml(&text).map_err(|e| e.in_stage("config"))?
            }
            None => PipelineConfig::default(),
        };
        if let Some(s) = &self.scales {
            cfg.scales = s.clone();
        }
        cfg.params = cfg.params.merged(ParamOverrides {
            eps_seen: self.eps_seen,
            seen_threshold: self.seen_threshold,
            alpha: self.alpha,
            sigma: self.sigma,
            eps_hsv: self.eps_hsv,
            max_distance: self.max_distance,
        });
        cfg.stride = self.stride.or(cfg.stride);
        cfg.train_fraction = self.train_fraction.unwrap_or(cfg.train_fraction);
        cfg.jobs = jobs.or(cfg.jobs);
        Ok(cfg)
    }

    fn load(&self) -> Result<SceneDataset> {
        Ok(load_scene(&self.scene).map_err(|e| e.in_stage("load"))?)
    }

    fn split(&self, ds: &SceneDataset, cfg: &PipelineConfig) -> Result<SceneDataset> {
        let stride = cfg.stride.or(ds.frame_stride).unwrap_or(DEFAULT_STRIDE);
        Ok(split_dataset(ds, cfg.train_fraction, stride).map_err(|e| e.in_stage("split"))?)
    }
}

#[derive(Args)]
struct CarveArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: PathBuf,
    /// Also write `scale_<vs>.txt` with one `x y z r g b` line per voxel.
    #[arg(long)]
    text: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

impl SplitArg {
    fn filter(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Directory of `.msvc` models, or model files separated by commas.
    #[arg(long, value_delimiter = ',', required = true)]
    models: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    split: SplitArg,
}

#[derive(Args)]
struct BlendArgs {
    /// Directory with `<stem>_s<vs>.png` and `<stem>_s<vs>_mask.png` files.
    #[arg(long)]
    renders: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Directory of `<id>.png` predictions, with optional `<id>_mask.png`.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Write the per-frame scores as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_images: bool,
}

fn triple(name: &str, v: Vec<f64>) -> Result<[f64; 3]> {
    match v[..] {
        [x, y, z] => Ok([x, y, z]),
        _ => bail!("import: --{name} takes three comma-separated values"),
    }
}

fn region(origin: Option<Vec<f64>>, extent: Option<Vec<f64>>, block: Option<Vec<f64>>) -> Result<Option<GridRegion>> {
    let (Some(origin), Some(extent)) = (origin, extent) else {
        return Ok(None);
    };
    let extent = triple("grid-extent", extent)?;
    Ok(Some(GridRegion {
        origin: triple("grid-origin", origin)?,
        extent,
        block_size: block.map(|b| triple("block-size", b)).transpose()?.unwrap_or(extent),
    }))
}

fn import(args: ImportArgs) -> Result<()> {
    let opts = ImportOptions {
        scene_id: args.scene_id,
        fx: args.fx,
        fy: args.fy.unwrap_or(args.fx),
        cx: args.cx,
        cy: args.cy,
        frame_stride: args.stride,
        grid: region(args.grid_origin, args.grid_extent, args.block_size)?,
    };
    let (path, skipped) = import_telemetry(&args.dir, &opts).map_err(|e| e.in_stage("import"))?;
    let ds = load_scene(&path).map_err(|e| e.in_stage("load"))?;
    println!("wrote {} ({} frames, {skipped} telemetry rows without images)", path.display(), ds.frames.len());
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut spec = SyntheticSpec::reference().with_noise(NoiseSpec {
        pose_sigma: args.pose_sigma,
        depth_sigma: args.depth_sigma,
        brightness: args.brightness,
    });
    spec.seed = args.seed;
    if let Some(n) = args.poses {
        spec.orbit.poses = n;
    }
    if let Some(s) = args.size {
        let [w, h] = s[..] else {
            bail!("synth: --size takes WIDTH,HEIGHT");
        };
        spec.width = w;
        spec.height = h;
    }
    let scene = generate_synthetic(&spec).map_err(|e| e.in_stage("synth"))?;
    let path = scene.write(&args.out).map_err(|e| e.in_stage("write"))?;
    println!("wrote {} ({} frames)", path.display(), scene.frames.len());
    Ok(())
}

fn carve(args: CarveArgs, jobs: Option<usize>) -> Result<()> {
    let cfg = args.run.config(jobs)?;
    let ds = args.run.split(&args.run.load()?, &cfg)?;
    let carved = carve_scales(&ds, &cfg)?;
    fs::create_dir_all(&args.out).with_context(|| format!("write: {}", args.out.display()))?;
    for (model, report) in &carved {
        let path = args.out.join(format!("scale_{}.msvc", model.voxel_size));
        model.save(&path).map_err(|e| e.in_stage("write"))?;
        if args.text {
            let txt = path.with_extension("txt");
            let file = fs::File::create(&txt).with_context(|| format!("write: {}", txt.display()))?;
            model
                .write_text(std::io::BufWriter::new(file))
                .with_context(|| format!("write: {}", txt.display()))?;
        }
        println!(
            "scale {}: {} voxels, {} blocks, {:.3} s",
            model.voxel_size, report.voxels, report.blocks, report.carve_seconds
        );
    }
    Ok(())
}

fn model_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            for entry in fs::read_dir(p).with_context(|| format!("load: {}", p.display()))? {
                let path = entry?.path();
                if path.extension().is_some_and(|e| e == "msvc") {
                    out.push(path);
                }
            }
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        bail!("load: no .msvc models found");
    }
    Ok(out)
}

fn render_cmd(args: RenderArgs, jobs: Option<usize>) -> Result<()> {
    let cfg = args.run.config(jobs)?;
    let ds = args.run.split(&args.run.load()?, &cfg)?;
    let mut models: Vec<CarvedModel> = model_paths(&args.models)?
        .iter()
        .map(|p| CarvedModel::load(p).map_err(|e| e.in_stage("load")))
        .collect::<std::result::Result<_, _>>()?;
    models.sort_by(|a, b| a.voxel_size.total_cmp(&b.voxel_size));
    let options = RenderOptions {
        max_distance: cfg.params.params_for(models[0].voxel_size).max_distance,
        convention: ds.convention,
    };
    let wanted = args.split.filter();
    let mut count = 0;
    for rec in ds.frames.iter().filter(|f| wanted.is_none() || f.split == wanted) {
        let dir = args.out.join(split_name(rec.split.expect("split dataset")));
        fs::create_dir_all(&dir).with_context(|| format!("write: {}", dir.display()))?;
        for m in &models {
            let view = render_parallel(m, &rec.pose, &ds.camera, &options);
            view.write(&dir, &format!("{:06}_s{}", rec.id, m.voxel_size))
                .map_err(|e| e.in_stage("write"))?;
        }
        count += 1;
    }
    println!("rendered {count} frames at {} scales into {}", models.len(), args.out.display());
    Ok(())
}

/// Splits `<stem>_s<vs>` into stem and voxel size.
fn parse_render_name(name: &str) -> Option<(String, f64)> {
    let (stem, vs) = name.rsplit_once("_s")?;
    Some((stem.to_string(), vs.parse().ok()?))
}

fn blend_cmd(args: BlendArgs) -> Result<()> {
    let mut groups: BTreeMap<String, Vec<(f64, PathBuf)>> = BTreeMap::new();
    for entry in fs::read_dir(&args.renders).with_context(|| format!("load: {}", args.renders.display()))? {
        let path = entry?.path();
        if path.extension().is_none_or(|e| e != "png") {
            continue;
        }
        let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        if let Some((stem, vs)) = parse_render_name(&name) {
            groups.entry(stem).or_default().push((vs, path));
        }
    }
    if groups.is_empty() {
        bail!("load: no `<stem>_s<vs>.png` renders in {}", args.renders.display());
    }
    fs::create_dir_all(&args.out).with_context(|| format!("write: {}", args.out.display()))?;
    let pose = FramePose::new(nalgebra::Vector3::zeros(), nalgebra::Vector3::zeros())?;
    for (stem, mut scales) in groups {
        scales.sort_by(|a, b| a.0.total_cmp(&b.0));
        let views = scales
            .iter()
            .map(|(vs, path)| -> Result<RenderedView> {
                let rgb = read_rgb(path).map_err(|e| e.in_stage("load"))?;
                let mask_path = path.with_file_name(format!(
                    "{}_mask.png",
                    path.file_stem().unwrap_or_default().to_string_lossy()
                ));
                let (_, _, mask) = read_mask(&mask_path).map_err(|e| e.in_stage("load"))?;
                let zbuffer = mask.iter().map(|&m| if m { f64::INFINITY } else { 0.0 }).collect();
                Ok(RenderedView {
                    rgb,
                    mask,
                    zbuffer,
                    pose,
                    voxel_size: *vs,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let blended = blend_scales(&views).map_err(|e| e.in_stage("blend"))?;
        blended.write(&args.out, &stem).map_err(|e| e.in_stage("write"))?;
        println!("{stem}: {} scales, empty fraction {:.4}", views.len(), blended.empty_fraction());
    }
    Ok(())
}

fn eval_cmd(args: EvalArgs, jobs: Option<usize>) -> Result<()> {
    let cfg = args.run.config(jobs)?;
    let ds = args.run.split(&args.run.load()?, &cfg)?;
    let scores = evaluate_predictions(&ds, &args.pred, args.split.filter()).map_err(|e| e.in_stage("eval"))?;
    for s in &scores {
        let unmasked = s.psnr_unmasked.map_or("none".into(), |d| format_db(d.0));
        println!("frame {:06} psnr = {} unmasked = {unmasked}", s.id, format_db(s.psnr.0));
    }
    println!("mean_psnr = {}", format_db(mean_psnr(&scores).unwrap_or(f64::NAN)));
    if let Some(out) = args.out {
        let json = serde_json::to_string_pretty(&scores)?;
        fs::write(&out, json).with_context(|| format!("write: {}", out.display()))?;
    }
    Ok(())
}

fn pipeline_cmd(args: PipelineArgs, jobs: Option<usize>) -> Result<()> {
    let mut cfg = args.run.config(jobs)?;
    if args.no_images {
        cfg.write_images = false;
    }
    let ds = match args.run.load() {
        Ok(ds) => ds,
        Err(e) => {
            let _ = fs::create_dir_all(&args.out);
            let _ = fs::write(args.out.join("FAILED"), format!("{e:#}\n"));
            return Err(e);
        }
    };
    let report = mscarve::run_pipeline(&ds, &cfg, Some(&args.out))?;
    print!("{}", report.to_text());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(0) = cli.jobs {
        return Err(Error::InvalidParams("--jobs must be at least 1".into()).into());
    }
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Import(a) => import(a),
        Command::Synth(a) => synth(a),
        Command::Carve(a) => carve(a, cli.jobs),
        Command::Render(a) => render_cmd(a, cli.jobs),
        Command::Blend(a) => blend_cmd(a),
        Command::Eval(a) => eval_cmd(a, cli.jobs),
        Command::Pipeline(a) => pipeline_cmd(a, cli.jobs),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
