//! Command-line front end. Every verb returns a JSON value for `--json`
//! plus a short human summary.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use singan_core::applications::{
    animate, encode_gif, inject, presets, super_resolve, write_png_sequence, AnimationParams,
    InjectionPreset, InjectionRequest, Mask, PresetRegistry, SuperResConfig,
};
use singan_core::imaging::ImageField;
use singan_core::metrics::{sifid_set, ConvExtractor, FeatureExtractor};
use singan_core::netspec::PaddingMode;
use singan_core::sampling::{diversity_map, generate, samples_digest, SampleRequest};
use singan_core::store;
use singan_core::training::{train_pyramid_observed, GeneratorStack, TrainConfig, TrainEvent};

#[derive(Parser, Debug)]
#[command(name = "singan", version, about = "Train and use single-image generative pyramids")]
pub struct Cli {
    /// Print machine-readable JSON on stdout instead of a summary.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a pyramid on one image and save the checkpoint.
    Train(TrainArgs),
    /// Draw random samples from a checkpoint.
    Sample(SampleArgs),
    /// Inject an image into the pyramid at a chosen scale.
    Inject(InjectArgs),
    /// `inject` using the harmonization preset table.
    Harmonize(InjectArgs),
    /// `inject` using the editing preset table.
    Edit(InjectArgs),
    /// `inject` using the paint-to-image preset table.
    Paint(InjectArgs),
    /// Super-resolve an image by training on the image itself.
    Sr(SrArgs),
    /// Render an animation from a checkpoint.
    Animate(AnimateArgs),
    /// Single-image FID between a real image and a directory of fakes.
    Sifid(SifidArgs),
    /// Per-pixel sample diversity of a checkpoint.
    Diversity(DiversityArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Padding {
    Input,
    Layer,
    Noise,
}

impl From<Padding> for PaddingMode {
    fn from(p: Padding) -> Self {
        match p {
            Padding::Input => PaddingMode::InputZero,
            Padding::Layer => PaddingMode::LayerZero,
            Padding::Noise => PaddingMode::NoisePad,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    pub image: PathBuf,
    /// Checkpoint directory to write.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Largest side of the finest scale; 0 keeps the image size.
    #[arg(long, default_value_t = 250)]
    pub scales_max_dim: usize,
    /// Smallest side of the coarsest scale.
    #[arg(long, default_value_t = 25)]
    pub min_coarse_dim: usize,
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Padding::Input)]
    pub padding: Padding,
    /// Train for super-resolution (reconstruction weight 100, pyramid factor from --sr-factor).
    #[arg(long)]
    pub sr_mode: bool,
    #[arg(long, default_value_t = 4, requires = "sr_mode")]
    pub sr_factor: u32,
    /// Also write the loss log as CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    pub checkpoint: PathBuf,
    /// Output directory for sample_NNN.png.
    #[arg(short, long, default_value = "samples")]
    pub output: PathBuf,
    /// Scale where randomness starts; defaults to the coarsest.
    #[arg(long)]
    pub start_scale: Option<usize>,
    #[arg(long, requires = "height")]
    pub width: Option<usize>,
    #[arg(long, requires = "width")]
    pub height: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Defaults to the padding the checkpoint was trained with.
    #[arg(long, value_enum)]
    pub padding: Option<Padding>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Harmonize,
    Edit,
    Paint,
}

impl Task {
    fn table(self, reg: &PresetRegistry) -> &std::collections::BTreeMap<String, InjectionPreset> {
        match self {
            Task::Harmonize => &reg.harmonization,
            Task::Edit => &reg.editing,
            Task::Paint => &reg.paint_to_image,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Task::Harmonize => "harmonization",
            Task::Edit => "editing",
            Task::Paint => "paint_to_image",
        }
    }
}

#[derive(Args, Debug)]
pub struct InjectArgs {
    pub checkpoint: PathBuf,
    pub image: PathBuf,
    #[arg(short, long, default_value = "injected.png")]
    pub output: PathBuf,
    /// Injection scale; 0 is the finest.
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    pub scale: Option<usize>,
    /// Take the injection scale from the published settings for this image.
    #[arg(long)]
    pub preset: Option<String>,
    /// Preset table to search; needed when the name is in several.
    #[arg(long, value_enum)]
    pub task: Option<Task>,
    /// Region to re-generate; white is generated, black keeps the input.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Gaussian feather radius for the mask, in pixels.
    #[arg(long, default_value_t = 0)]
    pub feather: usize,
    /// Inject without adding noise at the injection scale.
    #[arg(long)]
    pub no_noise: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SrArgs {
    pub image: PathBuf,
    #[arg(long)]
    pub factor: u32,
    #[arg(short, long, default_value = "sr.png")]
    pub output: PathBuf,
    /// Reuse a super-resolution checkpoint instead of training one.
    #[arg(long, conflicts_with = "save_checkpoint")]
    pub checkpoint: Option<PathBuf>,
    /// Keep the trained checkpoint here.
    #[arg(long)]
    pub save_checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    #[arg(long, default_value_t = 25)]
    pub min_coarse_dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct AnimateArgs {
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long)]
    pub beta: f64,
    #[arg(long)]
    pub start_scale: usize,
    #[arg(long, default_value_t = 30)]
    pub frames: usize,
    #[arg(long, default_value_t = 10)]
    pub fps: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for frame_NNN.png.
    #[arg(short, long, default_value = "frames")]
    pub output: PathBuf,
    /// Also write an animated GIF.
    #[arg(long)]
    pub gif: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SifidArgs {
    pub real: PathBuf,
    pub fake_dir: PathBuf,
    /// Extractor weights as JSON; the built-in random extractor otherwise.
    #[arg(long)]
    pub extractor: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub extractor_seed: u64,
}

#[derive(Args, Debug)]
pub struct DiversityArgs {
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long)]
    pub start_scale: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum)]
    pub padding: Option<Padding>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, env = "SINGAN_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "SINGAN_HOST", default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    #[arg(long, env = "SINGAN_DATA_DIR", default_value = "singan-data")]
    pub data_dir: PathBuf,
    /// Training jobs allowed to wait before uploads get 409.
    #[arg(long, default_value_t = 4)]
    pub queue_depth: usize,
}

/// Result of one verb.
pub struct Output {
    pub json: Value,
    pub text: String,
}

pub fn run(cli: Cli) -> Result<Output> {
    let quiet = cli.json;
    match cli.command {
        Command::Train(a) => train(a, quiet),
        Command::Sample(a) => sample(a),
        Command::Inject(a) => inject_cmd(a, None),
        Command::Harmonize(a) => inject_cmd(a, Some(Task::Harmonize)),
        Command::Edit(a) => inject_cmd(a, Some(Task::Edit)),
        Command::Paint(a) => inject_cmd(a, Some(Task::Paint)),
        Command::Sr(a) => sr(a, quiet),
        Command::Animate(a) => animate_cmd(a),
        Command::Sifid(a) => sifid(a),
        Command::Diversity(a) => diversity(a),
        Command::Serve(a) => serve(a, quiet),
    }
}

fn load_image(path: &Path) -> Result<ImageField> {
    ImageField::load(path).with_context(|| format!("reading {}", path.display()))
}

fn load_stack(path: &Path) -> Result<GeneratorStack> {
    store::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn base_config(iters: usize, seed: u64, max_dim: usize, min_coarse_dim: usize, padding: Padding) -> Result<TrainConfig> {
    if iters == 0 {
        bail!("--iters must be positive");
    }
    let mut cfg = TrainConfig::default().with_iters(iters);
    cfg.seed = seed;
    cfg.schedule.max_fine_dim = (max_dim > 0).then_some(max_dim);
    cfg.schedule.min_coarse_dim = min_coarse_dim;
    cfg.padding_mode = padding.into();
    Ok(cfg)
}

/// Progress printer for training; silent in JSON mode.
fn progress(quiet: bool) -> impl FnMut(&TrainEvent) {
    move |e| {
        if quiet {
            return;
        }
        match e {
            TrainEvent::ScaleStarted { scale, kernels, .. } => eprintln!("scale {scale}: training with {kernels} kernels"),
            TrainEvent::ScaleFinished { scale, recon_rmse, .. } => {
                eprintln!("scale {scale}: done, reconstruction rmse {recon_rmse:.4}")
            }
            TrainEvent::Iteration(_) => {}
        }
    }
}

fn train(a: TrainArgs, quiet: bool) -> Result<Output> {
    let img = load_image(&a.image)?;
    let mut cfg = base_config(a.iters, a.seed, a.scales_max_dim, a.min_coarse_dim, a.padding)?;
    if a.sr_mode {
        cfg = SuperResConfig::new(a.sr_factor)?.train_config(&cfg);
    }
    let started = Instant::now();
    let mut rows = Vec::new();
    let mut show = progress(quiet);
    let stack = train_pyramid_observed(&img, &cfg, &mut |e| {
        if let TrainEvent::Iteration(row) = e {
            rows.push(row.clone());
        }
        show(e);
    })?;
    let seconds = started.elapsed().as_secs_f64();
    let manifest = store::save(&stack, &a.output)?;
    if let Some(log) = &a.log {
        let mut csv = String::from(singan_core::training::LogRow::CSV_HEADER);
        csv.push('\n');
        for r in &rows {
            csv.push_str(&r.to_csv());
            csv.push('\n');
        }
        std::fs::write(log, csv).with_context(|| format!("writing {}", log.display()))?;
    }
    Ok(Output {
        text: format!(
            "trained {} scales in {seconds:.1}s, checkpoint at {}",
            stack.num_scales(),
            a.output.display()
        ),
        json: json!({
            "checkpoint": path_str(&a.output),
            "num_scales": stack.num_scales(),
            "levels": manifest.levels,
            "r": manifest.r,
            "sigmas": manifest.sigmas,
            "seconds": seconds,
        }),
    })
}

fn sample(a: SampleArgs) -> Result<Output> {
    let stack = load_stack(&a.checkpoint)?;
    let req = SampleRequest {
        start_scale: a.start_scale.unwrap_or(stack.coarsest()),
        output_dims: a.height.zip(a.width),
        padding_mode: a.padding.map(Into::into).unwrap_or(stack.config.padding_mode),
        seed: a.seed,
        count: a.count,
    };
    let images = generate(&stack, &req)?;
    std::fs::create_dir_all(&a.output)?;
    let files: Vec<String> = images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let p = a.output.join(format!("sample_{i:03}.png"));
            img.save(&p)?;
            Ok(path_str(&p))
        })
        .collect::<Result<_>>()?;
    let (h, w) = images[0].dims();
    Ok(Output {
        text: format!("wrote {} samples of {w}x{h} to {}", files.len(), a.output.display()),
        json: json!({
            "files": files,
            "digest": samples_digest(&images),
            "start_scale": req.start_scale,
            "dims": [h, w],
        }),
    })
}

/// Injection scale for preset `name` on a model whose coarsest scale is
/// `coarsest`. Published scales are rescaled proportionally when the
/// pyramid depth differs, keeping the result below the coarsest scale.
pub fn resolve_preset(reg: &PresetRegistry, task: Option<Task>, name: &str, coarsest: usize) -> Result<(usize, Task, InjectionPreset)> {
    let tasks = match task {
        Some(t) => vec![t],
        None => vec![Task::Harmonize, Task::Edit, Task::Paint],
    };
    let hits: Vec<(Task, InjectionPreset)> = tasks
        .into_iter()
        .filter_map(|t| t.table(reg).get(name).map(|p| (t, *p)))
        .collect();
    let (task, preset) = match hits.as_slice() {
        [] => bail!("no injection preset named {name}"),
        [one] => *one,
        many => bail!(
            "{name} has presets for {}; pick one with --task",
            many.iter().map(|(t, _)| t.name()).collect::<Vec<_>>().join(", ")
        ),
    };
    if coarsest == 0 {
        bail!("the model has a single scale, nothing to inject into");
    }
    let n = if preset.total_scales == coarsest {
        preset.injection_scale
    } else {
        let f = preset.injection_scale as f64 * coarsest as f64 / preset.total_scales.max(1) as f64;
        (f.round() as usize).min(coarsest - 1)
    };
    Ok((n, task, preset))
}

fn inject_cmd(a: InjectArgs, alias: Option<Task>) -> Result<Output> {
    let stack = load_stack(&a.checkpoint)?;
    let task = a.task.or(alias);
    let (scale, preset) = match (&a.preset, a.scale) {
        (Some(name), _) => {
            let (n, t, p) = resolve_preset(presets(), task, name, stack.coarsest())?;
            (n, Some(json!({"name": name, "task": t.name(), "injection_scale": p.injection_scale, "total_scales": p.total_scales})))
        }
        (None, Some(n)) => (n, None),
        (None, None) => bail!("give --scale or --preset"),
    };
    let input = load_image(&a.image)?;
    let mask = match &a.mask {
        Some(p) => Some(Mask::from_image(&load_image(p)?).feathered(a.feather)),
        None => None,
    };
    let req = InjectionRequest {
        input,
        scale_n: scale,
        add_noise: !a.no_noise,
        blend_mask: mask,
        seed: a.seed,
    };
    let out = inject(&stack, &req)?;
    out.save(&a.output)?;
    Ok(Output {
        text: format!("injected at scale {scale}, wrote {}", a.output.display()),
        json: json!({
            "output": path_str(&a.output),
            "scale": scale,
            "preset": preset,
            "noise": !a.no_noise,
        }),
    })
}

fn sr(a: SrArgs, quiet: bool) -> Result<Output> {
    let img = load_image(&a.image)?;
    let cfg = SuperResConfig::new(a.factor)?;
    let stack = match &a.checkpoint {
        Some(p) => load_stack(p)?,
        None => {
            let base = base_config(a.iters, a.seed, 0, a.min_coarse_dim, Padding::Input)?;
            let mut show = progress(quiet);
            let stack = train_pyramid_observed(&img, &cfg.train_config(&base), &mut show)?;
            if let Some(dir) = &a.save_checkpoint {
                store::save(&stack, dir)?;
            }
            stack
        }
    };
    let out = super_resolve(&img, &cfg, &stack, a.seed)?;
    out.save(&a.output)?;
    let (h, w) = out.dims();
    Ok(Output {
        text: format!("super-resolved {}x{} to {w}x{h}, wrote {}", img.width(), img.height(), a.output.display()),
        json: json!({
            "output": path_str(&a.output),
            "input_dims": [img.height(), img.width()],
            "output_dims": [h, w],
            "factor": a.factor,
            "rounds": cfg.k,
            "r": cfg.r(),
        }),
    })
}

fn animate_cmd(a: AnimateArgs) -> Result<Output> {
    let stack = load_stack(&a.checkpoint)?;
    let params = AnimationParams {
        alpha: a.alpha,
        beta: a.beta,
        start_scale: a.start_scale,
        frames: a.frames,
        fps: a.fps,
        seed: a.seed,
    };
    params.validate(&stack)?;
    let frames = animate(&stack, &params)?;
    let files = write_png_sequence(&frames, &a.output, "frame")?;
    if let Some(gif) = &a.gif {
        std::fs::write(gif, encode_gif(&frames, a.fps)?).with_context(|| format!("writing {}", gif.display()))?;
    }
    Ok(Output {
        text: format!("wrote {} frames to {}", files.len(), a.output.display()),
        json: json!({
            "frames": files.iter().map(|p| path_str(p)).collect::<Vec<_>>(),
            "gif": a.gif.as_deref().map(path_str),
            "fps": a.fps,
        }),
    })
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| matches!(x.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no png or jpeg files in {}", dir.display());
    }
    Ok(files)
}

fn sifid(a: SifidArgs) -> Result<Output> {
    let real = load_image(&a.real)?;
    let files = image_files(&a.fake_dir)?;
    let fakes = files.iter().map(|p| load_image(p)).collect::<Result<Vec<_>>>()?;
    let fx = match &a.extractor {
        Some(p) => ConvExtractor::load(p)?,
        None => ConvExtractor::fallback(a.extractor_seed),
    };
    let summary = sifid_set(&real, &fakes, &fx)?;
    let per_image: Vec<Value> = files
        .iter()
        .zip(&summary.per_image)
        .map(|(p, s)| json!({"file": path_str(p), "sifid": s}))
        .collect();
    Ok(Output {
        text: format!("SIFID {:.6} over {} images ({})", summary.mean, files.len(), fx.id()),
        json: json!({"mean": summary.mean, "per_image": per_image, "extractor": fx.id()}),
    })
}

fn diversity(a: DiversityArgs) -> Result<Output> {
    let stack = load_stack(&a.checkpoint)?;
    let start = a.start_scale.unwrap_or(stack.coarsest());
    let mode = a.padding.map(Into::into).unwrap_or(stack.config.padding_mode);
    let d = diversity_map(&stack, start, a.count, a.seed, mode)?;
    let mean = d.std_map.iter().sum::<f64>() / d.std_map.len() as f64;
    Ok(Output {
        text: format!("diversity {:.4} (mean pixel std {mean:.4}) over {} samples from scale {start}", d.normalized, a.count),
        json: json!({"diversity": d.normalized, "mean_std": mean, "count": a.count, "start_scale": start}),
    })
}

fn serve(a: ServeArgs, quiet: bool) -> Result<Output> {
    let mut config = singan_service::ServiceConfig::new(&a.data_dir);
    config.queue_depth = a.queue_depth;
    let state = singan_service::AppState::new(config).with_context(|| format!("preparing {}", a.data_dir.display()))?;
    let addr = std::net::SocketAddr::new(a.host, a.port);
    if !quiet {
        eprintln!("listening on http://{addr}, data in {}", a.data_dir.display());
    }
    tokio::runtime::Runtime::new()?
        .block_on(singan_service::serve(state, addr))
        .map_err(|e| anyhow!("serving on {addr}: {e}"))?;
    Ok(Output {
        text: "stopped".into(),
        json: json!({"stopped": true}),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn preset_resolves_published_scale() {
        let (n, task, p) = resolve_preset(presets(), None, "Balloons1", 9).unwrap();
        assert_eq!((n, task, p.total_scales), (7, Task::Paint, 9));
        let (n, _, _) = resolve_preset(presets(), Some(Task::Harmonize), "Tree", 9).unwrap();
        assert_eq!(n, 1);
    }

    #[test]
    fn preset_rescales_to_shallower_pyramids() {
        // 7 of 9 on a model with N = 2 rounds to 2, clamped below the coarsest.
        assert_eq!(resolve_preset(presets(), None, "Balloons1", 2).unwrap().0, 1);
        assert_eq!(resolve_preset(presets(), None, "Balloons1", 4).unwrap().0, 3);
        assert_eq!(resolve_preset(presets(), Some(Task::Harmonize), "Tree", 5).unwrap().0, 1);
        assert_eq!(resolve_preset(presets(), Some(Task::Harmonize), "Tree", 1).unwrap().0, 0);
        assert!(resolve_preset(presets(), None, "Balloons1", 0).is_err());
    }

    #[test]
    fn ambiguous_or_unknown_presets_fail() {
        let err = resolve_preset(presets(), None, "Tree", 9).unwrap_err().to_string();
        assert!(err.contains("--task"), "{err}");
        assert!(resolve_preset(presets(), None, "Nope", 9).is_err());
        assert!(resolve_preset(presets(), Some(Task::Edit), "Balloons1", 9).is_err());
    }

    #[test]
    fn serve_flags_beat_env() {
        let cli = Cli::try_parse_from(["singan", "serve", "--port", "9001"]).unwrap();
        let Command::Serve(a) = cli.command else { panic!() };
        assert_eq!(a.port, 9001);
    }
}
