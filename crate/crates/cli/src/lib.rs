//! `confill` subcommands. Each command is a plain function so tests can call
//! it without spawning a process.
//!
//! Data directories share one layout: `images/NAME.png`, `masks/NAME.png`
//! (any nonzero channel marks the hole) and an optional `saliency/NAME.png`.

use std::fs;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use confill::datagen::{mix_seed, procedural_image, Sample};
use confill::image::decode_control_png;
use confill::metrics::{binned_report, bins_csv, records_jsonl, summarize, summary_table, EvalRecord, DEFAULT_BIN_EDGES};
use confill::pipeline::{self, Mode, Model};
use confill::trainer::{ablation_run, format_ablation_table, held_out_samples, run_paths, AblationFlags, TrainConfig, Trainer};
use confill::upsample::{guided_upsample, Controls};
use confill::{Image, Mask};

pub const ENV_CHECKPOINT: &str = confill_service::ENV_CHECKPOINT;

#[derive(Debug, Parser)]
#[command(name = "confill", version, about = "Confidence-feedback iterative inpainting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the upsampler, then the generator; writes best.ckpt, last.ckpt and train_log.jsonl.
    Train(TrainArgs),
    /// Write procedural images, holes and saliency masks in the data layout.
    SynthData(SynthArgs),
    /// Fill a hole.
    Inpaint(InpaintArgs),
    /// Guided upsampling of an already filled low-resolution image.
    Upsample(UpsampleArgs),
    /// Metrics over a data directory.
    Evaluate(EvaluateArgs),
    /// Component ablation table.
    Ablate(AblateArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `key = value` config file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key, `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint with its stored config.
    #[arg(long, conflicts_with_all = ["config", "set"])]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    /// Mask sampling parameters and resolution come from this config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CheckpointArg {
    /// Falls back to the CONFILL_CHECKPOINT environment variable.
    #[arg(long, env = ENV_CHECKPOINT)]
    pub checkpoint: Option<PathBuf>,
}

impl CheckpointArg {
    pub fn load(&self) -> Result<Model> {
        let path = self
            .checkpoint
            .as_ref()
            .ok_or_else(|| anyhow!("no checkpoint: pass --checkpoint or set {ENV_CHECKPOINT}"))?;
        Model::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
    }
}

#[derive(Debug, Args)]
pub struct ControlArgs {
    /// One PNG: red marks avoid, green marks use.
    #[arg(long, conflicts_with_all = ["avoid", "use_region"])]
    pub controls: Option<PathBuf>,
    #[arg(long)]
    pub avoid: Option<PathBuf>,
    #[arg(long = "use")]
    pub use_region: Option<PathBuf>,
}

impl ControlArgs {
    pub fn load(&self) -> Result<Controls> {
        if let Some(p) = &self.controls {
            let (avoid, usable) = decode_control_png(&fs::read(p)?).with_context(|| p.display().to_string())?;
            return Ok(Controls {
                avoid: (!avoid.is_empty()).then_some(avoid),
                use_region: (!usable.is_empty()).then_some(usable),
            });
        }
        let load = |p: &Option<PathBuf>| p.as_ref().map(|p| Mask::load(p).with_context(|| p.display().to_string())).transpose();
        Ok(Controls { avoid: load(&self.avoid)?, use_region: load(&self.use_region)? })
    }

    fn is_set(&self) -> bool {
        self.controls.is_some() || self.avoid.is_some() || self.use_region.is_some()
    }
}

#[derive(Debug, Args)]
pub struct InpaintArgs {
    #[command(flatten)]
    pub checkpoint: CheckpointArg,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `direct` fills at full resolution; `upsampled` fills at half
    /// resolution and upsamples with the guided upsampler.
    #[arg(long, default_value = "direct")]
    pub mode: Mode,
    #[arg(long, default_value_t = 4)]
    pub iterations: usize,
    #[command(flatten)]
    pub controls: ControlArgs,
    /// Write `tNN_{y,c,m,u}.png` per iteration.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    /// Residual hole handed to the full-resolution pass (upsampled mode).
    #[arg(long)]
    pub residual_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct UpsampleArgs {
    #[command(flatten)]
    pub checkpoint: CheckpointArg,
    /// Filled low-resolution image, half the extents of `--image`.
    #[arg(long)]
    pub lr: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub controls: ControlArgs,
    #[arg(long)]
    pub residual_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub checkpoint: CheckpointArg,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub iterations: usize,
    #[arg(long, default_value = "direct")]
    pub mode: Mode,
    /// Write records.jsonl, bins.csv and summary.json here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Model trained with realistic data; used for the RT row.
    #[command(flatten)]
    pub checkpoint: CheckpointArg,
    /// Model trained without realistic data; used for the other rows.
    /// Defaults to `--checkpoint`.
    #[arg(long)]
    pub plain_checkpoint: Option<PathBuf>,
    /// Data directory; held-out procedural samples when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub samples: usize,
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub iterations: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub checkpoint: CheckpointArg,
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub deadline_ms: Option<u64>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(&a),
        Command::SynthData(a) => synth_data(&a),
        Command::Inpaint(a) => inpaint(&a),
        Command::Upsample(a) => upsample(&a),
        Command::Evaluate(a) => {
            let report = evaluate(&a)?;
            print!("{}", report.table);
            Ok(())
        }
        Command::Ablate(a) => {
            print!("{}", ablate(&a)?);
            Ok(())
        }
        Command::Serve(a) => serve(&a),
    }
}

fn split_kv(s: &str) -> Result<(&str, &str)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| anyhow!("--set expects key=value, got {s:?}"))
}

pub fn load_config(path: Option<&Path>, sets: &[String]) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::load(p).with_context(|| p.display().to_string())?,
        None => TrainConfig::default(),
    };
    for s in sets {
        let (k, v) = split_kv(s)?;
        cfg.set(k, v, 0).with_context(|| format!("--set {s}"))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut t = match &a.resume {
        Some(p) => Trainer::load(p).with_context(|| format!("resuming from {}", p.display()))?,
        None => Trainer::new(load_config(a.config.as_deref(), &a.set)?)?,
    };
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("config.txt"), t.config().to_kv())?;
    let (_, last, log_path) = run_paths(&a.out);
    let mut log = fs::OpenOptions::new().create(true).append(true).open(&log_path)?;
    let ups_left = t.config().ups_steps.saturating_sub(t.ups_step());
    t.fit_upsampler(ups_left, Some(&mut log))?;
    let report = t.fit(Some(&a.out), Some(&mut log))?;
    log.flush()?;
    eprintln!(
        "steps {} (stopped early: {}), best psnr {:?}, checkpoint {}",
        report.steps_run,
        report.stopped_early,
        report.best_psnr,
        last.display()
    );
    Ok(())
}

pub fn synth_data(a: &SynthArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref(), &[])?;
    if let Some(r) = a.resolution {
        cfg.resolution = r;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let sampler = cfg.eval_sampler()?;
    for sub in ["images", "masks", "saliency"] {
        fs::create_dir_all(a.out.join(sub))?;
    }
    let r = cfg.resolution;
    for i in 0..a.count {
        let seed = mix_seed(cfg.seed, i as u64);
        let scene = procedural_image(r, r, seed);
        let mut k = 0;
        let m = loop {
            let m = sampler.sample(r, r, mix_seed(seed, 1 + k))?;
            if !m.is_empty() || k > 64 {
                break m;
            }
            k += 1;
        };
        let name = format!("{i:04}.png");
        scene.image.save(a.out.join("images").join(&name))?;
        m.save(a.out.join("masks").join(&name))?;
        scene.saliency.save(a.out.join("saliency").join(&name))?;
    }
    Ok(())
}

pub fn inpaint(a: &InpaintArgs) -> Result<()> {
    let hole = Mask::load(&a.mask).with_context(|| a.mask.display().to_string())?;
    let bytes = fs::read(&a.image).with_context(|| a.image.display().to_string())?;
    let image = Image::decode_png(&bytes).with_context(|| a.image.display().to_string())?;
    confill::image::check_extent(&image, &hole)?;
    if a.mode == Mode::Upsampled && (image.width() % 2 != 0 || image.height() % 2 != 0) {
        bail!("upsampled mode needs even extents, got {}x{}", image.width(), image.height());
    }
    if a.mode == Mode::Direct && a.controls.is_set() {
        bail!("avoid/use regions need --mode upsampled");
    }
    let model = a.checkpoint.load()?;
    if hole.is_empty() {
        fs::write(&a.out, &bytes)?;
        return Ok(());
    }
    let out = pipeline::inpaint(&model, &image, &hole, a.iterations, a.mode, &a.controls.load()?)?;
    out.image.save(&a.out)?;
    if let Some(dir) = &a.trace_dir {
        out.trace.export(dir)?;
    }
    if let (Some(p), Some(r)) = (&a.residual_out, &out.residual) {
        r.save(p)?;
    }
    if out.fallback {
        eprintln!("no valid context for guided upsampling; used pixel replication");
    }
    Ok(())
}

pub fn upsample(a: &UpsampleArgs) -> Result<()> {
    let model = a.checkpoint.load()?;
    let ups = model.ups.as_ref().ok_or_else(|| anyhow!("checkpoint has no guided upsampler"))?;
    let lr = Image::load(&a.lr).with_context(|| a.lr.display().to_string())?;
    let hr = Image::load(&a.image).with_context(|| a.image.display().to_string())?;
    let m = Mask::load(&a.mask).with_context(|| a.mask.display().to_string())?;
    let c = a.controls.load()?;
    let lr_controls = Controls {
        avoid: c.avoid.map(|m| m.downsample2x_any()).transpose()?,
        use_region: c.use_region.map(|m| m.downsample2x_any()).transpose()?,
    };
    let out = guided_upsample(ups, &lr, &hr, &m, &lr_controls)?;
    out.image.save(&a.out)?;
    if let Some(p) = &a.residual_out {
        out.residual.save(p)?;
    }
    Ok(())
}

/// Image/mask pairs from a data directory, sorted by name.
pub fn load_pairs(dir: &Path) -> Result<Vec<(String, Image, Mask)>> {
    let images = dir.join("images");
    let mut names: Vec<String> = fs::read_dir(&images)
        .with_context(|| images.display().to_string())?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
        .collect();
    names.sort();
    if names.is_empty() {
        bail!("no PNG images in {}", images.display());
    }
    names
        .into_iter()
        .map(|n| {
            let x = Image::load(images.join(&n)).with_context(|| n.clone())?;
            let m = Mask::load(dir.join("masks").join(&n)).with_context(|| format!("mask for {n}"))?;
            confill::image::check_extent(&x, &m).with_context(|| n.clone())?;
            Ok((n, x, m))
        })
        .collect()
}

pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    pub table: String,
}

/// Metrics of the filled result against the ground truth. The confidence
/// partition uses the first pass's confidence map (direct mode only).
pub fn evaluate(a: &EvaluateArgs) -> Result<EvalReport> {
    let model = a.checkpoint.load()?;
    let mut records = Vec::new();
    for (name, x, m) in load_pairs(&a.data)? {
        let out = pipeline::inpaint(&model, &x, &m, a.iterations, a.mode, &Controls::default())
            .with_context(|| name.clone())?;
        let c = match a.mode {
            Mode::Direct => out.trace.steps.first().map(|s| s.c.clone()),
            Mode::Upsampled => None,
        };
        records.push(EvalRecord::compute(name, &out.image, &x, &m, c.as_ref())?);
    }
    let bins = binned_report(&records, &DEFAULT_BIN_EDGES)?;
    let summary = summarize(&records);
    if let Some(dir) = &a.report {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("records.jsonl"), records_jsonl(&records)?)?;
        fs::write(dir.join("bins.csv"), bins_csv(&bins))?;
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    }
    Ok(EvalReport { table: summary_table(&summary, &bins), records })
}

pub fn ablate(a: &AblateArgs) -> Result<String> {
    let rt = a.checkpoint.load()?;
    let plain = match &a.plain_checkpoint {
        Some(p) => Model::load(p).with_context(|| p.display().to_string())?,
        None => rt.clone(),
    };
    let samples: Vec<Sample> = match &a.data {
        Some(dir) => load_pairs(dir)?
            .into_iter()
            .map(|(_, x, m)| Sample::new(x, m, false))
            .collect::<confill::Result<_>>()?,
        None => {
            let cfg = TrainConfig { resolution: a.resolution, seed: a.seed, ..TrainConfig::default() };
            held_out_samples(&cfg, a.samples, 0xab1a7e)?
        }
    };
    let rows = AblationFlags::ROWS
        .iter()
        .map(|&f| ablation_run(if f.rt { &rt.gen } else { &plain.gen }, f, &samples, a.iterations))
        .collect::<confill::Result<Vec<_>>>()?;
    Ok(format_ablation_table(&rows))
}

pub fn serve(a: &ServeArgs) -> Result<()> {
    let mut cfg = confill_service::ServiceConfig::from_env().map_err(|e| anyhow!(e))?;
    cfg.checkpoint = a.checkpoint.checkpoint.clone();
    if a.checkpoint_dir.is_some() {
        cfg.checkpoint_dir = a.checkpoint_dir.clone();
    }
    if let Some(w) = a.workers {
        cfg.workers = w.max(1);
    }
    if let Some(d) = a.deadline_ms {
        cfg.deadline = Duration::from_millis(d);
    }
    let state = confill_service::AppState::load(cfg)?;
    match state.model() {
        Some(m) => eprintln!("serving checkpoint {} on http://{}/v1", m.id, a.addr),
        None => eprintln!("no checkpoint loaded; /v1/inpaint answers 503 (http://{}/v1)", a.addr),
    }
    tokio::runtime::Runtime::new()?.block_on(confill_service::serve(a.addr, state))?;
    Ok(())
}
