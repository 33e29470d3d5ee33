//! The four subcommands as library functions.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::Context;
use diffbox_core::denoiser::{Decoder, FeatureGrid};
use diffbox_core::evaluation::{self, AblationPlan, CheckpointRow, EvalContext, Model, Table};
use diffbox_core::synthdata::{generate, rasterize, Scene};
use diffbox_core::train::Trainer;
use diffbox_core::{rng, Schedule};

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::config::RunConfig;
use crate::dataset::{load_dataset, save_dataset};
use crate::report::{DetectionsRecord, EvalReport, TableReport, TrainLogRow};

/// A command failure, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error("{0}")]
    Usage(String),
    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Usage(_) => 1,
            CommandError::Runtime(_) => 2,
        }
    }
}

pub type CommandResult<T> = Result<T, CommandError>;

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> CommandResult<&'a Path> {
    value.as_deref().ok_or_else(|| CommandError::Usage(format!("--{flag} is required")))
}

fn load_scenes(cfg: &RunConfig) -> CommandResult<Vec<Scene>> {
    let path = required(&cfg.dataset, "dataset")?;
    Ok(load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))?)
}

fn write_json<T: serde::Serialize>(path: Option<&Path>, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Writes `cfg.num_scenes` generated scenes to `output`.
pub fn cmd_generate_data(cfg: &RunConfig, output: &Path) -> CommandResult<usize> {
    let scenes = generate(&cfg.dataset_spec()).map_err(|e| CommandError::Usage(e.to_string()))?;
    save_dataset(output, &scenes).with_context(|| format!("writing {}", output.display()))?;
    log::info!("wrote {} scenes to {}", scenes.len(), output.display());
    Ok(scenes.len())
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Training-log path (JSON Lines). A fresh run truncates it, a resumed
    /// run appends.
    pub log: Option<PathBuf>,
    /// Continue from this checkpoint instead of a fresh decoder.
    pub resume: Option<PathBuf>,
    /// Stop after the first epoch that ends past this wall-clock budget.
    pub time_limit: Option<Duration>,
}

fn features_of(scenes: &[Scene], grid: usize) -> Vec<FeatureGrid> {
    scenes.iter().map(|s| rasterize(s, grid, grid)).collect()
}

/// Trains and writes the checkpoint to `cfg.checkpoint`; returns one log
/// row per epoch.
pub fn cmd_train(cfg: &RunConfig, opts: &TrainOptions) -> CommandResult<Vec<TrainLogRow>> {
    let out_path = required(&cfg.checkpoint, "checkpoint")?.to_path_buf();
    let scenes = load_scenes(cfg)?;
    if let Some(s) = scenes.iter().find(|s| s.num_classes != cfg.num_classes) {
        return Err(CommandError::Usage(format!(
            "dataset scene {} has {} classes but --num-classes is {}",
            s.image_id, s.num_classes, cfg.num_classes
        )));
    }
    let train_cfg = cfg.train_config().map_err(|e| CommandError::Usage(e.to_string()))?;
    let (decoder, prior_epochs) = match &opts.resume {
        Some(path) => {
            let (d, meta) = load_checkpoint(path).with_context(|| format!("resuming from {}", path.display()))?;
            if d.config() != &cfg.decoder_config() {
                return Err(CommandError::Usage(format!("checkpoint {} has a different decoder configuration", path.display())));
            }
            (d, meta.epochs)
        }
        None => {
            let d = Decoder::new(cfg.decoder_config(), &mut rng::substream(cfg.seed, u64::MAX)).map_err(anyhow::Error::from)?;
            (d, 0)
        }
    };
    let mut log_file = match &opts.log {
        Some(p) => Some(BufWriter::new(
            OpenOptions::new()
                .create(true)
                .write(true)
                .append(opts.resume.is_some())
                .truncate(opts.resume.is_none())
                .open(p)
                .with_context(|| format!("opening log {}", p.display()))?,
        )),
        None => None,
    };
    let features = features_of(&scenes, cfg.grid_size);
    let mut trainer = Trainer::new(decoder, cfg.schedule(), train_cfg).map_err(anyhow::Error::from)?;
    let started = Instant::now();
    let mut rows = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let stats = trainer.train_epoch(&scenes, &features).map_err(|e| anyhow::anyhow!("training aborted: {e}"))?;
        let mut row = TrainLogRow::from(&stats);
        row.epoch += prior_epochs;
        log::info!("epoch {} loss {:.5} ({:.1}s)", row.epoch, row.loss, started.elapsed().as_secs_f64());
        if let Some(f) = log_file.as_mut() {
            serde_json::to_writer(&mut *f, &row).context("writing training log")?;
            f.write_all(b"\n").context("writing training log")?;
            f.flush().context("writing training log")?;
        }
        rows.push(row);
        if opts.time_limit.is_some_and(|limit| started.elapsed() >= limit) {
            log::warn!("time limit reached after {} epochs", rows.len());
            break;
        }
    }
    let meta = CheckpointMeta {
        num_stages: cfg.num_stages,
        hidden_dim: cfg.hidden_dim,
        pool_size: cfg.pool_size,
        num_classes: cfg.num_classes,
        timestep_dim: cfg.timestep_dim,
        feature_channels: cfg.decoder_config().feature_channels,
        timesteps: cfg.timesteps,
        scale: cfg.scale,
        padding: cfg.padding.clone(),
        n_train: cfg.n_train,
        grid_size: cfg.grid_size,
        epochs: prior_epochs + rows.len(),
    };
    save_checkpoint(&out_path, &trainer.decoder, &meta).map_err(anyhow::Error::from)?;
    Ok(rows)
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Use the ground-truth oracle instead of a checkpoint.
    pub oracle: bool,
    /// EvalResult JSON; stdout when absent.
    pub output: Option<PathBuf>,
    /// Per-image detections (JSON Lines).
    pub detections: Option<PathBuf>,
}

/// A model ready for evaluation together with the settings it implies.
struct Loaded {
    decoder: Option<Decoder>,
    schedule: Schedule,
    grid_size: usize,
    scale: f64,
}

impl Loaded {
    fn model(&self) -> Model<'_> {
        match &self.decoder {
            Some(d) => Model::Network(d),
            None => Model::Oracle,
        }
    }
}

fn load_model(path: &Path, scenes: &[Scene]) -> CommandResult<(Loaded, CheckpointMeta)> {
    let (decoder, meta) = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if let Some(s) = scenes.iter().find(|s| s.num_classes != meta.num_classes) {
        return Err(anyhow::anyhow!("scene {} has {} classes, checkpoint {} expects {}", s.image_id, s.num_classes, path.display(), meta.num_classes).into());
    }
    let schedule = Schedule::cosine(meta.timesteps).map_err(anyhow::Error::from)?;
    Ok((Loaded { decoder: Some(decoder), schedule, grid_size: meta.grid_size, scale: meta.scale }, meta))
}

/// Samples every scene of `cfg.dataset`; network checkpoints supply their
/// own signal scale, timesteps and grid size.
pub fn cmd_eval(cfg: &RunConfig, opts: &EvalOptions) -> CommandResult<EvalReport> {
    let scenes = load_scenes(cfg)?;
    if scenes.is_empty() {
        return Err(CommandError::Usage("evaluation needs a non-empty dataset".into()));
    }
    let loaded = if opts.oracle {
        Loaded { decoder: None, schedule: cfg.schedule(), grid_size: cfg.grid_size, scale: cfg.scale }
    } else {
        load_model(required(&cfg.checkpoint, "checkpoint")?, &scenes)?.0
    };
    let sampler = diffbox_core::sampler::SamplerConfig { scale: loaded.scale, ..cfg.sampler_config() };
    sampler.validate(loaded.schedule.timesteps()).map_err(|e| CommandError::Usage(e.to_string()))?;
    let ctx = EvalContext { scenes: &scenes, grid_size: loaded.grid_size, schedule: &loaded.schedule, seed: cfg.seed };
    let (detections, result) = evaluation::detect_and_evaluate(loaded.model(), &ctx, &sampler).map_err(anyhow::Error::from)?;
    if let Some(path) = &opts.detections {
        let mut w = BufWriter::new(File::create(path).with_context(|| format!("writing {}", path.display()))?);
        for (scene, d) in scenes.iter().zip(&detections) {
            serde_json::to_writer(&mut w, &DetectionsRecord::new(scene.image_id, d)).context("writing detections")?;
            w.write_all(b"\n").context("writing detections")?;
        }
        w.flush().context("writing detections")?;
    }
    let report = EvalReport::new(&result, scenes.len(), sampler.n_eval, sampler.steps);
    write_json(opts.output.as_deref(), &report)?;
    Ok(report)
}

/// Ablation axes understood by [`cmd_ablate`].
pub const AXES: [&str; 5] = ["sampling", "dynamic", "signal-scale", "padding", "box-count"];

#[derive(Debug, Clone)]
pub struct AblateOptions {
    pub axes: Vec<String>,
    /// Checkpoints besides `--checkpoint` available to sweep rows.
    pub extra_checkpoints: Vec<PathBuf>,
    pub scale_rows: Vec<f64>,
    pub padding_rows: Vec<String>,
    /// Defaults to every `n_train` among the supplied checkpoints.
    pub n_train_rows: Vec<usize>,
    pub n_eval_list: Vec<usize>,
    pub steps_list: Vec<usize>,
    pub output: Option<PathBuf>,
    pub text: Option<PathBuf>,
}

impl Default for AblateOptions {
    fn default() -> Self {
        Self {
            axes: vec!["sampling".into()],
            extra_checkpoints: Vec::new(),
            scale_rows: vec![0.1, 1.0, 2.0, 3.0],
            padding_rows: diffbox_core::corruption::PaddingStrategy::ALL.iter().map(|p| p.name().to_string()).collect(),
            n_train_rows: Vec::new(),
            n_eval_list: vec![16, 64, 256],
            steps_list: vec![1, 2, 3],
            output: None,
            text: None,
        }
    }
}

/// Runs the requested ablation tables; JSON goes to `output` (stdout when
/// absent) and the aligned text to `text` (stderr when absent).
pub fn cmd_ablate(cfg: &RunConfig, opts: &AblateOptions) -> CommandResult<Vec<TableReport>> {
    if let Some(bad) = opts.axes.iter().find(|a| !AXES.contains(&a.as_str())) {
        return Err(CommandError::Usage(format!("unknown axis `{bad}`, expected one of {}", AXES.join(", "))));
    }
    let scenes = load_scenes(cfg)?;
    if scenes.is_empty() {
        return Err(CommandError::Usage("ablation needs a non-empty dataset".into()));
    }
    let main_path = required(&cfg.checkpoint, "checkpoint")?;
    let mut models = vec![load_model(main_path, &scenes)?];
    for p in &opts.extra_checkpoints {
        models.push(load_model(p, &scenes)?);
    }
    let (main, main_meta) = &models[0];
    if let Some((_, m)) = models.iter().find(|(_, m)| m.timesteps != main_meta.timesteps || m.grid_size != main_meta.grid_size) {
        return Err(anyhow::anyhow!("checkpoints disagree on timesteps or grid size ({} / {} vs {} / {})", m.timesteps, m.grid_size, main_meta.timesteps, main_meta.grid_size).into());
    }
    let base = diffbox_core::sampler::SamplerConfig { scale: main.scale, ..cfg.sampler_config() };
    let ctx = EvalContext { scenes: &scenes, grid_size: main.grid_size, schedule: &main.schedule, seed: cfg.seed };
    let has = |axis: &str| opts.axes.iter().any(|a| a == axis);

    let row_for = |label: String, pick: &dyn Fn(&CheckpointMeta) -> bool| {
        let found = models.iter().find(|(_, m)| pick(m));
        CheckpointRow { label, model: found.map(|(l, _)| l.model()), scale: found.map_or(base.scale, |(l, _)| l.scale) }
    };
    let mut plan = AblationPlan::default();
    if has("signal-scale") {
        plan.signal_scale = opts.scale_rows.iter().map(|&s| row_for(format!("scale={s}"), &|m| (m.scale - s).abs() < 1e-9)).collect();
    }
    if has("padding") {
        plan.padding = opts.padding_rows.iter().map(|p| row_for(format!("padding={p}"), &|m| &m.padding == p)).collect();
    }
    if has("sampling") {
        plan.sampling = Some((main.model(), opts.steps_list.clone()));
    }
    if has("box-count") {
        let mut rows = opts.n_train_rows.clone();
        if rows.is_empty() {
            rows = models.iter().map(|(_, m)| m.n_train).collect();
            rows.sort_unstable();
            rows.dedup();
        }
        let rows = rows.iter().map(|&n| row_for(format!("n_train={n}"), &|m| m.n_train == n)).collect();
        plan.box_count = Some((rows, opts.n_eval_list.clone()));
    }
    if has("dynamic") {
        plan.dynamic = Some((main.model(), opts.n_eval_list.clone(), opts.steps_list.clone()));
    }
    let tables: Vec<Table> = evaluation::ablate(&plan, &ctx, &base).map_err(anyhow::Error::from)?;
    let reports: Vec<TableReport> = tables.iter().map(TableReport::from).collect();
    write_json(opts.output.as_deref(), &reports)?;
    let text: String = tables.iter().map(|t| t.to_text()).collect::<Vec<_>>().join("\n");
    match &opts.text {
        Some(p) => std::fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?,
        None => eprint!("{text}"),
    }
    Ok(reports)
}
