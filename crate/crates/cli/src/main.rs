//! `lidseg` command-line front end.
//!
//! Exit status: 0 on success, 1 for bad input (arguments, config, files,
//! checkpoints), 2 for internal failures.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use toml::Value;

use config::{parse_set, Override};

/// A problem with what the user supplied.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

#[derive(Parser, Debug)]
#[command(name = "lidseg", version, about = "Weakly-supervised damage segmentation from image-level labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic labelled crop dataset.
    GenData(GenDataArgs),
    /// Train the classifier on a dataset directory.
    Train(TrainArgs),
    /// Compute CAMs, fusion maps and segmentations for images.
    Infer(InferArgs),
    /// Score predicted masks against ground-truth masks.
    Evaluate(EvaluateArgs),
    /// Compare LayerCAM, CG-CAM and CG-CAM + fusion on a labelled dataset.
    Ablate(AblateArgs),
}

/// Settings every subcommand accepts.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML config file.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override any config field, e.g. `--set train.lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_set, global = true)]
    sets: Vec<Override>,
    /// Run name; artifacts go to `<output-root>/<name>/`.
    #[arg(long, global = true)]
    name: Option<String>,
    /// Output root (default from LIDSEG_OUTPUT_ROOT, else `runs`).
    #[arg(long, global = true)]
    output_root: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(short, long, global = true)]
    jobs: Option<usize>,
    /// gradcam, layercam, cgcam or cgfusion.
    #[arg(long, global = true)]
    method: Option<String>,
}

/// Post-processing flags shared by the commands that segment.
#[derive(Args, Debug, Clone, Default)]
pub struct PipelineFlags {
    /// Deep-mask threshold of the fusion.
    #[arg(long)]
    v_thr: Option<f64>,
    /// Sauvola window side (odd).
    #[arg(long)]
    window: Option<usize>,
    /// Sauvola sensitivity k.
    #[arg(long)]
    k: Option<f64>,
    /// Sauvola dynamic range R.
    #[arg(long)]
    r: Option<f64>,
    /// Gray level foreground must also exceed.
    #[arg(long)]
    floor: Option<f64>,
    #[arg(long)]
    min_area: Option<usize>,
    /// IoU threshold δ for target-level matching.
    #[arg(long)]
    delta: Option<f64>,
    /// 1-based stage for Grad-CAM and the deep mask.
    #[arg(long)]
    deep_stage: Option<usize>,
    /// Segment images even when classified as background.
    #[arg(long)]
    no_gate: bool,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    /// Destination (default `<run>/data`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    scenes: Option<usize>,
    /// Scene side length in pixels.
    #[arg(long)]
    scene_size: Option<usize>,
    /// Damage sites per scene.
    #[arg(long)]
    sites: Option<usize>,
    /// Stray-light elements per scene.
    #[arg(long)]
    stray: Option<usize>,
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    damage_ratio: Option<f64>,
    #[arg(long)]
    superimpose_fraction: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset directory (default `<run>/data`).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Held-out dataset for a classification report.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_decay_epoch: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    flip_prob: Option<f64>,
    /// Cap on the global gradient norm of each batch.
    #[arg(long)]
    clip_norm: Option<f64>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    pipeline: PipelineFlags,
    /// Checkpoint (default `<run>/checkpoints/model.ckpt`).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// An image file or a directory of PNG/PGM images.
    input: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    pipeline: PipelineFlags,
    /// Predicted masks (default `<run>/masks`).
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Ground-truth masks, matched to predictions by file name.
    #[arg(long)]
    gt: PathBuf,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    pipeline: PipelineFlags,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset directory with `masks/` (default `<run>/data`).
    #[arg(long)]
    data: Option<PathBuf>,
}

fn push<T: Into<Value>>(out: &mut Vec<Override>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        out.push((key.to_string(), v.into()));
    }
}

fn int(v: Option<usize>) -> Option<i64> {
    v.map(|v| v as i64)
}

impl Common {
    fn overrides(&self, out: &mut Vec<Override>) {
        push(out, "name", self.name.clone());
        push(out, "output_root", self.output_root.as_ref().map(|p| p.display().to_string()));
        push(out, "seed", self.seed.map(|s| s as i64));
        push(out, "jobs", int(self.jobs));
        push(out, "method", self.method.clone());
    }
}

impl PipelineFlags {
    fn overrides(&self, out: &mut Vec<Override>) {
        push(out, "pipeline.fusion.v_thr", self.v_thr);
        push(out, "pipeline.threshold.window", int(self.window));
        push(out, "pipeline.threshold.k", self.k);
        push(out, "pipeline.threshold.r", self.r);
        push(out, "pipeline.threshold.floor", self.floor);
        push(out, "pipeline.threshold.min_area", int(self.min_area));
        push(out, "pipeline.rule.delta", self.delta);
        push(out, "pipeline.deep_stage", int(self.deep_stage));
        if self.no_gate {
            push(out, "pipeline.gate_on_class", Some(false));
        }
    }
}

fn resolve(common: &Common, flags: Vec<Override>) -> anyhow::Result<config::RunConfig> {
    let mut all = Vec::new();
    common.overrides(&mut all);
    all.extend(flags);
    Ok(config::resolve(common.config.as_deref(), &common.sets, &all)?)
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let mut f = Vec::new();
            push(&mut f, "data.scenes", int(a.scenes));
            push(&mut f, "data.sampler.width", int(a.scene_size));
            push(&mut f, "data.sampler.height", int(a.scene_size));
            push(&mut f, "data.sampler.sites", int(a.sites));
            push(&mut f, "data.sampler.stray", int(a.stray));
            push(&mut f, "data.window", int(a.crop));
            push(&mut f, "data.stride", int(a.stride));
            push(&mut f, "data.damage_ratio", a.damage_ratio);
            push(&mut f, "data.superimpose_fraction", a.superimpose_fraction);
            let cfg = resolve(&a.common, f)?;
            commands::gen_data(&cfg, a.out)
        }
        Command::Train(a) => {
            let mut f = Vec::new();
            push(&mut f, "train.epochs", int(a.epochs));
            push(&mut f, "train.lr", a.lr);
            push(&mut f, "train.lr_decay_epoch", int(a.lr_decay_epoch));
            push(&mut f, "train.batch_size", int(a.batch_size));
            push(&mut f, "train.momentum", a.momentum);
            push(&mut f, "train.weight_decay", a.weight_decay);
            push(&mut f, "train.flip_prob", a.flip_prob);
            push(&mut f, "train.clip_norm", a.clip_norm);
            let cfg = resolve(&a.common, f)?;
            commands::train(&cfg, a.data, a.val)
        }
        Command::Infer(a) => {
            let mut f = Vec::new();
            a.pipeline.overrides(&mut f);
            let cfg = resolve(&a.common, f)?;
            commands::infer(cfg, a.checkpoint, &a.input)
        }
        Command::Evaluate(a) => {
            let mut f = Vec::new();
            a.pipeline.overrides(&mut f);
            let cfg = resolve(&a.common, f)?;
            commands::evaluate(&cfg, a.pred, &a.gt)
        }
        Command::Ablate(a) => {
            let mut f = Vec::new();
            a.pipeline.overrides(&mut f);
            let cfg = resolve(&a.common, f)?;
            commands::ablate(cfg, a.checkpoint, a.data)
        }
    }
}

/// 1 for anything traceable to user input, 2 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<lidseg::Error>() {
        return match e {
            lidseg::Error::State(_) => 2,
            _ => 1,
        };
    }
    if err.downcast_ref::<InputError>().is_some() {
        return 1;
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match std::panic::catch_unwind(|| dispatch(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
        // The panic hook has already printed the message.
        Err(_) => ExitCode::from(2),
    }
}
