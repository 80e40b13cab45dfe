use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lidseg::classifier::{classification_metrics, load_dataset_dir, train_with_progress, Class, NetworkSpec};
use lidseg::eval::{evaluate_image, EvalReport};
use lidseg::nn::{load_checkpoint, save_checkpoint, Network};
use lidseg::pipeline::{self, AblationTable, Item, Method};
use lidseg::postprocess::{extract_regions, render_overlay};
use lidseg::synth::{build_dataset, write_dataset};
use lidseg::{io, Mask};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::InputError;

const CHECKPOINT_FILE: &str = "model.ckpt";

fn input_err(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

fn pool(cfg: &RunConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .context("cannot start worker pool")
}

/// Creates the run directory and echoes the resolved config into
/// `config/<command>.toml`.
fn start_run(cfg: &RunConfig, command: &str) -> Result<PathBuf> {
    let dir = cfg.run_dir();
    io::create_dir(&dir.join("config"))?;
    io::write_text(&dir.join("config").join(format!("{command}.toml")), &cfg.to_toml()?)?;
    Ok(dir)
}

/// PNG/PGM files directly in `dir`, by file name.
fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| input_err(format!("{}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("png" | "pgm")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn gen_data(cfg: &RunConfig, out: Option<PathBuf>) -> Result<()> {
    let dir = start_run(cfg, "gen-data")?;
    let out = out.unwrap_or_else(|| dir.join("data"));
    let dataset = pool(cfg)?.install(|| build_dataset(&cfg.data))?;
    write_dataset(&out, &dataset, &serde_json::to_value(&cfg.data)?)?;
    let damage = dataset.crops.iter().filter(|c| c.label == Class::Damage).count();
    println!(
        "wrote {} crops ({} damage, {} background) from {} scenes to {}",
        dataset.crops.len(),
        damage,
        dataset.crops.len() - damage,
        dataset.scenes.len(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ValidationReport {
    samples: usize,
    accuracy: Option<f64>,
    precision: Option<f64>,
    recall: Option<f64>,
    f1: Option<f64>,
}

pub fn train(cfg: &RunConfig, data: Option<PathBuf>, val: Option<PathBuf>) -> Result<()> {
    cfg.network.validate()?;
    cfg.train.validate()?;
    let dir = start_run(cfg, "train")?;
    let data = data.unwrap_or_else(|| dir.join("data"));
    let samples = load_dataset_dir(&data)?;
    eprintln!("training on {} samples from {}", samples.len(), data.display());
    let outcome = pool(cfg)?.install(|| {
        train_with_progress(&samples, &cfg.network, &cfg.train, |l| {
            eprintln!("epoch {:>3}  loss {:.5}  accuracy {:.4}", l.epoch, l.loss, l.accuracy);
        })
    })?;

    let ckpt_dir = dir.join("checkpoints");
    io::create_dir(&ckpt_dir)?;
    let extra = serde_json::json!({ "network": cfg.network, "train": cfg.train });
    save_checkpoint(&ckpt_dir.join(CHECKPOINT_FILE), &outcome.network, &extra)?;

    let reports = dir.join("reports");
    io::create_dir(&reports)?;
    let mut log = String::from("epoch,loss,accuracy\n");
    for l in &outcome.log {
        log.push_str(&format!("{},{},{}\n", l.epoch, l.loss, l.accuracy));
    }
    io::write_text(&reports.join("train_log.csv"), &log)?;

    if let Some(val) = val {
        let held_out = load_dataset_dir(&val)?;
        let labels: Vec<Class> = held_out.iter().map(|s| s.label).collect();
        let preds = pool(cfg)?.install(|| predict_classes(&outcome.network, &held_out))?;
        let m = classification_metrics(&preds, &labels)?;
        let report = ValidationReport {
            samples: held_out.len(),
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
        };
        io::write_text(&reports.join("validation.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
        println!("validation accuracy {} on {} samples", m.accuracy.map_or_else(|| "NA".into(), |a| format!("{a:.4}")), held_out.len());
    }
    println!("checkpoint written to {}", ckpt_dir.join(CHECKPOINT_FILE).display());
    Ok(())
}

fn predict_classes(network: &Network, samples: &[lidseg::classifier::Sample]) -> lidseg::Result<Vec<Class>> {
    samples
        .par_iter()
        .map_init(
            || network.clone(),
            |net, s| Ok(lidseg::classifier::classify_with_capture(net, &s.image, &[], None)?.0.predicted()),
        )
        .collect()
}

/// Loads a checkpoint and the topology recorded in it. The checkpoint's
/// topology replaces `cfg.network` so the echo is accurate.
fn load_model(cfg: &mut RunConfig, path: &Path) -> Result<Network> {
    if !path.is_file() {
        return Err(input_err(format!("checkpoint {} not found", path.display())));
    }
    let (network, extra) = load_checkpoint(path)?;
    let spec: NetworkSpec = serde_json::from_value(extra.get("network").cloned().unwrap_or_default())
        .map_err(|e| lidseg::Error::Checkpoint(format!("no usable network description: {e}")))?;
    if !spec.matches(&network) {
        return Err(lidseg::Error::Checkpoint("stored topology does not match stored weights".into()).into());
    }
    cfg.network = spec;
    cfg.pipeline.validate(&cfg.network)?;
    Ok(network)
}

pub fn infer(mut cfg: RunConfig, checkpoint: Option<PathBuf>, input: &Path) -> Result<()> {
    let checkpoint = checkpoint.unwrap_or_else(|| cfg.run_dir().join("checkpoints").join(CHECKPOINT_FILE));
    let network = load_model(&mut cfg, &checkpoint)?;
    let files = if input.is_dir() {
        image_files(input)?
    } else if input.is_file() {
        vec![input.to_path_buf()]
    } else {
        return Err(input_err(format!("{} does not exist", input.display())));
    };
    if files.is_empty() {
        return Err(input_err(format!("no PNG or PGM images in {}", input.display())));
    }
    let [_, h, w] = cfg.network.input;
    let mut items = Vec::with_capacity(files.len());
    for f in &files {
        let image = io::read_gray(f)?;
        if image.dims() != (w, h) {
            return Err(lidseg::Error::Data(format!(
                "{} is {}×{}, the network takes {w}×{h}",
                f.display(),
                image.width(),
                image.height()
            ))
            .into());
        }
        items.push(Item { name: stem(f), image, truth: None });
    }
    let mut seen = std::collections::BTreeSet::new();
    if let Some(dup) = items.iter().find(|i| !seen.insert(i.name.clone())) {
        return Err(input_err(format!("two inputs share the name '{}'", dup.name)));
    }

    let dir = start_run(&cfg, "infer")?;
    let outcomes = pool(&cfg)?.install(|| pipeline::run(&network, &cfg.network, &items, &Method::ALL, &cfg.pipeline))?;

    let [heat, overlays, masks, reports] = ["heatmaps", "overlays", "masks", "reports"].map(|d| dir.join(d));
    for d in [&heat, &overlays, &masks, &reports] {
        io::create_dir(d)?;
    }
    let mut csv = String::from("image,predicted,logit_damage,logit_background,method,regions,foreground_pixels\n");
    for (item, out) in items.iter().zip(&outcomes) {
        let bundle_dir = heat.join(&out.name);
        pipeline::write_bundle(&bundle_dir, &out.bundle)?;
        for m in &out.methods {
            io::write_heatmap_png(&bundle_dir.join(format!("{}.png", m.method)), &m.map)?;
            io::write_float_map(&bundle_dir.join(format!("{}.fmap", m.method)), &m.map)?;
        }
        let chosen = out
            .methods
            .iter()
            .find(|m| m.method == cfg.method)
            .expect("every method ran");
        io::write_mask_png(&masks.join(format!("{}.png", out.name)), &chosen.segmentation.mask)?;
        io::write_rgb(
            &overlays.join(format!("{}.png", out.name)),
            &render_overlay(&item.image, &chosen.segmentation, None),
        )?;
        let logit = |c: Class| out.scores.logits[c.index()];
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            out.name,
            out.scores.predicted().dir_name(),
            logit(Class::Damage),
            logit(Class::Background),
            cfg.method,
            chosen.segmentation.regions.len(),
            chosen.segmentation.mask.count()
        ));
    }
    io::write_text(&reports.join("predictions.csv"), &csv)?;
    println!("{} image(s) processed with {}; outputs in {}", outcomes.len(), cfg.method, dir.display());
    Ok(())
}

/// Every PNG/PGM under `dir`, keyed by file name.
fn masks_by_name(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(input_err(format!("{} is not a directory", dir.display())));
    }
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for f in image_files(&d)? {
            if let Some(prev) = out.insert(file_name(&f), f.clone()) {
                return Err(input_err(format!("{} and {} share a file name", prev.display(), f.display())));
            }
        }
        for entry in std::fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            }
        }
    }
    Ok(out)
}

fn report_echo(cfg: &RunConfig) -> Result<serde_json::Value> {
    Ok(serde_json::json!({ "method": cfg.method, "pipeline": cfg.pipeline }))
}

pub fn evaluate(cfg: &RunConfig, pred: Option<PathBuf>, gt: &Path) -> Result<()> {
    cfg.pipeline.rule.validate()?;
    let pred = pred.unwrap_or_else(|| cfg.run_dir().join("masks"));
    let preds = masks_by_name(&pred)?;
    let truths = masks_by_name(gt)?;
    if preds.is_empty() {
        return Err(input_err(format!("no predicted masks in {}", pred.display())));
    }
    if let Some(missing) = preds.keys().find(|k| !truths.contains_key(*k)) {
        return Err(input_err(format!("no ground truth for {missing} in {}", gt.display())));
    }
    let dir = start_run(cfg, "evaluate")?;
    let pairs: Vec<(&String, &PathBuf)> = preds.iter().collect();
    let images = pool(cfg)?.install(|| {
        pairs
            .par_iter()
            .map(|(name, path)| {
                let p: Mask = io::read_mask(path)?;
                let g = io::read_mask(&truths[*name])?;
                if !p.same_dims(&g) {
                    return Err(lidseg::Error::Data(format!("{name}: prediction and ground truth differ in size")));
                }
                let seg = extract_regions(&p, 1);
                evaluate_image(name, &seg, &g, cfg.pipeline.rule)
            })
            .collect::<lidseg::Result<Vec<_>>>()
    })?;
    let report = EvalReport::new(images, cfg.pipeline.rule, report_echo(cfg)?);
    let reports = dir.join("reports");
    io::create_dir(&reports)?;
    report.write(&reports, "eval")?;
    let a = &report.aggregate;
    let f = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"));
    println!(
        "{} images  p-precision {}  p-recall {}  p-F1 {}  IoU {}  FDR {}",
        a.images,
        f(a.pixel.precision),
        f(a.pixel.recall),
        f(a.pixel.f1),
        f(a.pixel.iou),
        f(a.fdr)
    );
    Ok(())
}

pub fn ablate(mut cfg: RunConfig, checkpoint: Option<PathBuf>, data: Option<PathBuf>) -> Result<()> {
    let checkpoint = checkpoint.unwrap_or_else(|| cfg.run_dir().join("checkpoints").join(CHECKPOINT_FILE));
    let network = load_model(&mut cfg, &checkpoint)?;
    let data = data.unwrap_or_else(|| cfg.run_dir().join("data"));
    let mut items = Vec::new();
    for class in [Class::Damage, Class::Background] {
        let class_dir = data.join(class.dir_name());
        if !class_dir.is_dir() {
            return Err(lidseg::Error::Data(format!("missing class directory {}", class_dir.display())).into());
        }
        for f in image_files(&class_dir)? {
            let mask_path = data.join("masks").join(class.dir_name()).join(file_name(&f));
            if !mask_path.is_file() {
                return Err(lidseg::Error::Data(format!("no mask {} for {}", mask_path.display(), f.display())).into());
            }
            items.push(Item {
                name: format!("{}/{}", class.dir_name(), stem(&f)),
                image: io::read_gray(&f)?,
                truth: Some(io::read_mask(&mask_path)?),
            });
        }
    }
    if items.is_empty() {
        return Err(input_err(format!("no images in {}", data.display())));
    }

    let dir = start_run(&cfg, "ablate")?;
    let methods = Method::ABLATION;
    let outcomes = pool(&cfg)?.install(|| pipeline::run(&network, &cfg.network, &items, &methods, &cfg.pipeline))?;
    let table = AblationTable::from_outcomes(&outcomes, &methods, &cfg.pipeline);
    let reports = dir.join("reports");
    io::create_dir(&reports)?;
    io::write_text(&reports.join("ablation.csv"), &table.csv_string())?;
    let echo = report_echo(&cfg)?;
    for m in methods {
        pipeline::method_report(&outcomes, m, &cfg.pipeline, echo.clone()).write(&reports, &format!("ablation_{m}"))?;
    }
    print!("{}", table.pretty());
    Ok(())
}
