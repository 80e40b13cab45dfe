//! Image → maps → segmentation → report, for every CAM method at once.
//!
//! One forward/backward pass per image captures all stages; each method
//! only differs in which maps it reads from that capture.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cam::{cg_cam_stage, grad_cam, layer_cam, Heatmap};
use crate::classifier::{classify_with_capture, Class, ClassScores, NetworkSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate_image, format_rate, AggregateMetrics, EvalReport, ImageReport, MatchRule};
use crate::fusion::{fuse_stages, nm_fusion, to_resolution, FusionConfig, FusionProducts};
use crate::grid::{Mask, Plane};
use crate::io;
use crate::nn::Network;
use crate::postprocess::{segment, SegmentationResult, ThresholdConfig};

/// Pooling kernel every stage ends with.
const POOL_KERNEL: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Grad-CAM of the deepest stage, upsampled.
    GradCam,
    /// Fused per-stage LayerCAM maps.
    LayerCam,
    /// Fused per-stage continuous-gradient maps.
    CgCam,
    /// CG-CAM with image compensation and deep-map gating.
    CgFusion,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::GradCam, Method::LayerCam, Method::CgCam, Method::CgFusion];
    /// Rows of the ablation table, baseline first.
    pub const ABLATION: [Method; 3] = [Method::LayerCam, Method::CgCam, Method::CgFusion];

    pub fn name(self) -> &'static str {
        match self {
            Method::GradCam => "gradcam",
            Method::LayerCam => "layercam",
            Method::CgCam => "cgcam",
            Method::CgFusion => "cgfusion",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::config(format!("unknown method '{s}' (gradcam, layercam, cgcam, cgfusion)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub fusion: FusionConfig,
    pub threshold: ThresholdConfig,
    pub rule: MatchRule,
    /// 1-based stage supplying Grad-CAM and the fusion's deep mask; `None`
    /// means the last stage.
    pub deep_stage: Option<usize>,
    /// Images the classifier calls background get an empty segmentation.
    pub gate_on_class: bool,
    /// Class whose score is back-propagated; `None` uses the prediction.
    pub target: Option<Class>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            fusion: FusionConfig::default(),
            threshold: ThresholdConfig::default(),
            rule: MatchRule::default(),
            deep_stage: None,
            gate_on_class: true,
            target: Some(Class::Damage),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        let stages = spec.stages.len();
        self.fusion.validate(stages)?;
        self.threshold.validate()?;
        self.rule.validate()?;
        if let Some(s) = self.deep_stage {
            if s == 0 || s > stages {
                return Err(Error::config(format!("deep stage {s} outside 1..={stages}")));
            }
        }
        Ok(())
    }

    fn deep(&self, spec: &NetworkSpec) -> usize {
        self.deep_stage.unwrap_or(spec.stages.len())
    }
}

/// Every map one image produces, at native resolution per stage.
#[derive(Clone, Debug, PartialEq)]
pub struct CamBundle {
    pub scores: ClassScores,
    pub layer_cam: Vec<Heatmap>,
    pub cg_cam: Vec<Heatmap>,
    pub grad_cam: Heatmap,
    pub fusion: FusionProducts,
}

impl CamBundle {
    pub fn predicted(&self) -> Class {
        self.scores.predicted()
    }
}

pub fn compute_maps(network: &mut Network, spec: &NetworkSpec, image: &Plane, cfg: &PipelineConfig) -> Result<CamBundle> {
    if !spec.matches(network) {
        return Err(Error::config("network does not match its spec"));
    }
    if [image.height(), image.width()] != [spec.input[1], spec.input[2]] {
        return Err(Error::config(format!(
            "image is {}×{}, network expects {}×{}",
            image.width(),
            image.height(),
            spec.input[2],
            spec.input[1]
        )));
    }
    let layers = spec.stage_capture_layers()?;
    let (scores, records) = classify_with_capture(network, image, &layers, cfg.target)?;
    let class = cfg.target.unwrap_or_else(|| scores.predicted());
    let tag = |mut h: Heatmap| {
        h.class = Some(class);
        h
    };
    let layer_maps = records.iter().map(|r| layer_cam(r).map(tag)).collect::<Result<Vec<_>>>()?;
    let cg_maps = records
        .iter()
        .map(|r| cg_cam_stage(r, POOL_KERNEL).map(tag))
        .collect::<Result<Vec<_>>>()?;
    let deep = cfg.deep(spec);
    let grad = tag(grad_cam(&records[deep - 1])?);
    let selected: Vec<Heatmap> = cfg.fusion.stages.iter().map(|&s| cg_maps[s - 1].clone()).collect();
    let fusion = nm_fusion(image, &selected, &grad, &cfg.fusion)?;
    Ok(CamBundle {
        scores,
        layer_cam: layer_maps,
        cg_cam: cg_maps,
        grad_cam: grad,
        fusion,
    })
}

/// The `[0, 1]` map at input resolution that `method` hands to
/// thresholding.
pub fn method_map(bundle: &CamBundle, method: Method, cfg: &PipelineConfig) -> Result<Plane> {
    let res = bundle.fusion.image.dims();
    Ok(match method {
        Method::GradCam => cfg.fusion.normalization.apply(&to_resolution(&bundle.grad_cam.values, res)?),
        Method::LayerCam => {
            let selected: Vec<Heatmap> = cfg.fusion.stages.iter().map(|&s| bundle.layer_cam[s - 1].clone()).collect();
            fuse_stages(&selected, res, cfg.fusion.normalization)?.values
        }
        Method::CgCam => bundle.fusion.m_cgcam.clone(),
        Method::CgFusion => bundle.fusion.m_fusion.clone(),
    })
}

/// Segmentation of one method's map, honouring the class gate.
pub fn method_segmentation(bundle: &CamBundle, method: Method, cfg: &PipelineConfig) -> Result<(Plane, SegmentationResult)> {
    let map = method_map(bundle, method, cfg)?;
    if cfg.gate_on_class && bundle.predicted() == Class::Background {
        let (w, h) = map.dims();
        return Ok((map, SegmentationResult { mask: Mask::filled(w, h, false), regions: Vec::new() }));
    }
    let seg = segment(&map, &cfg.threshold)?;
    Ok((map, seg))
}

/// An image to run, with optional ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Item {
    pub name: String,
    pub image: Plane,
    pub truth: Option<Mask>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodOutcome {
    pub method: Method,
    pub map: Plane,
    pub segmentation: SegmentationResult,
    pub report: Option<ImageReport>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ItemOutcome {
    pub name: String,
    pub scores: ClassScores,
    pub bundle: CamBundle,
    pub methods: Vec<MethodOutcome>,
}

fn run_item(network: &mut Network, spec: &NetworkSpec, item: &Item, methods: &[Method], cfg: &PipelineConfig) -> Result<ItemOutcome> {
    let bundle = compute_maps(network, spec, &item.image, cfg)?;
    let methods = methods
        .iter()
        .map(|&method| {
            let (map, segmentation) = method_segmentation(&bundle, method, cfg)?;
            let report = item
                .truth
                .as_ref()
                .map(|gt| evaluate_image(&item.name, &segmentation, gt, cfg.rule))
                .transpose()?;
            Ok(MethodOutcome { method, map, segmentation, report })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ItemOutcome {
        name: item.name.clone(),
        scores: bundle.scores.clone(),
        bundle,
        methods,
    })
}

/// Runs every item through every method. Work is split across the current
/// rayon pool; results come back in input order whatever the pool size.
pub fn run(network: &Network, spec: &NetworkSpec, items: &[Item], methods: &[Method], cfg: &PipelineConfig) -> Result<Vec<ItemOutcome>> {
    cfg.validate(spec)?;
    items
        .par_iter()
        .map_init(|| network.clone(), |net, item| run_item(net, spec, item, methods, cfg))
        .collect()
}

/// Per-method evaluation over outcomes that carried ground truth.
pub fn method_report(outcomes: &[ItemOutcome], method: Method, cfg: &PipelineConfig, config_echo: serde_json::Value) -> EvalReport {
    let images = outcomes
        .iter()
        .flat_map(|o| o.methods.iter().filter(|m| m.method == method))
        .filter_map(|m| m.report.clone())
        .collect();
    EvalReport::new(images, cfg.rule, config_echo)
}

/// Rows `{method, p-precision, p-recall, p-F1, IoU, FDR}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub method: Method,
    pub metrics: AggregateMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub const COLUMNS: [&'static str; 6] = ["method", "p_precision", "p_recall", "p_f1", "iou", "fdr"];

    pub fn from_outcomes(outcomes: &[ItemOutcome], methods: &[Method], cfg: &PipelineConfig) -> Self {
        let rows = methods
            .iter()
            .map(|&method| AblationRow {
                method,
                metrics: method_report(outcomes, method, cfg, serde_json::Value::Null).aggregate,
            })
            .collect();
        AblationTable { rows }
    }

    pub fn row(&self, method: Method) -> Option<&AggregateMetrics> {
        self.rows.iter().find(|r| r.method == method).map(|r| &r.metrics)
    }

    pub fn csv_string(&self) -> String {
        let mut out = Self::COLUMNS.join(",") + "\n";
        for r in &self.rows {
            let p = &r.metrics.pixel;
            let cells = [
                r.method.name().to_string(),
                format_rate(p.precision),
                format_rate(p.recall),
                format_rate(p.f1),
                format_rate(p.iou),
                format_rate(r.metrics.fdr),
            ];
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Fixed-width text rendering for terminals, three decimals.
    pub fn pretty(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v:.3}"));
        let mut out = format!(
            "{:<10} {:>11} {:>9} {:>6} {:>6} {:>6}\n",
            "method", "p-precision", "p-recall", "p-F1", "IoU", "FDR"
        );
        for r in &self.rows {
            let p = &r.metrics.pixel;
            out.push_str(&format!(
                "{:<10} {:>11} {:>9} {:>6} {:>6} {:>6}\n",
                r.method.name(),
                f(p.precision),
                f(p.recall),
                f(p.f1),
                f(p.iou),
                f(r.metrics.fdr)
            ));
        }
        out
    }
}

/// Writes one directory of fusion products: PNG for viewing, float maps
/// for exact reuse.
pub fn write_bundle(dir: &Path, bundle: &CamBundle) -> Result<()> {
    io::create_dir(dir)?;
    let f = &bundle.fusion;
    let mut planes: Vec<(String, &Plane)> = vec![
        ("image".into(), &f.image),
        ("m_cgcam".into(), &f.m_cgcam),
        ("m_multi".into(), &f.m_multi),
        ("m_deep".into(), &f.m_deep),
        ("m_fusion".into(), &f.m_fusion),
    ];
    for (i, p) in f.stage_maps.iter().enumerate() {
        planes.push((format!("stage{}_cgcam", i + 1), p));
    }
    for (name, plane) in planes {
        io::write_heatmap_png(&dir.join(format!("{name}.png")), plane)?;
        io::write_float_map(&dir.join(format!("{name}.fmap")), plane)?;
    }
    io::write_mask_png(&dir.join("mask.png"), &f.mask)
}
