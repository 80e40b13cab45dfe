//! Pixel-level overlap metrics and target-level false detection rate.
//!
//! Rates with a zero denominator are `None` and are written as `NA`.

use std::path::Path;

use serde::{Serialize, Serializer};

use crate::rate::{harmonic, ratio};
use crate::error::{Error, Result};
use crate::grid::Mask;
use crate::postprocess::{extract_regions, SegmentationResult};

/// Version of the CSV column set and JSON layout written by this module.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Per-image CSV columns, in order.
pub const CSV_COLUMNS: [&str; 11] = [
    "image",
    "p_precision",
    "p_recall",
    "p_f1",
    "iou",
    "fdr",
    "tp",
    "fp",
    "pixel_tp",
    "pixel_fp",
    "pixel_fn",
];

pub(crate) fn serialize_na<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_str("NA"),
    }
}

pub fn format_rate(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PixelCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl PixelCounts {
    pub fn between(pred: &Mask, gt: &Mask) -> Result<Self> {
        if !pred.same_dims(gt) {
            return Err(Error::config(format!(
                "prediction {:?} and ground truth {:?} differ in size",
                pred.dims(),
                gt.dims()
            )));
        }
        let mut c = PixelCounts::default();
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
        Ok(c)
    }

    pub fn add(&mut self, other: PixelCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn metrics(self) -> PixelMetrics {
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        PixelMetrics {
            counts: self,
            precision,
            recall,
            f1: harmonic(precision, recall),
            iou: ratio(self.tp, self.tp + self.fp + self.fn_),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PixelMetrics {
    pub counts: PixelCounts,
    #[serde(serialize_with = "serialize_na")]
    pub precision: Option<f64>,
    #[serde(serialize_with = "serialize_na")]
    pub recall: Option<f64>,
    #[serde(serialize_with = "serialize_na")]
    pub f1: Option<f64>,
    /// `|gt ∩ pred| / |gt ∪ pred|`
    #[serde(serialize_with = "serialize_na")]
    pub iou: Option<f64>,
}

pub fn pixel_metrics(pred: &Mask, gt: &Mask) -> Result<PixelMetrics> {
    Ok(PixelCounts::between(pred, gt)?.metrics())
}

/// How a predicted region is judged against the IoU threshold δ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct MatchRule {
    pub delta: f64,
    /// With `false`, δ = 0 means "IoU > 0" (any overlap); with `true` the
    /// comparison is always `IoU ≥ δ`, which at δ = 0 accepts everything.
    pub literal: bool,
}

impl Default for MatchRule {
    fn default() -> Self {
        MatchRule {
            delta: 0.0,
            literal: false,
        }
    }
}

impl MatchRule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::config("δ must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn accepts(&self, iou: f64) -> bool {
        if self.delta == 0.0 && !self.literal {
            iou > 0.0
        } else {
            iou >= self.delta
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RegionVerdict {
    /// IoU against the ground-truth components the region touches.
    pub iou: f64,
    pub matched: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FdrReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(serialize_with = "serialize_na")]
    pub fdr: Option<f64>,
    pub verdicts: Vec<RegionVerdict>,
}

/// Scores each predicted region by its IoU with the union of the
/// ground-truth components (8-connected) it overlaps, then
/// `FDR = FP / (TP + FP)`.
pub fn fdr(seg: &SegmentationResult, gt: &Mask, rule: MatchRule) -> Result<FdrReport> {
    rule.validate()?;
    if !seg.mask.same_dims(gt) {
        return Err(Error::config("segmentation and ground truth differ in size"));
    }
    let (w, h) = gt.dims();
    let gt_regions = extract_regions(gt, 1).regions;
    let mut label = vec![usize::MAX; w * h];
    for (id, r) in gt_regions.iter().enumerate() {
        for &(x, y) in &r.pixels {
            label[y * w + x] = id;
        }
    }
    let mut verdicts = Vec::with_capacity(seg.regions.len());
    for region in &seg.regions {
        let mut touched: Vec<usize> = region
            .pixels
            .iter()
            .map(|&(x, y)| label[y * w + x])
            .filter(|&l| l != usize::MAX)
            .collect();
        touched.sort_unstable();
        touched.dedup();
        let inter = region.pixels.iter().filter(|&&(x, y)| label[y * w + x] != usize::MAX).count();
        let gt_area: usize = touched.iter().map(|&t| gt_regions[t].area()).sum();
        let union = region.area() + gt_area - inter;
        let iou = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
        verdicts.push(RegionVerdict {
            iou,
            matched: rule.accepts(iou),
        });
    }
    let tp = verdicts.iter().filter(|v| v.matched).count();
    let fp = verdicts.len() - tp;
    Ok(FdrReport {
        tp,
        fp,
        fdr: ratio(fp, tp + fp),
        verdicts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageReport {
    pub image: String,
    pub pixel: PixelMetrics,
    pub target: FdrReport,
}

pub fn evaluate_image(name: &str, seg: &SegmentationResult, gt: &Mask, rule: MatchRule) -> Result<ImageReport> {
    Ok(ImageReport {
        image: name.to_string(),
        pixel: pixel_metrics(&seg.mask, gt)?,
        target: fdr(seg, gt, rule)?,
    })
}

/// Pooled (micro-averaged) metrics over a set of images.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateMetrics {
    pub images: usize,
    pub pixel: PixelMetrics,
    pub tp: usize,
    pub fp: usize,
    #[serde(serialize_with = "serialize_na")]
    pub fdr: Option<f64>,
}

pub fn aggregate(reports: &[ImageReport]) -> AggregateMetrics {
    let mut counts = PixelCounts::default();
    let (mut tp, mut fp) = (0, 0);
    for r in reports {
        counts.add(r.pixel.counts);
        tp += r.target.tp;
        fp += r.target.fp;
    }
    AggregateMetrics {
        images: reports.len(),
        pixel: counts.metrics(),
        tp,
        fp,
        fdr: ratio(fp, tp + fp),
    }
}

/// Everything written for one evaluation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub averaging: &'static str,
    pub region_iou: &'static str,
    pub rule: MatchRule,
    pub aggregate: AggregateMetrics,
    #[serde(skip)]
    pub images: Vec<ImageReport>,
    /// Caller-supplied configuration echo.
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn new(images: Vec<ImageReport>, rule: MatchRule, config: serde_json::Value) -> Self {
        EvalReport {
            schema_version: REPORT_SCHEMA_VERSION,
            averaging: "micro",
            region_iou: "predicted region vs union of touched ground-truth components",
            rule,
            aggregate: aggregate(&images),
            images,
            config,
        }
    }

    pub fn csv_string(&self) -> String {
        let mut out = CSV_COLUMNS.join(",");
        out.push('\n');
        for r in &self.images {
            let row = [
                r.image.clone(),
                format_rate(r.pixel.precision),
                format_rate(r.pixel.recall),
                format_rate(r.pixel.f1),
                format_rate(r.pixel.iou),
                format_rate(r.target.fdr),
                r.target.tp.to_string(),
                r.target.fp.to_string(),
                r.pixel.counts.tp.to_string(),
                r.pixel.counts.fp.to_string(),
                r.pixel.counts.fn_.to_string(),
            ];
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        crate::io::write_text(&dir.join(format!("{stem}.csv")), &self.csv_string())?;
        crate::io::write_text(&dir.join(format!("{stem}.json")), &self.json_string()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postprocess::extract_regions;

    fn square(w: usize, x0: usize, y0: usize, s: usize) -> Mask {
        Mask::from_fn(w, w, |x, y| (x0..x0 + s).contains(&x) && (y0..y0 + s).contains(&y))
    }

    #[test]
    fn identity_disjoint_half() {
        let gt = square(10, 2, 2, 4);
        let m = pixel_metrics(&gt, &gt).unwrap();
        assert_eq!((m.precision, m.recall, m.f1, m.iou), (Some(1.0), Some(1.0), Some(1.0), Some(1.0)));

        let other = square(10, 7, 7, 2);
        let m = pixel_metrics(&other, &gt).unwrap();
        assert_eq!((m.precision, m.recall, m.f1, m.iou), (Some(0.0), Some(0.0), Some(0.0), Some(0.0)));

        let half = Mask::from_fn(10, 10, |x, y| *gt.get(x, y) && x < 4);
        let m = pixel_metrics(&half, &gt).unwrap();
        assert_eq!((m.precision, m.recall, m.iou), (Some(1.0), Some(0.5), Some(0.5)));
    }

    #[test]
    fn empty_masks_are_na() {
        let e = Mask::filled(4, 4, false);
        let m = pixel_metrics(&e, &e).unwrap();
        assert_eq!(m.iou, None);
        assert!(pixel_metrics(&e, &Mask::filled(3, 4, false)).is_err());
    }

    #[test]
    fn fdr_arithmetic_and_fixture() {
        let gt = Mask::from_fn(20, 20, |x, y| (x < 3 && y < 3) || (x > 15 && y > 15));
        // Five predicted regions: three overlapping ground truth, two not.
        let pred = Mask::from_fn(20, 20, |x, y| {
            (x < 2 && y < 2)
                || (x == 17 && y == 17)
                || ((2..4).contains(&x) && y == 9)
                || (x == 10 && y == 2)
                || (x > 17 && y > 17 && x < 19)
        });
        let seg = extract_regions(&pred, 1);
        // (17,17) and the block at x=18 touch diagonally, so they form one region.
        assert_eq!(seg.regions.len(), 4);
        let r = fdr(&seg, &gt, MatchRule::default()).unwrap();
        assert_eq!((r.tp, r.fp), (2, 2));
        assert_eq!(r.fdr, Some(0.5));

        let r = fdr(&extract_regions(&Mask::filled(20, 20, false), 1), &gt, MatchRule::default()).unwrap();
        assert_eq!(r.fdr, None);
    }

    #[test]
    fn literal_rule_accepts_everything_at_zero() {
        let gt = square(10, 0, 0, 2);
        let seg = extract_regions(&square(10, 6, 6, 2), 1);
        let r = fdr(&seg, &gt, MatchRule { delta: 0.0, literal: true }).unwrap();
        assert_eq!(r.fdr, Some(0.0));
        let r = fdr(&seg, &gt, MatchRule::default()).unwrap();
        assert_eq!(r.fdr, Some(1.0));
        assert!(MatchRule { delta: 1.0, literal: false }.validate().is_err());
    }

    #[test]
    fn aggregate_of_one_is_identity() {
        let gt = square(12, 2, 2, 5);
        let seg = extract_regions(&square(12, 3, 3, 5), 1);
        let r = evaluate_image("a", &seg, &gt, MatchRule::default()).unwrap();
        let agg = aggregate(std::slice::from_ref(&r));
        assert_eq!(agg.pixel, r.pixel);
        assert_eq!(agg.fdr, r.target.fdr);
        let twice = aggregate(&[r.clone(), r.clone()]);
        assert_eq!(twice.pixel.iou, r.pixel.iou);
        assert_eq!(twice.fdr, r.target.fdr);
    }

    #[test]
    fn csv_has_fixed_columns_and_na() {
        let e = Mask::filled(4, 4, false);
        let r = evaluate_image("blank", &extract_regions(&e, 1), &e, MatchRule::default()).unwrap();
        let report = EvalReport::new(vec![r], MatchRule::default(), serde_json::Value::Null);
        let csv = report.csv_string();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(lines.next().unwrap(), "blank,NA,NA,NA,NA,NA,0,0,0,0,0");
        let json: serde_json::Value = serde_json::from_str(&report.json_string().unwrap()).unwrap();
        assert_eq!(json["aggregate"]["fdr"], "NA");
        assert_eq!(json["schema_version"], 1);
    }
}
