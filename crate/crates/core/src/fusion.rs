//! Nonlinear multi-scale fusion of stage CAMs.
//!
//! Stage maps are brought to input resolution and summed; the original
//! image is added to restore large targets that shallow maps only activate
//! along their edges; a thresholded deep-layer map then gates the result so
//! bright clutter the image contributes is removed.

use serde::{Deserialize, Serialize};

use crate::cam::Heatmap;
use crate::error::{Error, Result};
use crate::grid::{Mask, Plane};
use crate::tensor::upsample_bilinear;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Rescale each map to `[0, 1]`; constant maps become zero.
    #[default]
    MinMax,
    /// Leave maps unscaled.
    None,
}

impl Normalization {
    pub fn apply(self, plane: &Plane) -> Plane {
        match self {
            Normalization::MinMax => plane.min_max_normalized(),
            Normalization::None => plane.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// 1-based stages whose maps are summed.
    pub stages: Vec<usize>,
    /// Mask threshold on the normalised deep map.
    pub v_thr: f64,
    /// Applied to each CAM and to every sum.
    pub normalization: Normalization,
    /// Applied to the image before it is added. The default keeps gray/255
    /// so that faint crops do not have their noise stretched to full scale.
    pub image_normalization: Normalization,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            stages: vec![1, 2, 3, 4],
            v_thr: 0.1,
            normalization: Normalization::MinMax,
            image_normalization: Normalization::None,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self, stage_count: usize) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::config("fusion needs at least one stage"));
        }
        if let Some(bad) = self.stages.iter().find(|&&s| s == 0 || s > stage_count) {
            return Err(Error::config(format!("fusion stage {bad} outside 1..={stage_count}")));
        }
        if !(0.0..=1.0).contains(&self.v_thr) {
            return Err(Error::config("v_thr must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Every intermediate map of one fusion, all at input resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionProducts {
    /// Input image as given, `[0, 1]`.
    pub image: Plane,
    pub stage_maps: Vec<Plane>,
    pub m_cgcam: Plane,
    pub m_multi: Plane,
    pub m_deep: Plane,
    pub mask: Mask,
    pub m_fusion: Plane,
}

/// Bilinear resize to `(width, height)`; identity when already there.
pub fn to_resolution(map: &Plane, (width, height): (usize, usize)) -> Result<Plane> {
    if map.dims() == (width, height) {
        return Ok(map.clone());
    }
    if map.width() > width || map.height() > height {
        return Err(Error::config(format!(
            "map {}×{} exceeds target resolution {width}×{height}",
            map.width(),
            map.height()
        )));
    }
    Plane::from_tensor(&upsample_bilinear(&map.to_tensor(), height, width)?)
}

/// Upsamples and normalises each stage map, sums them, and normalises the
/// sum.
pub fn fuse_stages(stage_maps: &[Heatmap], resolution: (usize, usize), normalization: Normalization) -> Result<Heatmap> {
    let (first, rest) = stage_maps
        .split_first()
        .ok_or_else(|| Error::config("no stage maps to fuse"))?;
    let mut sum = normalization.apply(&to_resolution(&first.values, resolution)?);
    for map in rest {
        let m = normalization.apply(&to_resolution(&map.values, resolution)?);
        for (s, v) in sum.data_mut().iter_mut().zip(m.data()) {
            *s += v;
        }
    }
    Ok(Heatmap {
        values: normalization.apply(&sum),
        source_layer: None,
        class: first.class,
    })
}

/// Step function of `m_deep − v_thr`: 1 where the map reaches the
/// threshold, 0 below it.
pub fn deep_mask(m_deep: &Plane, v_thr: f64) -> Mask {
    m_deep.map(|&v| v - v_thr >= 0.0)
}

/// Full fusion. `stage_maps` are the maps selected for summation (any
/// resolution up to the image's); `m_deep` is the deep-layer map.
pub fn nm_fusion(image: &Plane, stage_maps: &[Heatmap], m_deep: &Heatmap, cfg: &FusionConfig) -> Result<FusionProducts> {
    if !(0.0..=1.0).contains(&cfg.v_thr) {
        return Err(Error::config("v_thr must lie in [0, 1]"));
    }
    let res = image.dims();
    let m_cgcam = fuse_stages(stage_maps, res, cfg.normalization)?.values;
    let stage_planes = stage_maps
        .iter()
        .map(|m| to_resolution(&m.values, res).map(|p| cfg.normalization.apply(&p)))
        .collect::<Result<Vec<_>>>()?;

    let image_n = cfg.image_normalization.apply(image);
    let mut multi = image_n;
    for (m, c) in multi.data_mut().iter_mut().zip(m_cgcam.data()) {
        *m += c;
    }
    let m_multi = cfg.normalization.apply(&multi);

    let m_deep = cfg.normalization.apply(&to_resolution(&m_deep.values, res)?);
    let mask = deep_mask(&m_deep, cfg.v_thr);
    let m_fusion = Plane::from_vec(
        res.0,
        res.1,
        m_multi
            .data()
            .iter()
            .zip(mask.data())
            .map(|(&v, &on)| if on { v } else { 0.0 })
            .collect(),
    )?;
    Ok(FusionProducts {
        image: image.clone(),
        stage_maps: stage_planes,
        m_cgcam,
        m_multi,
        m_deep,
        mask,
        m_fusion,
    })
}
