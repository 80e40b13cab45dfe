//! Local dynamic (Sauvola) thresholding and connected-region extraction.

use std::collections::VecDeque;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Mask, Plane};
use crate::io::rgb_from_plane;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdConfig {
    /// Odd side length of the square window, in pixels.
    pub window: usize,
    /// Sensitivity.
    pub k: f64,
    /// Dynamic range of the standard deviation, in gray levels.
    pub r: f64,
    /// Regions smaller than this many pixels are discarded.
    pub min_area: usize,
    /// Gray level a pixel must also exceed to be foreground. 0 leaves the
    /// local rule alone.
    pub floor: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            window: 31,
            k: 0.2,
            r: 128.0,
            min_area: 2,
            floor: 90.0,
        }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::config(format!("window {} must be odd and ≥ 3", self.window)));
        }
        if !(self.r > 0.0) || !self.k.is_finite() {
            return Err(Error::config("R must be positive and k finite"));
        }
        if !(0.0..=255.0).contains(&self.floor) {
            return Err(Error::config("floor must lie in [0, 255]"));
        }
        Ok(())
    }
}

/// `T = μ·(1 + k·(σ/R − 1))`.
pub fn sauvola_value(mean: f64, std_dev: f64, k: f64, r: f64) -> f64 {
    mean * (1.0 + k * (std_dev / r - 1.0))
}

/// `[0, 1]` map to integer gray levels `0..=255` (round to nearest).
pub fn to_gray_levels(map: &Plane) -> Grid<u8> {
    map.map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// Window mean and standard deviation from exact integer sums.
pub(crate) fn window_stats(sum: u64, sum_sq: u64, count: u64) -> (f64, f64) {
    let n = count as f64;
    let mean = sum as f64 / n;
    let var = (sum_sq as f64 / n - mean * mean).max(0.0);
    (mean, var.sqrt())
}

/// Per-pixel threshold over `window × window` neighbourhoods with
/// replicated edges. Uses integral images of values and squared values;
/// the sums are integers, so they are exact.
pub fn sauvola_threshold_map(gray: &Grid<u8>, cfg: &ThresholdConfig) -> Result<Plane> {
    cfg.validate()?;
    let (w, h) = gray.dims();
    if cfg.window > w || cfg.window > h {
        return Err(Error::config(format!(
            "window {} larger than {w}×{h} image",
            cfg.window
        )));
    }
    let r = cfg.window / 2;
    let (pw, ph) = (w + 2 * r, h + 2 * r);
    // Integral images over the replicate-padded image, with a zero border
    // row and column: ii[y][x] = Σ padded[0..y][0..x].
    let stride = pw + 1;
    let mut ii = vec![0u64; (ph + 1) * stride];
    let mut ii_sq = vec![0u64; (ph + 1) * stride];
    for py in 0..ph {
        let sy = py.saturating_sub(r).min(h - 1);
        let (mut row, mut row_sq) = (0u64, 0u64);
        for px in 0..pw {
            let sx = px.saturating_sub(r).min(w - 1);
            let v = *gray.get(sx, sy) as u64;
            row += v;
            row_sq += v * v;
            ii[(py + 1) * stride + px + 1] = ii[py * stride + px + 1] + row;
            ii_sq[(py + 1) * stride + px + 1] = ii_sq[py * stride + px + 1] + row_sq;
        }
    }
    let area = (cfg.window * cfg.window) as u64;
    let rect = |t: &[u64], x: usize, y: usize| {
        let (x1, y1) = (x + cfg.window, y + cfg.window);
        t[y1 * stride + x1] + t[y * stride + x] - t[y * stride + x1] - t[y1 * stride + x]
    };
    Ok(Plane::from_fn(w, h, |x, y| {
        // Pixel (x, y) sits at (x + r, y + r) in padded coordinates, so its
        // window starts at (x, y).
        let (mean, sd) = window_stats(rect(&ii, x, y), rect(&ii_sq, x, y), area);
        sauvola_value(mean, sd, cfg.k, cfg.r)
    }))
}

/// Foreground where the gray value exceeds both its local threshold and
/// the floor.
pub fn sauvola_threshold(map: &Plane, cfg: &ThresholdConfig) -> Result<Mask> {
    let gray = to_gray_levels(map);
    let t = sauvola_threshold_map(&gray, cfg)?;
    Ok(Mask::from_fn(map.width(), map.height(), |x, y| {
        let g = *gray.get(x, y) as f64;
        g > *t.get(x, y) && g > cfg.floor
    }))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    /// `(x, y)` in scan order.
    pub pixels: Vec<(usize, usize)>,
    /// Inclusive `(x_min, y_min, x_max, y_max)`.
    pub bbox: (usize, usize, usize, usize),
}

impl Region {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationResult {
    /// Union of the kept regions.
    pub mask: Mask,
    pub regions: Vec<Region>,
}

/// 8-connected components of `mask` with at least `min_area` pixels,
/// ordered by their first pixel in scan order.
pub fn extract_regions(mask: &Mask, min_area: usize) -> SegmentationResult {
    let (w, h) = mask.dims();
    let mut seen = vec![false; w * h];
    let mut kept = Mask::filled(w, h, false);
    let mut regions = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if seen[start] || !mask.data()[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            pixels.push((x, y));
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if !seen[j] && mask.data()[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        if pixels.len() < min_area {
            continue;
        }
        pixels.sort_by_key(|&(x, y)| (y, x));
        let bbox = pixels.iter().fold((w, h, 0, 0), |(x0, y0, x1, y1), &(x, y)| {
            (x0.min(x), y0.min(y), x1.max(x), y1.max(y))
        });
        for &(x, y) in &pixels {
            kept.set(x, y, true);
        }
        regions.push(Region { pixels, bbox });
    }
    SegmentationResult { mask: kept, regions }
}

/// Thresholds and labels in one step.
pub fn segment(map: &Plane, cfg: &ThresholdConfig) -> Result<SegmentationResult> {
    Ok(extract_regions(&sauvola_threshold(map, cfg)?, cfg.min_area))
}

/// Paints regions over the grayscale image: red where `matched[i]` is true
/// (or when no verdicts are given), green for false positives.
pub fn render_overlay(image: &Plane, result: &SegmentationResult, matched: Option<&[bool]>) -> RgbImage {
    let mut out = rgb_from_plane(image);
    for (i, region) in result.regions.iter().enumerate() {
        let hit = matched.and_then(|m| m.get(i).copied()).unwrap_or(true);
        let color = if hit { Rgb([255, 0, 0]) } else { Rgb([0, 255, 0]) };
        for &(x, y) in &region.pixels {
            out.put_pixel(x as u32, y as u32, color);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn formula_substitution() {
        assert_eq!(sauvola_value(100.0, 64.0, 0.5, 128.0), 75.0);
    }

    #[test]
    fn constant_image_is_foreground() {
        // σ = 0 ⇒ T = μ(1 − k) < μ for k > 0 and μ > 0.
        let map = Plane::filled(9, 9, 100.0 / 255.0);
        let cfg = ThresholdConfig { window: 5, ..Default::default() };
        assert!(sauvola_threshold(&map, &cfg).unwrap().data().iter().all(|&b| b));
        // μ = 0 ⇒ T = 0 and nothing exceeds it.
        let dark = Plane::filled(9, 9, 0.0);
        assert!(sauvola_threshold(&dark, &cfg).unwrap().is_empty_mask());
    }

    #[test]
    fn config_errors() {
        let map = Plane::filled(8, 8, 0.5);
        for window in [2, 4, 1] {
            let cfg = ThresholdConfig { window, ..Default::default() };
            assert!(matches!(sauvola_threshold(&map, &cfg), Err(Error::Config(_))));
        }
        let cfg = ThresholdConfig { window: 9, ..Default::default() };
        assert!(matches!(sauvola_threshold(&map, &cfg), Err(Error::Config(_))));
        let cfg = ThresholdConfig { r: 0.0, window: 3, ..Default::default() };
        assert!(sauvola_threshold(&map, &cfg).is_err());
    }

    #[test]
    fn larger_k_admits_more_foreground_above_mean() {
        // Bright centre over a flat floor: where σ < R, raising k lowers T.
        let map = Plane::from_fn(21, 21, |x, y| {
            if (8..13).contains(&x) && (8..13).contains(&y) { 0.9 } else { 0.3 }
        });
        let mut last = 0;
        for k in [0.05, 0.1, 0.2, 0.4, 0.8] {
            let cfg = ThresholdConfig { window: 7, k, ..Default::default() };
            let n = sauvola_threshold(&map, &cfg).unwrap().count();
            assert!(n >= last);
            last = n;
        }
    }

    #[test]
    fn floor_suppresses_dim_foreground() {
        let map = Plane::filled(9, 9, 40.0 / 255.0);
        let lo = ThresholdConfig { window: 5, floor: 39.0, ..Default::default() };
        let hi = ThresholdConfig { floor: 40.0, ..lo.clone() };
        assert_eq!(sauvola_threshold(&map, &lo).unwrap().count(), 81);
        assert!(sauvola_threshold(&map, &hi).unwrap().is_empty_mask());
    }

    #[test]
    fn regions_basic() {
        assert!(extract_regions(&Mask::filled(5, 5, false), 1).regions.is_empty());
        let mask = Mask::from_fn(8, 8, |x, y| (x < 2 && y < 2) || ((5..7).contains(&x) && (5..7).contains(&y)));
        let r = extract_regions(&mask, 1);
        assert_eq!(r.regions.len(), 2);
        assert!(r.regions.iter().all(|g| g.area() == 4));
        assert_eq!(r.regions[1].bbox, (5, 5, 6, 6));
        assert_eq!(r.mask, mask);
    }

    #[test]
    fn diagonal_neighbours_connect_and_small_regions_drop() {
        let mask = Mask::from_fn(5, 5, |x, y| x == y || (x == 4 && y == 0));
        let r = extract_regions(&mask, 2);
        assert_eq!(r.regions.len(), 1);
        assert_eq!(r.regions[0].area(), 5);
        assert!(!r.mask.get(4, 0));
    }

    #[test]
    fn overlay_colors() {
        let mask = Mask::from_fn(4, 4, |x, y| (x == 0 && y == 0) || (x == 3 && y == 3));
        let seg = extract_regions(&mask, 1);
        let img = render_overlay(&Plane::filled(4, 4, 0.5), &seg, Some(&[true, false]));
        assert_eq!(img.get_pixel(0, 0), &Rgb([255, 0, 0]));
        assert_eq!(img.get_pixel(3, 3), &Rgb([0, 255, 0]));
        assert_eq!(img.get_pixel(1, 1), &Rgb([128, 128, 128]));
    }

    #[test]
    fn labels_are_scan_order_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mask = Mask::from_fn(24, 24, |_, _| rng.random_bool(0.35));
        let a = extract_regions(&mask, 1);
        let b = extract_regions(&mask.flip_horizontal(), 1);
        let mut sa: Vec<Vec<(usize, usize)>> = a.regions.iter().map(|r| r.pixels.clone()).collect();
        let mut sb: Vec<Vec<(usize, usize)>> = b
            .regions
            .iter()
            .map(|r| {
                let mut p: Vec<_> = r.pixels.iter().map(|&(x, y)| (23 - x, y)).collect();
                p.sort_by_key(|&(x, y)| (y, x));
                p
            })
            .collect();
        sa.sort();
        sb.sort();
        assert_eq!(sa, sb);
    }
}
