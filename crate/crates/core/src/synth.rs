//! Synthetic dark-field imagery and dataset construction.
//!
//! A scene is a dark, unevenly lit canvas carrying bright Gaussian damage
//! sites and three kinds of stray light (thin streaks, faint ghost rings,
//! glow bleeding in from an edge). Scenes are cut into overlapping
//! labelled crops; extra damage samples are made by compositing damage
//! crops onto stray-light crops.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::classifier::Class;
use crate::error::{Error, Result};
use crate::grid::{Mask, Plane};
use crate::io;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DamageSite {
    pub cx: f64,
    pub cy: f64,
    /// Nominal radius in pixels; the profile's standard deviation is half
    /// of it.
    pub radius: f64,
    /// Peak gray level above the background.
    pub peak: f64,
}

impl DamageSite {
    pub fn sigma(&self) -> f64 {
        self.radius / 2.0
    }

    pub fn contribution(&self, x: f64, y: f64) -> f64 {
        let d2 = (x - self.cx).powi(2) + (y - self.cy).powi(2);
        self.peak * (-d2 / (2.0 * self.sigma().powi(2))).exp()
    }

    /// Radius of the disk on which the contribution exceeds `threshold`.
    pub fn level_radius(&self, threshold: f64) -> f64 {
        if self.peak <= threshold {
            return 0.0;
        }
        self.sigma() * (2.0 * (self.peak / threshold).ln()).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Edge {
    Left,
    Right,
    Top,
    Bottom,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrayLight {
    /// Thin bright line segment with a Gaussian cross-section.
    Streak {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        width: f64,
        intensity: f64,
    },
    /// Faint ring left by an out-of-focus reflection.
    GhostBlob {
        cx: f64,
        cy: f64,
        radius: f64,
        thickness: f64,
        intensity: f64,
    },
    /// Glow decaying exponentially away from one canvas edge.
    EdgeGlow {
        edge: Edge,
        depth: f64,
        intensity: f64,
    },
}

impl StrayLight {
    pub fn kind_name(&self) -> &'static str {
        match self {
            StrayLight::Streak { .. } => "streak",
            StrayLight::GhostBlob { .. } => "ghost_blob",
            StrayLight::EdgeGlow { .. } => "edge_glow",
        }
    }

    fn contribution(&self, x: f64, y: f64, width: usize, height: usize) -> f64 {
        match *self {
            StrayLight::Streak {
                x0,
                y0,
                x1,
                y1,
                width: w,
                intensity,
            } => {
                let (dx, dy) = (x1 - x0, y1 - y0);
                let len2 = dx * dx + dy * dy;
                let t = if len2 > 0.0 {
                    (((x - x0) * dx + (y - y0) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let d2 = (x - x0 - t * dx).powi(2) + (y - y0 - t * dy).powi(2);
                let s = w / 2.0;
                intensity * (-d2 / (2.0 * s * s)).exp()
            }
            StrayLight::GhostBlob {
                cx,
                cy,
                radius,
                thickness,
                intensity,
            } => {
                let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                intensity * (-(d - radius).powi(2) / (2.0 * thickness * thickness)).exp()
            }
            StrayLight::EdgeGlow {
                edge,
                depth,
                intensity,
            } => {
                let dist = match edge {
                    Edge::Left => x,
                    Edge::Right => width as f64 - 1.0 - x,
                    Edge::Top => y,
                    Edge::Bottom => height as f64 - 1.0 - y,
                };
                intensity * (-dist / depth).exp()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Mean background gray level.
    pub background: f64,
    /// Extra gray level added linearly from the left edge to the right.
    pub illumination_ramp: f64,
    pub noise_sigma: f64,
    /// Damage contribution (gray levels) above which a pixel is labelled.
    pub label_threshold: f64,
    pub sites: Vec<DamageSite>,
    pub stray: Vec<StrayLight>,
    pub seed: u64,
}

impl SceneSpec {
    pub fn blank(width: usize, height: usize, seed: u64) -> Self {
        SceneSpec {
            width,
            height,
            background: 10.0,
            illumination_ramp: 0.0,
            noise_sigma: 0.0,
            label_threshold: 40.0,
            sites: Vec::new(),
            stray: Vec::new(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_range = |v: f64| (0.0..=255.0).contains(&v);
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("scene must be non-empty"));
        }
        if !in_range(self.background) || self.noise_sigma < 0.0 || !(self.label_threshold > 0.0) {
            return Err(Error::config("background, noise or label threshold out of range"));
        }
        for s in &self.sites {
            let inside = (0.0..self.width as f64).contains(&s.cx) && (0.0..self.height as f64).contains(&s.cy);
            if !inside || !in_range(s.peak) || !(s.radius > 0.0) {
                return Err(Error::config(format!("damage site {s:?} invalid for canvas")));
            }
        }
        for s in &self.stray {
            let intensity = match *s {
                StrayLight::Streak { intensity, .. }
                | StrayLight::GhostBlob { intensity, .. }
                | StrayLight::EdgeGlow { intensity, .. } => intensity,
            };
            if !in_range(intensity) {
                return Err(Error::config(format!("stray light {s:?} intensity out of range")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    /// Gray levels scaled to `[0, 1]`, quantised to 8 bits.
    pub image: Plane,
    pub mask: Mask,
}

/// Renders a scene. Damage and stray light combine by pixelwise maximum;
/// the result is clipped and quantised to 8-bit gray.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).expect("finite sigma");
    let (w, h) = (spec.width, spec.height);
    let mut image = Plane::filled(w, h, 0.0);
    let mut mask = Mask::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64, y as f64);
            let damage = spec.sites.iter().map(|s| s.contribution(fx, fy)).fold(0.0, f64::max);
            let stray = spec.stray.iter().map(|s| s.contribution(fx, fy, w, h)).fold(0.0, f64::max);
            let ramp = spec.illumination_ramp * fx / w as f64;
            let n = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let gray = (spec.background + ramp + damage.max(stray) + n).round().clamp(0.0, 255.0);
            image.set(x, y, gray / 255.0);
            mask.set(x, y, damage > spec.label_threshold);
        }
    }
    Ok(Scene { image, mask })
}

/// Ranges for randomly populated scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSampler {
    pub width: usize,
    pub height: usize,
    pub sites: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub peak_min: f64,
    pub peak_max: f64,
    /// Stray elements per scene, cycling through the three kinds.
    pub stray: usize,
    pub stray_intensity_min: f64,
    pub stray_intensity_max: f64,
    pub background: f64,
    pub illumination_ramp: f64,
    pub noise_sigma: f64,
    pub label_threshold: f64,
}

impl Default for SceneSampler {
    fn default() -> Self {
        SceneSampler {
            width: 1024,
            height: 1024,
            sites: 30,
            radius_min: 2.0,
            radius_max: 40.0,
            peak_min: 140.0,
            peak_max: 230.0,
            stray: 12,
            stray_intensity_min: 50.0,
            stray_intensity_max: 120.0,
            background: 8.0,
            illumination_ramp: 12.0,
            noise_sigma: 2.0,
            label_threshold: 40.0,
        }
    }
}

impl SceneSampler {
    /// Draws a scene spec; radii are log-uniform so small sites are common.
    pub fn sample(&self, seed: u64) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (self.width as f64, self.height as f64);
        let sites = (0..self.sites)
            .map(|_| {
                let radius = (rng.random_range(self.radius_min.ln()..=self.radius_max.ln())).exp();
                DamageSite {
                    cx: rng.random_range(0.0..w),
                    cy: rng.random_range(0.0..h),
                    radius,
                    peak: rng.random_range(self.peak_min..=self.peak_max),
                }
            })
            .collect();
        let edges = [Edge::Left, Edge::Right, Edge::Top, Edge::Bottom];
        let stray = (0..self.stray)
            .map(|i| {
                let intensity = rng.random_range(self.stray_intensity_min..=self.stray_intensity_max);
                match i % 3 {
                    0 => {
                        let (x0, y0) = (rng.random_range(0.0..w), rng.random_range(0.0..h));
                        let angle = rng.random_range(0.0..std::f64::consts::PI);
                        let len = rng.random_range(0.2..0.6) * w;
                        StrayLight::Streak {
                            x0,
                            y0,
                            x1: x0 + len * angle.cos(),
                            y1: y0 + len * angle.sin(),
                            width: rng.random_range(1.0..3.0),
                            intensity,
                        }
                    }
                    1 => StrayLight::GhostBlob {
                        cx: rng.random_range(0.0..w),
                        cy: rng.random_range(0.0..h),
                        radius: rng.random_range(20.0..60.0),
                        thickness: rng.random_range(2.0..5.0),
                        intensity: intensity * 0.6,
                    },
                    _ => StrayLight::EdgeGlow {
                        edge: edges[rng.random_range(0..4)],
                        depth: rng.random_range(15.0..40.0),
                        intensity,
                    },
                }
            })
            .collect();
        SceneSpec {
            width: self.width,
            height: self.height,
            background: self.background,
            illumination_ramp: self.illumination_ramp,
            noise_sigma: self.noise_sigma,
            label_threshold: self.label_threshold,
            sites,
            stray,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledCrop {
    pub image: Plane,
    pub mask: Mask,
    pub label: Class,
    /// Stable name used for files.
    pub name: String,
}

/// Top-left corners of a sliding window, row-major.
pub fn crop_origins(width: usize, height: usize, window: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if window == 0 || stride == 0 {
        return Err(Error::config("window and stride must be positive"));
    }
    if window > width || window > height {
        return Err(Error::config(format!(
            "window {window} larger than {width}×{height} image"
        )));
    }
    let xs = (width - window) / stride + 1;
    let ys = (height - window) / stride + 1;
    Ok((0..ys).flat_map(|j| (0..xs).map(move |i| (i * stride, j * stride))).collect())
}

/// Cuts `window × window` crops every `stride` pixels. A crop is damage
/// class when at least `min_mask_pixels` of its mask pixels are set;
/// background crops carry an empty mask.
pub fn crop_sliding(
    image: &Plane,
    mask: &Mask,
    window: usize,
    stride: usize,
    min_mask_pixels: usize,
    prefix: &str,
) -> Result<Vec<LabeledCrop>> {
    if !image.same_dims(mask) {
        return Err(Error::config("image and mask differ in size"));
    }
    crop_origins(image.width(), image.height(), window, stride)?
        .into_iter()
        .map(|(x, y)| {
            let img = image.crop(x, y, window, window)?;
            let m = mask.crop(x, y, window, window)?;
            let damage = m.count() >= min_mask_pixels.max(1);
            Ok(LabeledCrop {
                image: img,
                mask: if damage { m } else { Mask::filled(window, window, false) },
                label: if damage { Class::Damage } else { Class::Background },
                name: format!("{prefix}y{y:05}_x{x:05}"),
            })
        })
        .collect()
}

/// Composites a damage crop onto a stray-light crop by pixelwise maximum.
/// The result is damage class and keeps the damage crop's mask.
pub fn superimpose_augment(damage: &LabeledCrop, stray: &LabeledCrop, name: String) -> Result<LabeledCrop> {
    if !damage.image.same_dims(&stray.image) {
        return Err(Error::config("superimposed crops differ in size"));
    }
    if damage.label != Class::Damage || damage.mask.is_empty_mask() {
        return Err(Error::data("superimposition needs a damage crop with a non-empty mask"));
    }
    let data = damage
        .image
        .data()
        .iter()
        .zip(stray.image.data())
        .map(|(&a, &b)| a.max(b).clamp(0.0, 1.0))
        .collect();
    Ok(LabeledCrop {
        image: Plane::from_vec(damage.image.width(), damage.image.height(), data)?,
        mask: damage.mask.clone(),
        label: Class::Damage,
        name,
    })
}

/// Independent horizontal and vertical flips, each with probability `p`.
pub fn flip_plane(image: &Plane, p: f64, rng: &mut impl Rng) -> Plane {
    let (h, v) = (rng.random_bool(p), rng.random_bool(p));
    let mut out = if h { image.flip_horizontal() } else { image.clone() };
    if v {
        out = out.flip_vertical();
    }
    out
}

/// [`flip_plane`] applied identically to a crop's image and mask.
pub fn flip_augment(crop: &LabeledCrop, p: f64, rng: &mut impl Rng) -> LabeledCrop {
    let (h, v) = (rng.random_bool(p), rng.random_bool(p));
    let mut image = crop.image.clone();
    let mut mask = crop.mask.clone();
    if h {
        image = image.flip_horizontal();
        mask = mask.flip_horizontal();
    }
    if v {
        image = image.flip_vertical();
        mask = mask.flip_vertical();
    }
    LabeledCrop {
        image,
        mask,
        label: crop.label,
        name: crop.name.clone(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub scenes: usize,
    pub sampler: SceneSampler,
    pub window: usize,
    pub stride: usize,
    pub min_mask_pixels: usize,
    /// Fraction of damage crops also composited onto a stray-light crop.
    pub superimpose_fraction: f64,
    /// Target share of damage crops in the final set.
    pub damage_ratio: f64,
    /// Brightest-pixel gray level above which a background crop counts as
    /// carrying stray light.
    pub stray_gray: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            scenes: 2,
            sampler: SceneSampler::default(),
            window: 128,
            stride: 64,
            min_mask_pixels: 4,
            superimpose_fraction: 0.25,
            damage_ratio: 0.5,
            stray_gray: 40.0,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub crops: Vec<LabeledCrop>,
    pub scenes: Vec<SceneSpec>,
}

impl Dataset {
    pub fn damage_share(&self) -> f64 {
        let d = self.crops.iter().filter(|c| c.label == Class::Damage).count();
        d as f64 / self.crops.len().max(1) as f64
    }

    pub fn samples(&self) -> Vec<crate::classifier::Sample> {
        self.crops
            .iter()
            .map(|c| crate::classifier::Sample {
                image: c.image.clone(),
                label: c.label,
            })
            .collect()
    }
}

/// Scenes → sliding crops → superimposition → class balancing. Fully
/// determined by the config.
pub fn build_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&cfg.damage_ratio) || !(0.0..=1.0).contains(&cfg.superimpose_fraction) {
        return Err(Error::config("ratios must lie in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut scenes = Vec::with_capacity(cfg.scenes);
    let (mut damage, mut background) = (Vec::new(), Vec::new());
    for i in 0..cfg.scenes {
        let spec = cfg.sampler.sample(rng.random());
        let scene = generate_scene(&spec)?;
        for crop in crop_sliding(&scene.image, &scene.mask, cfg.window, cfg.stride, cfg.min_mask_pixels, &format!("s{i:03}_"))? {
            match crop.label {
                Class::Damage => damage.push(crop),
                Class::Background => background.push(crop),
            }
        }
        scenes.push(spec);
    }

    let stray_level = cfg.stray_gray / 255.0;
    let stray: Vec<&LabeledCrop> = background
        .iter()
        .filter(|c| c.image.min_max().1 >= stray_level)
        .collect();
    let mut extra = Vec::new();
    if !stray.is_empty() {
        let n = (damage.len() as f64 * cfg.superimpose_fraction).round() as usize;
        let mut picks: Vec<usize> = (0..damage.len()).collect();
        picks.shuffle(&mut rng);
        for (j, &d) in picks.iter().take(n).enumerate() {
            let s = stray[rng.random_range(0..stray.len())];
            extra.push(superimpose_augment(&damage[d], s, format!("sup{j:05}_{}", damage[d].name))?);
        }
    }
    damage.extend(extra);

    // Drop from whichever class is over-represented.
    let (d, b) = (damage.len() as f64, background.len() as f64);
    let rho = cfg.damage_ratio;
    if rho > 0.0 && rho < 1.0 && d + b > 0.0 {
        if d / (d + b) > rho {
            let keep = (rho * b / (1.0 - rho)).round() as usize;
            damage.shuffle(&mut rng);
            damage.truncate(keep.max(1));
        } else {
            let keep = (d * (1.0 - rho) / rho).round() as usize;
            background.shuffle(&mut rng);
            background.truncate(keep.max(1));
        }
    }
    let mut crops = damage;
    crops.extend(background);
    crops.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(Dataset { crops, scenes })
}

/// Writes `<root>/{damage,background}/<name>.png`, the masks under
/// `<root>/masks/{damage,background}/`, and `<root>/manifest.json`.
pub fn write_dataset(root: &Path, dataset: &Dataset, config: &serde_json::Value) -> Result<()> {
    for class in [Class::Damage, Class::Background] {
        io::create_dir(&root.join(class.dir_name()))?;
        io::create_dir(&root.join("masks").join(class.dir_name()))?;
    }
    for crop in &dataset.crops {
        let file = format!("{}.png", crop.name);
        io::write_gray(&root.join(crop.label.dir_name()).join(&file), &crop.image)?;
        io::write_mask_png(&root.join("masks").join(crop.label.dir_name()).join(&file), &crop.mask)?;
    }
    let manifest = serde_json::json!({
        "format": "lidseg-dataset",
        "version": 1,
        "config": config,
        "crops": dataset.crops.len(),
        "damage_share": dataset.damage_share(),
        "scenes": dataset.scenes,
    });
    io::write_text(&root.join("manifest.json"), &(serde_json::to_string_pretty(&manifest)? + "\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blank_scene() {
        let scene = generate_scene(&SceneSpec::blank(32, 24, 1)).unwrap();
        let v = scene.image.data()[0];
        assert!(scene.image.data().iter().all(|&p| p == v));
        assert!(scene.mask.is_empty_mask());
    }

    #[test]
    fn small_site_mask_contains_centre() {
        let mut spec = SceneSpec::blank(32, 32, 2);
        spec.sites.push(DamageSite { cx: 16.0, cy: 16.0, radius: 3.0, peak: 200.0 });
        let scene = generate_scene(&spec).unwrap();
        assert!(scene.mask.get(16, 16));
        assert!(!scene.mask.get(0, 0));
        // Symmetric about the centre.
        for (x, y) in [(14, 16), (18, 16), (16, 14), (16, 18)] {
            assert_eq!(scene.mask.get(x, y), scene.mask.get(16, 16 + (y as i64 - 16).unsigned_abs() as usize));
        }
    }

    #[test]
    fn mask_area_matches_level_set_disk() {
        let mut spec = SceneSpec::blank(64, 64, 3);
        let site = DamageSite { cx: 32.0, cy: 32.0, radius: 10.0, peak: 200.0 };
        spec.sites.push(site);
        let scene = generate_scene(&spec).unwrap();
        let analytic = std::f64::consts::PI * site.level_radius(spec.label_threshold).powi(2);
        let area = scene.mask.count() as f64;
        assert!((area - analytic).abs() <= 0.2 * analytic, "{area} vs {analytic}");
    }

    #[test]
    fn crop_counts() {
        assert_eq!(crop_origins(1024, 1024, 128, 64).unwrap().len(), 225);
        assert_eq!(crop_origins(1024, 1024, 128, 128).unwrap().len(), 64);
        assert!(matches!(crop_origins(100, 1024, 128, 64), Err(Error::Config(_))));
    }

    #[test]
    fn crops_respect_labeling_threshold() {
        let mut spec = SceneSpec::blank(256, 256, 4);
        spec.sites.push(DamageSite { cx: 100.0, cy: 100.0, radius: 6.0, peak: 200.0 });
        spec.sites.push(DamageSite { cx: 250.0, cy: 250.0, radius: 0.6, peak: 60.0 });
        let scene = generate_scene(&spec).unwrap();
        let crops = crop_sliding(&scene.image, &scene.mask, 128, 64, 4, "t").unwrap();
        assert_eq!(crops.len(), 9);
        for c in &crops {
            match c.label {
                Class::Damage => assert!(c.mask.count() >= 4),
                Class::Background => assert!(c.mask.is_empty_mask()),
            }
        }
        assert!(crops.iter().any(|c| c.label == Class::Damage));
    }

    fn crop(image: Plane, mask: Mask, label: Class) -> LabeledCrop {
        LabeledCrop { image, mask, label, name: "c".into() }
    }

    #[test]
    fn superimpose_identity_and_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = Plane::from_fn(8, 8, |_, _| rng.random_range(0.0..1.0));
        let mask = Mask::from_fn(8, 8, |x, _| x < 2);
        let damage = crop(img.clone(), mask.clone(), Class::Damage);
        let dark = crop(Plane::filled(8, 8, 0.0), Mask::filled(8, 8, false), Class::Background);
        let out = superimpose_augment(&damage, &dark, "o".into()).unwrap();
        assert_eq!(out.image, img);
        assert_eq!(out.mask, mask);
        assert!(matches!(superimpose_augment(&dark, &damage, "o".into()), Err(Error::Data(_))));
    }

    #[test]
    fn superimpose_dominates_sources() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let a = Plane::from_fn(8, 8, |_, _| rng.random_range(0.0..1.0));
            let b = Plane::from_fn(8, 8, |_, _| rng.random_range(0.0..1.0));
            let d = crop(a.clone(), Mask::filled(8, 8, true), Class::Damage);
            let s = crop(b.clone(), Mask::filled(8, 8, false), Class::Background);
            let out = superimpose_augment(&d, &s, "o".into()).unwrap();
            for ((o, x), y) in out.image.data().iter().zip(a.data()).zip(b.data()) {
                assert!(o >= x && o >= y);
            }
        }
    }

    #[test]
    fn flips_keep_label_and_track_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let img = Plane::from_fn(6, 6, |x, y| (x * 6 + y) as f64);
        let mask = Mask::from_fn(6, 6, |x, y| x == 0 && y == 0);
        let c = crop(img.clone(), mask, Class::Damage);
        for _ in 0..10 {
            let f = flip_augment(&c, 0.5, &mut rng);
            assert_eq!(f.label, Class::Damage);
            let (mx, my) = (0..36).map(|i| (i % 6, i / 6)).find(|&(x, y)| *f.mask.get(x, y)).unwrap();
            assert_eq!(*f.image.get(mx, my), 0.0);
        }
        assert_eq!(flip_augment(&c, 0.0, &mut rng).image, img);
        assert_eq!(flip_plane(&img, 0.0, &mut rng), img);
    }

    #[test]
    fn dataset_is_deterministic_and_balanced() {
        let cfg = DatasetConfig {
            scenes: 1,
            sampler: SceneSampler { width: 512, height: 512, sites: 10, stray: 6, ..Default::default() },
            ..Default::default()
        };
        let a = build_dataset(&cfg).unwrap();
        let b = build_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        assert!((a.damage_share() - 0.5).abs() <= 0.02, "{}", a.damage_share());
        for c in &a.crops {
            match c.label {
                Class::Damage => assert!(c.mask.count() >= 4),
                Class::Background => assert!(c.mask.is_empty_mask()),
            }
        }
    }

    #[test]
    fn invalid_scene_rejected() {
        let mut spec = SceneSpec::blank(16, 16, 0);
        spec.sites.push(DamageSite { cx: 40.0, cy: 3.0, radius: 2.0, peak: 100.0 });
        assert!(generate_scene(&spec).is_err());
    }
}
