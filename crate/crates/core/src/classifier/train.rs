use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Class, NetworkSpec, Sample};
use crate::error::{Error, Result};
use crate::grid::Plane;
use crate::nn::{CaptureRecord, LayerId, Network, Sgd};
use crate::synth::flip_plane;
use crate::tensor::{softmax_cross_entropy, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Epoch (0-based) at which the learning rate is multiplied by
    /// `lr_decay`; `None` disables decay.
    pub lr_decay_epoch: Option<usize>,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Independent probability of a horizontal and of a vertical flip.
    pub flip_prob: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Rescale each batch gradient so its global norm is at most this.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            lr_decay_epoch: Some(20),
            lr_decay: 0.1,
            batch_size: 32,
            epochs: 30,
            flip_prob: 0.5,
            momentum: 0.9,
            weight_decay: 0.0,
            clip_norm: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("learning rate must be finite and ≥ 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::config("flip probability must lie in [0, 1]"));
        }
        if !(self.lr_decay > 0.0) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::config("decay factor, momentum and weight decay out of range"));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::config("clip norm must be positive and finite"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_decay_epoch {
            Some(at) if epoch >= at => self.lr * self.lr_decay,
            _ => self.lr,
        }
    }
}

/// One line per epoch; `epoch` counts from 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

pub struct TrainOutcome {
    pub network: Network,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.log.last().map(|l| l.accuracy)
    }
}

fn check_samples(samples: &[Sample], spec: &NetworkSpec) -> Result<()> {
    for class in [Class::Damage, Class::Background] {
        if !samples.iter().any(|s| s.label == class) {
            return Err(Error::data(format!("no {} samples", class.dir_name())));
        }
    }
    let [_, h, w] = spec.input;
    if let Some(bad) = samples.iter().find(|s| s.image.dims() != (w, h)) {
        return Err(Error::data(format!(
            "image {}×{} does not match network input {w}×{h}",
            bad.image.width(),
            bad.image.height()
        )));
    }
    Ok(())
}

fn batch_tensor(images: &[Plane]) -> Tensor {
    let (w, h) = images[0].dims();
    let mut data = Vec::with_capacity(images.len() * w * h);
    for img in images {
        data.extend_from_slice(img.data());
    }
    Tensor::new(vec![images.len(), 1, h, w], data).expect("batch dims")
}

/// Mini-batch SGD on softmax cross-entropy from a seeded He
/// initialisation. Identical inputs and seed give identical weights.
pub fn train(samples: &[Sample], spec: &NetworkSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(samples, spec, cfg, |_| {})
}

pub fn train_with_progress(
    samples: &[Sample],
    spec: &NetworkSpec,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_samples(samples, spec)?;
    let mut network = spec.build(cfg.seed)?;
    let mut sgd = Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        sgd.lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let images: Vec<Plane> = batch
                .iter()
                .map(|&i| flip_plane(&samples[i].image, cfg.flip_prob, &mut rng))
                .collect();
            let labels: Vec<usize> = batch.iter().map(|&i| samples[i].label.index()).collect();
            let logits = network.forward(&batch_tensor(&images))?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            loss_sum += loss * batch.len() as f64;
            correct += logits
                .data()
                .chunks(Class::COUNT)
                .zip(&labels)
                .filter(|(row, &l)| argmax(row) == l)
                .count();
            let (mut grads, _) = network.backward(&grad, &[])?;
            if let Some(max) = cfg.clip_norm {
                let norm = grads.norm();
                if norm > max {
                    grads.scale(max / norm);
                }
            }
            sgd.step(&mut network, &grads)?;
        }
        let entry = EpochLog {
            epoch: epoch + 1,
            loss: loss_sum / samples.len() as f64,
            accuracy: correct as f64 / samples.len() as f64,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { network, log })
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Pre-softmax class scores of one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub logits: Vec<f64>,
}

impl ClassScores {
    /// Highest-scoring class; ties go to the lower index.
    pub fn predicted(&self) -> Class {
        Class::from_index(argmax(&self.logits)).expect("two logits")
    }
}

/// Scores one image and, when `capture_layers` is non-empty,
/// back-propagates the score of `target` (default: the predicted class)
/// to harvest activations and gradients at each requested layer.
pub fn classify_with_capture(
    network: &mut Network,
    image: &Plane,
    capture_layers: &[LayerId],
    target: Option<Class>,
) -> Result<(ClassScores, Vec<CaptureRecord>)> {
    if let Some(&bad) = capture_layers.iter().find(|&&l| l >= network.layers().len()) {
        return Err(Error::config(format!("unknown capture layer {bad}")));
    }
    let input = image.to_tensor();
    if capture_layers.is_empty() {
        let logits = network.predict(&input)?;
        return Ok((ClassScores { logits: logits.into_data() }, Vec::new()));
    }
    let logits = network.forward(&input)?;
    let scores = ClassScores {
        logits: logits.data().to_vec(),
    };
    if scores.logits.len() != Class::COUNT {
        return Err(Error::config(format!(
            "network has {} outputs, expected {}",
            scores.logits.len(),
            Class::COUNT
        )));
    }
    let target = target.unwrap_or_else(|| scores.predicted());
    let mut seed = Tensor::zeros(logits.shape());
    seed.data_mut()[target.index()] = 1.0;
    let (_, records) = network.backward(&seed, capture_layers)?;
    Ok((scores, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::StageSpec;

    fn toy_spec() -> NetworkSpec {
        NetworkSpec {
            input: [1, 16, 16],
            stages: vec![StageSpec { convs: 1, width: 4 }, StageSpec { convs: 1, width: 4 }],
            hidden: vec![],
        }
    }

    /// Bright square somewhere vs blank-ish noise floor.
    fn toy_samples(n: usize, seed: u64) -> Vec<Sample> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let damage = i % 2 == 0;
                let (cx, cy) = (rng.random_range(3..13), rng.random_range(3..13));
                let image = Plane::from_fn(16, 16, |x, y| {
                    let noise = rng.random_range(0.0..0.05);
                    let inside = (x as i64 - cx).abs() <= 1 && (y as i64 - cy).abs() <= 1;
                    if damage && inside {
                        0.9
                    } else {
                        noise
                    }
                });
                Sample {
                    image,
                    label: if damage { Class::Damage } else { Class::Background },
                }
            })
            .collect()
    }

    fn toy_cfg() -> TrainConfig {
        TrainConfig {
            lr: 0.05,
            lr_decay_epoch: None,
            batch_size: 8,
            epochs: 5,
            seed: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let samples = toy_samples(96, 1);
        let out = train(&samples, &toy_spec(), &toy_cfg()).unwrap();
        assert!(out.final_accuracy().unwrap() >= 0.99, "{:?}", out.log);
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let samples = toy_samples(16, 2);
        let cfg = TrainConfig { lr: 0.0, epochs: 2, ..toy_cfg() };
        let out = train(&samples, &toy_spec(), &cfg).unwrap();
        let init = toy_spec().build(cfg.seed).unwrap();
        assert_eq!(out.network.flat_params(), init.flat_params());
    }

    #[test]
    fn same_seed_same_weights() {
        let samples = toy_samples(16, 3);
        let cfg = TrainConfig { epochs: 2, ..toy_cfg() };
        let a = train(&samples, &toy_spec(), &cfg).unwrap();
        let b = train(&samples, &toy_spec(), &cfg).unwrap();
        assert_eq!(a.network.flat_params(), b.network.flat_params());
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn clipping_bounds_each_step() {
        let samples = toy_samples(16, 5);
        // One batch, one epoch, no momentum: the step is exactly lr·ĝ.
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 16,
            momentum: 0.0,
            flip_prob: 0.0,
            clip_norm: Some(1e-3),
            ..toy_cfg()
        };
        let init = toy_spec().build(cfg.seed).unwrap().flat_params();
        let out = train(&samples, &toy_spec(), &cfg).unwrap().network.flat_params();
        let step: f64 = init.iter().zip(&out).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!((step - cfg.lr * 1e-3).abs() < 1e-12, "{step}");
        assert!(TrainConfig { clip_norm: Some(0.0), ..cfg.clone() }.validate().is_err());
    }

    #[test]
    fn missing_class_is_data_error() {
        let samples: Vec<_> = toy_samples(8, 4).into_iter().filter(|s| s.label == Class::Damage).collect();
        assert!(matches!(train(&samples, &toy_spec(), &toy_cfg()), Err(Error::Data(_))));
    }

    #[test]
    fn lr_schedule_decays_once() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(19), 1e-3);
        assert!((cfg.lr_at(20) - 1e-4).abs() < 1e-18);
        assert!(TrainConfig { flip_prob: 1.5, ..cfg.clone() }.validate().is_err());
    }

    #[test]
    fn capture_on_zero_network() {
        let spec = toy_spec();
        let mut net = spec.build_zeroed().unwrap();
        let img = Plane::filled(16, 16, 0.3);
        let (scores, recs) = classify_with_capture(&mut net, &img, &[], None).unwrap();
        assert_eq!(scores.logits, vec![0.0, 0.0]);
        assert!(recs.is_empty());
        let layers = spec.stage_capture_layers().unwrap();
        let (scores, recs) = classify_with_capture(&mut net, &img, &layers, None).unwrap();
        assert_eq!(scores.logits[0], scores.logits[1]);
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].activations.shape(), [1, 4, 16, 16]);
        assert_eq!(recs[1].gradients.shape(), [1, 4, 8, 8]);
        assert!(classify_with_capture(&mut net, &img, &[999], None).is_err());
    }
}
