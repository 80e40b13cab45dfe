use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Class;
use crate::error::{Error, Result};
use crate::nn::{LayerId, LayerKind, LayerNode, Network};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub convs: usize,
    pub width: usize,
}

/// A VGG-shaped topology: stages of 3×3 same-padded conv+ReLU pairs each
/// closed by a 2×2 max pool, then flatten and a fully connected head
/// ending in one logit per class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `channels × height × width` of one input image.
    pub input: [usize; 3],
    pub stages: Vec<StageSpec>,
    /// Hidden widths of the fully connected head.
    pub hidden: Vec<usize>,
}

impl Default for NetworkSpec {
    /// Width-reduced VGG-16: 2-2-3-3-3 convs at widths 8-16-32-64-64.
    fn default() -> Self {
        Self::with_widths([8, 16, 32, 64, 64], vec![64])
    }
}

impl NetworkSpec {
    /// Full VGG-16 stage widths and head.
    pub fn vgg16() -> Self {
        Self::with_widths([64, 128, 256, 512, 512], vec![4096, 4096])
    }

    fn with_widths(widths: [usize; 5], hidden: Vec<usize>) -> Self {
        let convs = [2, 2, 3, 3, 3];
        NetworkSpec {
            input: [1, 128, 128],
            stages: convs
                .iter()
                .zip(widths)
                .map(|(&convs, width)| StageSpec { convs, width })
                .collect(),
            hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::config("network needs at least one stage"));
        }
        if self.stages.iter().any(|s| s.convs == 0 || s.width == 0) {
            return Err(Error::config("every stage needs ≥1 conv and positive width"));
        }
        let div = 1usize << self.stages.len();
        let [c, h, w] = self.input;
        if c == 0 || h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(Error::config(format!(
                "input {h}×{w} must be divisible by 2^{} for {} pooled stages",
                self.stages.len(),
                self.stages.len()
            )));
        }
        Ok(())
    }

    pub fn layer_kinds(&self) -> Result<Vec<LayerKind>> {
        self.validate()?;
        let mut kinds = Vec::new();
        let mut channels = self.input[0];
        for stage in &self.stages {
            for _ in 0..stage.convs {
                kinds.push(LayerKind::Conv2d {
                    in_channels: channels,
                    out_channels: stage.width,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                });
                kinds.push(LayerKind::Relu);
                channels = stage.width;
            }
            kinds.push(LayerKind::MaxPool2d { kernel: 2, stride: 2 });
        }
        kinds.push(LayerKind::Flatten);
        let div = 1 << self.stages.len();
        let mut features = channels * (self.input[1] / div) * (self.input[2] / div);
        for &h in &self.hidden {
            kinds.push(LayerKind::Linear {
                in_features: features,
                out_features: h,
            });
            kinds.push(LayerKind::Relu);
            features = h;
        }
        kinds.push(LayerKind::Linear {
            in_features: features,
            out_features: Class::COUNT,
        });
        Ok(kinds)
    }

    /// He-initialised network; the same seed always yields the same weights.
    pub fn build(&self, seed: u64) -> Result<Network> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = self
            .layer_kinds()?
            .into_iter()
            .map(|k| LayerNode::he_init(k, &mut rng))
            .collect();
        Network::new(layers, self.input.to_vec())
    }

    /// Same topology with every parameter zero.
    pub fn build_zeroed(&self) -> Result<Network> {
        let layers = self.layer_kinds()?.into_iter().map(LayerNode::zeroed).collect();
        Network::new(layers, self.input.to_vec())
    }

    /// Capture point of every stage: the activated output of its last conv,
    /// i.e. the tensor its max pool consumes. Index 0 is stage 1.
    pub fn stage_capture_layers(&self) -> Result<Vec<LayerId>> {
        let kinds = self.layer_kinds()?;
        Ok(kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| matches!(k, LayerKind::MaxPool2d { .. }))
            .map(|(i, _)| i - 1)
            .collect())
    }

    /// Capture layer for 1-based `stage`.
    pub fn stage_layer(&self, stage: usize) -> Result<LayerId> {
        let layers = self.stage_capture_layers()?;
        stage
            .checked_sub(1)
            .and_then(|i| layers.get(i).copied())
            .ok_or_else(|| Error::config(format!("stage {stage} outside 1..={}", layers.len())))
    }

    /// Whether `network` has exactly this topology.
    pub fn matches(&self, network: &Network) -> bool {
        match self.layer_kinds() {
            Ok(kinds) => {
                network.input_shape() == self.input
                    && network.layers().iter().map(|l| l.kind).eq(kinds)
            }
            Err(_) => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_vgg16_shaped() {
        let spec = NetworkSpec::default();
        let kinds = spec.layer_kinds().unwrap();
        let convs = kinds.iter().filter(|k| matches!(k, LayerKind::Conv2d { .. })).count();
        let pools = kinds.iter().filter(|k| matches!(k, LayerKind::MaxPool2d { .. })).count();
        assert_eq!(convs, 13);
        assert_eq!(pools, 5);
        let net = spec.build(0).unwrap();
        for (stage, &layer) in spec.stage_capture_layers().unwrap().iter().enumerate() {
            assert_eq!(net.layers()[layer].kind, LayerKind::Relu);
            assert!(matches!(net.layers()[layer + 1].kind, LayerKind::MaxPool2d { .. }));
            let shape = net.layer_output_shape(layer).unwrap();
            assert_eq!(shape[1], 128 >> stage);
        }
    }

    #[test]
    fn rejects_indivisible_input() {
        let mut spec = NetworkSpec::default();
        spec.input = [1, 100, 100];
        assert!(matches!(spec.build(0), Err(Error::Config(_))));
        assert!(spec.stage_layer(1).is_err());
        assert!(NetworkSpec::default().stage_layer(6).is_err());
        assert!(NetworkSpec::default().stage_layer(0).is_err());
    }

    #[test]
    fn seeded_build_is_reproducible() {
        let spec = NetworkSpec::default();
        assert_eq!(spec.build(9).unwrap().flat_params(), spec.build(9).unwrap().flat_params());
        assert_ne!(spec.build(9).unwrap().flat_params(), spec.build(10).unwrap().flat_params());
    }
}
