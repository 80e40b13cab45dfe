use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, conv_output_extent, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool2d {
        kernel: usize,
        stride: usize,
    },
    AvgPool2d {
        kernel: usize,
        stride: usize,
    },
    Linear {
        in_features: usize,
        out_features: usize,
    },
    Flatten,
}

impl LayerKind {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerKind::Conv2d { .. } | LayerKind::Linear { .. })
    }

    /// Per-sample output shape for a per-sample input shape, or a
    /// configuration error when the layer cannot accept it.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let [c, h, w] = image_shape(input)?;
                if c != in_channels {
                    return Err(Error::config(format!(
                        "conv expects {in_channels} channels, got {c}"
                    )));
                }
                Ok(vec![
                    out_channels,
                    conv_output_extent(h, kernel, stride, padding)?,
                    conv_output_extent(w, kernel, stride, padding)?,
                ])
            }
            LayerKind::MaxPool2d { kernel, stride } | LayerKind::AvgPool2d { kernel, stride } => {
                let [c, h, w] = image_shape(input)?;
                if kernel == 0 || stride == 0 {
                    return Err(Error::config("pool kernel and stride must be positive"));
                }
                for extent in [h, w] {
                    if extent < kernel || (extent - kernel) % stride != 0 {
                        return Err(Error::config(format!(
                            "pool kernel {kernel} stride {stride} does not tile extent {extent}"
                        )));
                    }
                }
                Ok(vec![c, (h - kernel) / stride + 1, (w - kernel) / stride + 1])
            }
            LayerKind::Relu => Ok(input.to_vec()),
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
            LayerKind::Linear {
                in_features,
                out_features,
            } => match input {
                [f] if *f == in_features => Ok(vec![out_features]),
                _ => Err(Error::config(format!(
                    "linear expects [{in_features}], got {input:?}"
                ))),
            },
        }
    }
}

fn image_shape(input: &[usize]) -> Result<[usize; 3]> {
    match *input {
        [c, h, w] => Ok([c, h, w]),
        _ => Err(Error::config(format!("expected C×H×W input, got {input:?}"))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNode {
    pub kind: LayerKind,
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
}

impl LayerNode {
    /// Parameterless layers get no tensors; conv and linear layers get
    /// zero-filled weights.
    pub fn zeroed(kind: LayerKind) -> Self {
        let (weight, bias) = match param_shapes(&kind) {
            Some((w, b)) => (Some(Tensor::zeros(&w)), Some(Tensor::zeros(&b))),
            None => (None, None),
        };
        LayerNode { kind, weight, bias }
    }

    /// He-normal weights (std = √(2 / fan_in)), zero biases.
    pub fn he_init(kind: LayerKind, rng: &mut impl Rng) -> Self {
        let mut node = Self::zeroed(kind);
        if let Some(w) = node.weight.as_mut() {
            let fan_in: usize = w.shape()[1..].iter().product();
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
            for v in w.data_mut() {
                *v = normal.sample(rng);
            }
        }
        node
    }

    pub fn param_count(&self) -> usize {
        self.weight.as_ref().map_or(0, Tensor::len) + self.bias.as_ref().map_or(0, Tensor::len)
    }

    /// Forward for a batched input. Conv layers require matching channel
    /// counts and room for the kernel after padding.
    pub fn conv2d_forward(&self, input: &Tensor) -> Result<Tensor> {
        match self.kind {
            LayerKind::Conv2d {
                stride, padding, ..
            } => tensor::conv2d(
                input,
                self.weight.as_ref().expect("conv weight"),
                self.bias.as_ref(),
                stride,
                padding,
            ),
            other => Err(Error::config(format!("{other:?} is not a conv layer"))),
        }
    }
}

pub(crate) fn param_shapes(kind: &LayerKind) -> Option<(Vec<usize>, Vec<usize>)> {
    match *kind {
        LayerKind::Conv2d {
            in_channels,
            out_channels,
            kernel,
            ..
        } => Some((
            vec![out_channels, in_channels, kernel, kernel],
            vec![out_channels],
        )),
        LayerKind::Linear {
            in_features,
            out_features,
        } => Some((vec![out_features, in_features], vec![out_features])),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_extent_formula() {
        let kind = LayerKind::Conv2d {
            in_channels: 3,
            out_channels: 5,
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        // floor((9 + 2 − 3) / 2) + 1 = 5
        assert_eq!(kind.output_shape(&[3, 9, 9]).unwrap(), vec![5, 5, 5]);
        assert!(kind.output_shape(&[2, 9, 9]).is_err());
    }

    #[test]
    fn pool_rejects_odd_extent() {
        let kind = LayerKind::MaxPool2d { kernel: 2, stride: 2 };
        assert_eq!(kind.output_shape(&[4, 8, 8]).unwrap(), vec![4, 4, 4]);
        assert!(matches!(kind.output_shape(&[4, 7, 8]), Err(Error::Config(_))));
    }

    #[test]
    fn conv2d_forward_via_node() {
        let mut node = LayerNode::zeroed(LayerKind::Conv2d {
            in_channels: 1,
            out_channels: 1,
            kernel: 3,
            stride: 1,
            padding: 0,
        });
        node.weight.as_mut().unwrap().data_mut().fill(1.0);
        let y = node.conv2d_forward(&Tensor::full(&[1, 1, 3, 3], 1.0)).unwrap();
        assert_eq!(y.data(), [9.0]);
        assert!(LayerNode::zeroed(LayerKind::Relu)
            .conv2d_forward(&Tensor::zeros(&[1, 1, 3, 3]))
            .is_err());
    }
}
