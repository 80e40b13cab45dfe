use serde::{Deserialize, Serialize};

use super::layer::{LayerKind, LayerNode};
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Index of a layer in its network. A capture at layer `i` observes that
/// layer's output.
pub type LayerId = usize;

/// Feature maps of one layer and the gradient of a scalar (normally a
/// pre-softmax class score) with respect to them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptureRecord {
    pub layer_id: LayerId,
    /// `batch × channels × height × width`
    pub activations: Tensor,
    pub gradients: Tensor,
}

impl CaptureRecord {
    pub fn new(layer_id: LayerId, activations: Tensor, gradients: Tensor) -> Result<Self> {
        if activations.shape() != gradients.shape() {
            return Err(Error::config(format!(
                "capture activations {:?} vs gradients {:?}",
                activations.shape(),
                gradients.shape()
            )));
        }
        Ok(CaptureRecord {
            layer_id,
            activations,
            gradients,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Gradients for every parameterised layer, `None` elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<Option<LayerGrads>>,
}

impl ParamGrads {
    /// All gradient values in layer order, weight before bias.
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|g| g.weight.data().iter().chain(g.bias.data()).copied())
            .collect()
    }

    /// Euclidean norm over every gradient value.
    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flatten()
            .flat_map(|g| g.weight.data().iter().chain(g.bias.data()))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.layers.iter_mut().flatten() {
            g.weight.data_mut().iter_mut().chain(g.bias.data_mut()).for_each(|v| *v *= factor);
        }
    }
}

/// Which side of every nonlinearity each element fell on in the last
/// forward pass: ReLU signs and max-pool winners.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActivationPattern {
    relu: Vec<Vec<bool>>,
    argmax: Vec<Vec<usize>>,
}

struct Trace {
    /// Input of every layer followed by the network output.
    values: Vec<Tensor>,
    argmax: Vec<Option<Vec<usize>>>,
}

/// A stack of layers. The last forward pass is retained until the next
/// backward consumes it, so an instance serves one caller at a time.
pub struct Network {
    layers: Vec<LayerNode>,
    input_shape: Vec<usize>,
    trace: Option<Trace>,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Network {
            layers: self.layers.clone(),
            input_shape: self.input_shape.clone(),
            trace: None,
        }
    }
}

impl std::fmt::Debug for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Network")
            .field("input_shape", &self.input_shape)
            .field("layers", &self.layers.iter().map(|l| l.kind).collect::<Vec<_>>())
            .finish()
    }
}

impl Network {
    /// Validates the layer chain against a per-sample input shape.
    pub fn new(layers: Vec<LayerNode>, input_shape: Vec<usize>) -> Result<Self> {
        let mut shape = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            if let Some((w, b)) = super::layer::param_shapes(&layer.kind) {
                let ok = layer.weight.as_ref().map(|t| t.shape() == w.as_slice()) == Some(true)
                    && layer.bias.as_ref().map(|t| t.shape() == b.as_slice()) == Some(true);
                if !ok {
                    return Err(Error::config(format!(
                        "layer {i} ({:?}) parameters do not match its kind",
                        layer.kind
                    )));
                }
            }
            shape = layer
                .kind
                .output_shape(&shape)
                .map_err(|e| Error::config(format!("layer {i}: {e}")))?;
        }
        Ok(Network {
            layers,
            input_shape,
            trace: None,
        })
    }

    pub fn layers(&self) -> &[LayerNode] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerNode] {
        &mut self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerNode::param_count).sum()
    }

    /// All parameter values in layer order, weight before bias.
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| {
                l.weight
                    .iter()
                    .chain(l.bias.iter())
                    .flat_map(|t| t.data().iter().copied())
            })
            .collect()
    }

    /// Mutable access to the `index`-th value of [`Self::flat_params`].
    pub fn param_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for layer in &mut self.layers {
            for t in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                if index < t.len() {
                    return Some(&mut t.data_mut()[index]);
                }
                index -= t.len();
            }
        }
        None
    }

    /// Per-sample output shape of layer `id`.
    pub fn layer_output_shape(&self, id: LayerId) -> Result<Vec<usize>> {
        if id >= self.layers.len() {
            return Err(Error::config(format!(
                "layer {id} does not exist ({} layers)",
                self.layers.len()
            )));
        }
        let mut shape = self.input_shape.clone();
        for layer in &self.layers[..=id] {
            shape = layer.kind.output_shape(&shape)?;
        }
        Ok(shape)
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.rank() != self.input_shape.len() + 1 || input.shape()[1..] != self.input_shape[..] {
            return Err(Error::config(format!(
                "network expects batches of {:?}, got {:?}",
                self.input_shape,
                input.shape()
            )));
        }
        Ok(())
    }

    fn run(&self, input: &Tensor, keep: bool) -> Result<(Tensor, Option<Trace>)> {
        self.check_input(input)?;
        let mut values = Vec::with_capacity(if keep { self.layers.len() + 1 } else { 0 });
        let mut argmax = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let next = match layer.kind {
                LayerKind::Conv2d { .. } => layer.conv2d_forward(&x)?,
                LayerKind::Relu => tensor::relu(&x),
                LayerKind::MaxPool2d { kernel, stride } => {
                    let pooled = tensor::maxpool2d(&x, kernel, stride)?;
                    if keep {
                        argmax.push(Some(pooled.argmax));
                    }
                    pooled.output
                }
                LayerKind::AvgPool2d { kernel, stride } => tensor::avgpool2d(&x, kernel, stride)?,
                LayerKind::Flatten => {
                    let n = x.shape()[0];
                    let f = x.len() / n.max(1);
                    x.clone().reshape(&[n, f])?
                }
                LayerKind::Linear { .. } => tensor::linear(
                    &x,
                    layer.weight.as_ref().expect("linear weight"),
                    layer.bias.as_ref().expect("linear bias"),
                )?,
            };
            if keep && !matches!(layer.kind, LayerKind::MaxPool2d { .. }) {
                argmax.push(None);
            }
            if keep {
                values.push(std::mem::replace(&mut x, next));
            } else {
                x = next;
            }
        }
        if !x.is_finite() {
            return Err(Error::State("non-finite network output".into()));
        }
        if keep {
            values.push(x.clone());
            Ok((x, Some(Trace { values, argmax })))
        } else {
            Ok((x, None))
        }
    }

    /// Forward pass without retaining intermediate values.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.run(input, false)?.0)
    }

    /// Forward pass that retains every intermediate value for a subsequent
    /// [`Self::backward`].
    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let (out, trace) = self.run(input, true)?;
        self.trace = trace;
        Ok(out)
    }

    /// Activation pattern of the retained forward pass.
    pub fn activation_pattern(&self) -> Result<ActivationPattern> {
        let trace = self.trace.as_ref().ok_or_else(no_forward)?;
        let mut relu = Vec::new();
        let mut argmax = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer.kind {
                LayerKind::Relu => relu.push(trace.values[i].data().iter().map(|&v| v > 0.0).collect()),
                LayerKind::MaxPool2d { .. } => argmax.push(trace.argmax[i].clone().expect("argmax")),
                _ => {}
            }
        }
        Ok(ActivationPattern { relu, argmax })
    }

    /// Back-propagates `grad_output` (d scalar / d network output) through
    /// the retained forward pass. Returns parameter gradients and, for every
    /// requested layer, its output together with the gradient at it.
    ///
    /// The retained pass is consumed.
    pub fn backward(
        &mut self,
        grad_output: &Tensor,
        captures: &[LayerId],
    ) -> Result<(ParamGrads, Vec<CaptureRecord>)> {
        if let Some(&bad) = captures.iter().find(|&&id| id >= self.layers.len()) {
            return Err(Error::config(format!(
                "capture layer {bad} does not exist ({} layers)",
                self.layers.len()
            )));
        }
        let trace = self.trace.take().ok_or_else(no_forward)?;
        let output_shape = trace.values.last().expect("trace output").shape().to_vec();
        if grad_output.shape() != output_shape.as_slice() {
            self.trace = Some(trace);
            return Err(Error::config(format!(
                "output gradient {:?} does not match output {:?}",
                grad_output.shape(),
                output_shape
            )));
        }

        let mut grads: Vec<Option<LayerGrads>> = vec![None; self.layers.len()];
        let mut records = Vec::with_capacity(captures.len());
        let mut g = grad_output.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if captures.contains(&i) {
                records.push(CaptureRecord::new(i, trace.values[i + 1].clone(), g.clone())?);
            }
            let input = &trace.values[i];
            // The network input never needs a gradient.
            let need_input = i > 0;
            g = match layer.kind {
                LayerKind::Conv2d {
                    stride, padding, ..
                } => {
                    let cg = tensor::conv2d_backward(
                        input,
                        layer.weight.as_ref().expect("conv weight"),
                        &g,
                        stride,
                        padding,
                        need_input,
                    )?;
                    grads[i] = Some(LayerGrads {
                        weight: cg.weight,
                        bias: cg.bias,
                    });
                    match cg.input {
                        Some(t) => t,
                        None => break,
                    }
                }
                LayerKind::Linear { .. } => {
                    let lg = tensor::linear_backward(input, layer.weight.as_ref().expect("linear weight"), &g)?;
                    grads[i] = Some(LayerGrads {
                        weight: lg.weight,
                        bias: lg.bias,
                    });
                    lg.input
                }
                LayerKind::Relu => tensor::relu_backward(input, &g)?,
                LayerKind::MaxPool2d { .. } => tensor::maxpool2d_backward(
                    &g,
                    trace.argmax[i].as_ref().expect("argmax"),
                    input.shape(),
                )?,
                LayerKind::AvgPool2d { kernel, stride } => {
                    tensor::avgpool2d_backward(&g, input.shape(), kernel, stride)?
                }
                LayerKind::Flatten => g.reshape(input.shape())?,
            };
        }
        records.sort_by_key(|r| captures.iter().position(|&c| c == r.layer_id));
        Ok((ParamGrads { layers: grads }, records))
    }
}

fn no_forward() -> Error {
    Error::State("backward requires a retained forward pass".into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(seed: u64) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kinds = [
            LayerKind::Conv2d {
                in_channels: 1,
                out_channels: 2,
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            LayerKind::Relu,
            LayerKind::MaxPool2d { kernel: 2, stride: 2 },
            LayerKind::Flatten,
            LayerKind::Linear {
                in_features: 8,
                out_features: 2,
            },
        ];
        let layers = kinds.into_iter().map(|k| LayerNode::he_init(k, &mut rng)).collect();
        Network::new(layers, vec![1, 4, 4]).unwrap()
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let mut net = tiny(1);
        let g = Tensor::zeros(&[1, 2]);
        assert!(matches!(net.backward(&g, &[]), Err(Error::State(_))));
    }

    #[test]
    fn backward_consumes_trace() {
        let mut net = tiny(2);
        let x = Tensor::full(&[1, 1, 4, 4], 0.5);
        let y = net.forward(&x).unwrap();
        let g = Tensor::full(y.shape(), 1.0);
        net.backward(&g, &[]).unwrap();
        assert!(matches!(net.backward(&g, &[]), Err(Error::State(_))));
    }

    #[test]
    fn unknown_capture_layer_rejected() {
        let mut net = tiny(3);
        let x = Tensor::full(&[1, 1, 4, 4], 0.5);
        let y = net.forward(&x).unwrap();
        let err = net.backward(&Tensor::zeros(y.shape()), &[17]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn gradient_of_sum_of_input_is_one() {
        // A lone flatten: output = input, so d(sum)/d(input) = 1 everywhere.
        let mut net = Network::new(vec![LayerNode::zeroed(LayerKind::Flatten)], vec![1, 3, 3]).unwrap();
        let x = Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64);
        let y = net.forward(&x).unwrap();
        let (_, rec) = net.backward(&Tensor::full(y.shape(), 1.0), &[0]).unwrap();
        assert!(rec[0].gradients.data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn captures_have_matching_shapes() {
        let mut net = tiny(4);
        let x = Tensor::full(&[2, 1, 4, 4], 0.25);
        let y = net.forward(&x).unwrap();
        let (_, rec) = net.backward(&Tensor::full(y.shape(), 1.0), &[1, 0]).unwrap();
        assert_eq!(rec.len(), 2);
        assert_eq!(rec[0].layer_id, 1);
        assert_eq!(rec[0].activations.shape(), [2, 2, 4, 4]);
        assert_eq!(rec[1].layer_id, 0);
    }

    #[test]
    fn forward_is_deterministic() {
        let a = tiny(5);
        let b = tiny(5);
        let x = Tensor::from_fn(&[1, 1, 4, 4], |i| (i as f64).sin());
        assert_eq!(a.predict(&x).unwrap().data(), b.predict(&x).unwrap().data());
    }

    #[test]
    fn rejects_mismatched_chain() {
        let layers = vec![LayerNode::zeroed(LayerKind::Linear {
            in_features: 3,
            out_features: 1,
        })];
        assert!(Network::new(layers, vec![1, 2, 2]).is_err());
    }
}
