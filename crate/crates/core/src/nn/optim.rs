use super::network::{Network, ParamGrads};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v ← μ·v + (g + λ·p)`, `p ← p − lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<(Tensor, Tensor)>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, network: &mut Network, grads: &ParamGrads) -> Result<()> {
        if grads.layers.len() != network.layers().len() {
            return Err(Error::config("gradient list does not match network"));
        }
        if self.velocity.is_empty() {
            self.velocity = network
                .layers()
                .iter()
                .map(|l| match (&l.weight, &l.bias) {
                    (Some(w), Some(b)) => Some((Tensor::zeros(w.shape()), Tensor::zeros(b.shape()))),
                    _ => None,
                })
                .collect();
        }
        for ((layer, grad), vel) in network
            .layers_mut()
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.velocity)
        {
            let (Some(grad), Some((vw, vb))) = (grad, vel) else {
                continue;
            };
            for (param, g, v) in [
                (layer.weight.as_mut().expect("weight"), &grad.weight, vw),
                (layer.bias.as_mut().expect("bias"), &grad.bias, vb),
            ] {
                for ((p, &g), v) in param.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                    *v = self.momentum * *v + g + self.weight_decay * *p;
                    *p -= self.lr * *v;
                }
            }
        }
        Ok(())
    }
}
