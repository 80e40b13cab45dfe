//! Class activation maps from captured activations and gradients.
//!
//! All three methods form `ReLU(Σ_k w^k ⊙ A^k)` and differ only in the
//! weights: one spatial-mean gradient per channel (Grad-CAM), the rectified
//! per-pixel gradient (LayerCAM), or the per-pixel gradient averaged over
//! each pooling window and spread back over it (continuous-gradient CAM).
//! The last one repairs the sparsity max-pool backward leaves behind: only
//! one position per window ever receives gradient.

use serde::{Deserialize, Serialize};

use crate::classifier::Class;
use crate::error::{Error, Result};
use crate::grid::Plane;
use crate::nn::{CaptureRecord, LayerId};
use crate::tensor::{avgpool2d, upsample_nearest, Tensor};

/// A non-negative single-channel map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub values: Plane,
    pub source_layer: Option<LayerId>,
    pub class: Option<Class>,
}

impl Heatmap {
    pub fn new(values: Plane) -> Self {
        Heatmap {
            values,
            source_layer: None,
            class: None,
        }
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.values.height(), self.values.width())
    }
}

/// `(channels, height, width)` of a single-image record.
fn record_dims(record: &CaptureRecord) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = record.activations.dims4()?;
    if n != 1 {
        return Err(Error::config(format!("CAMs need a single-image record, got batch {n}")));
    }
    if record.gradients.shape() != record.activations.shape() {
        return Err(Error::config("record activations and gradients differ in shape"));
    }
    Ok((c, h, w))
}

/// `ReLU(Σ_k weight^k ⊙ A^k)` for per-pixel weights shaped like the
/// activations.
fn weighted_sum(record: &CaptureRecord, weights: &[f64], (c, h, w): (usize, usize, usize)) -> Heatmap {
    let a = record.activations.data();
    let mut acc = vec![0.0; h * w];
    for k in 0..c {
        let plane = k * h * w..(k + 1) * h * w;
        for ((m, &wt), &act) in acc.iter_mut().zip(&weights[plane.clone()]).zip(&a[plane]) {
            *m += wt * act;
        }
    }
    for v in &mut acc {
        *v = v.max(0.0);
    }
    Heatmap {
        values: Plane::from_vec(w, h, acc).expect("record dims"),
        source_layer: Some(record.layer_id),
        class: None,
    }
}

/// Grad-CAM: each channel weighted by its spatially averaged gradient.
pub fn grad_cam(record: &CaptureRecord) -> Result<Heatmap> {
    let dims @ (c, h, w) = record_dims(record)?;
    let g = record.gradients.data();
    let mut weights = vec![0.0; c * h * w];
    for k in 0..c {
        let plane = k * h * w..(k + 1) * h * w;
        let mean = g[plane.clone()].iter().sum::<f64>() / (h * w) as f64;
        weights[plane].fill(mean);
    }
    Ok(weighted_sum(record, &weights, dims))
}

/// LayerCAM: each position weighted by its own rectified gradient.
pub fn layer_cam(record: &CaptureRecord) -> Result<Heatmap> {
    let dims = record_dims(record)?;
    let weights: Vec<f64> = record.gradients.data().iter().map(|g| g.max(0.0)).collect();
    Ok(weighted_sum(record, &weights, dims))
}

/// Continuous-gradient weights: the gradient averaged over each
/// `pool_kernel × pool_kernel` window and replicated back over it.
pub fn cg_cam_weights(record: &CaptureRecord, pool_kernel: usize) -> Result<Tensor> {
    let (_, h, w) = record_dims(record)?;
    if pool_kernel == 0 || h % pool_kernel != 0 || w % pool_kernel != 0 {
        return Err(Error::config(format!(
            "{h}×{w} feature map is not divisible by pool kernel {pool_kernel}"
        )));
    }
    let pooled = avgpool2d(&record.gradients, pool_kernel, pool_kernel)?;
    upsample_nearest(&pooled, pool_kernel)
}

/// Continuous-gradient CAM of one stage's last conv layer.
pub fn cg_cam_stage(record: &CaptureRecord, pool_kernel: usize) -> Result<Heatmap> {
    let dims = record_dims(record)?;
    let weights = cg_cam_weights(record, pool_kernel)?;
    Ok(weighted_sum(record, weights.data(), dims))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(a: Vec<f64>, g: Vec<f64>, c: usize, h: usize, w: usize) -> CaptureRecord {
        CaptureRecord::new(
            3,
            Tensor::new(vec![1, c, h, w], a).unwrap(),
            Tensor::new(vec![1, c, h, w], g).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn grad_cam_zero_gradients() {
        let r = record(vec![1.0; 8], vec![0.0; 8], 2, 2, 2);
        assert!(grad_cam(&r).unwrap().values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grad_cam_constant_gradient() {
        let a = vec![1.0, -2.0, 3.0, 0.5];
        let r = record(a.clone(), vec![2.0; 4], 1, 2, 2);
        let expected: Vec<f64> = a.iter().map(|v| (2.0 * v).max(0.0)).collect();
        assert_eq!(grad_cam(&r).unwrap().values.data(), expected.as_slice());
    }

    #[test]
    fn layer_cam_examples() {
        let r = record(vec![3.0, 5.0, 7.0, 1.0], vec![1.0, -1.0, 0.0, 2.0], 1, 2, 2);
        assert_eq!(layer_cam(&r).unwrap().values.data(), [3.0, 0.0, 0.0, 2.0]);
        let r = record(vec![1.0; 8], vec![-0.5; 8], 2, 2, 2);
        assert!(layer_cam(&r).unwrap().values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cg_cam_spreads_window_mean() {
        let r = record(vec![1.0; 4], vec![4.0, 0.0, 0.0, 0.0], 1, 2, 2);
        assert_eq!(cg_cam_weights(&r, 2).unwrap().data(), [1.0; 4]);
        let m = cg_cam_stage(&r, 2).unwrap();
        assert_eq!(m.values.data(), [1.0; 4]);
        assert_eq!(m.source_layer, Some(3));
    }

    #[test]
    fn cg_cam_constant_gradient_is_identity() {
        let r = record((0..32).map(|i| i as f64).collect(), vec![0.75; 32], 2, 4, 4);
        assert!(cg_cam_weights(&r, 2).unwrap().data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn cg_cam_rejects_indivisible_extent() {
        let r = record(vec![0.0; 6], vec![0.0; 6], 1, 2, 3);
        assert!(matches!(cg_cam_stage(&r, 2), Err(Error::Config(_))));
    }

    #[test]
    fn batched_record_rejected() {
        let t = Tensor::zeros(&[2, 1, 2, 2]);
        let r = CaptureRecord::new(0, t.clone(), t).unwrap();
        assert!(grad_cam(&r).is_err());
    }
}
