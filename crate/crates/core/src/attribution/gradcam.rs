use serde::{Deserialize, Serialize};

use super::{AttributionMap, MethodId};
use crate::error::{Error, Result};
use crate::model::{Layer, ModelGraph};
use crate::numerics::{bilinear_resize, Tensor};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCamConfig {
    /// Index of the convolution whose output is analysed; `None` picks the last one.
    pub layer: Option<usize>,
}

pub fn gradcam(model: &ModelGraph, x: &Tensor, class: usize, cfg: &GradCamConfig) -> Result<AttributionMap> {
    let layer = match cfg.layer {
        Some(l) => l,
        None => model.last_conv_index().ok_or(Error::LayerNotConv(model.layers().len()))?,
    };
    if !matches!(model.layers().get(layer), Some(Layer::Conv(_))) {
        return Err(Error::LayerNotConv(layer));
    }
    let (_, h, w) = x.dims3()?;
    let trace = model.trace(x)?;
    let grads = model.backward(&trace, class)?;
    let values = gradcam_from_parts(trace.layer_output(layer), &grads.layer_outputs[layer], h, w)?;
    Ok(AttributionMap::new(values, class, MethodId::Gradcam.as_str()))
}

/// `ReLU(Σ_p ω_p A^p)` with `ω_p` the spatial mean of `∂Y/∂A^p`, resized to `h×w`.
pub fn gradcam_from_parts(activations: &Tensor, gradients: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    activations.expect_same_shape(gradients)?;
    let (maps, ah, aw) = activations.dims3()?;
    let plane = ah * aw;
    let mut cam = vec![0.0; plane];
    for p in 0..maps {
        let g = &gradients.data()[p * plane..(p + 1) * plane];
        let weight = g.iter().sum::<f64>() / plane as f64;
        for (c, a) in cam.iter_mut().zip(&activations.data()[p * plane..(p + 1) * plane]) {
            *c += weight * a;
        }
    }
    let cam = Tensor::new(vec![ah, aw], cam.into_iter().map(|v| v.max(0.0)).collect())?;
    let resized = bilinear_resize(&cam, h, w)?;
    // Interpolating non-negative values stays non-negative; clamp away rounding.
    Ok(resized.map(|v| v.max(0.0)))
}
