use serde::{Deserialize, Serialize};

use super::{AttributionMap, MethodId};
use crate::error::Result;
use crate::model::{ActivationTrace, Layer, ModelGraph};
use crate::numerics::Tensor;
use crate::perturb::{apply_mask, resolve_baseline, BaselineSpec};

/// Below this input difference a unit falls back to its gradient.
const RESCALE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeepLiftConfig {
    pub baseline: BaselineSpec,
}

impl Default for DeepLiftConfig {
    fn default() -> Self {
        Self {
            baseline: BaselineSpec::black(),
        }
    }
}

/// Reference image for `x` under the configured baseline.
pub fn deeplift_reference(x: &Tensor, cfg: &DeepLiftConfig) -> Result<Tensor> {
    let (_, h, w) = x.dims3()?;
    apply_mask(x, &vec![true; h * w], &resolve_baseline(&cfg.baseline, x)?)
}

/// Per-input contributions `m ⊙ (x − x̃)` with shape `[C,H,W]`. They sum to the
/// change of the class logit between reference and input.
pub fn deeplift_contributions(model: &ModelGraph, x: &Tensor, class: usize, cfg: &DeepLiftConfig) -> Result<Tensor> {
    model.check_class(class)?;
    let reference = deeplift_reference(x, cfg)?;
    let t = model.trace(x)?;
    let r = model.trace(&reference)?;
    let mut m = vec![0.0; model.num_classes()];
    m[class] = 1.0;
    for i in (0..model.layers().len()).rev() {
        m = multipliers(model, &t, &r, i, &m);
    }
    let values = m
        .iter()
        .zip(x.data().iter().zip(reference.data()))
        .map(|(m, (a, b))| m * (a - b))
        .collect();
    Tensor::new(x.shape().to_vec(), values)
}

pub fn deeplift(model: &ModelGraph, x: &Tensor, class: usize, cfg: &DeepLiftConfig) -> Result<AttributionMap> {
    let contributions = deeplift_contributions(model, x, class, cfg)?;
    Ok(AttributionMap::new(contributions.sum_channels()?, class, MethodId::Deeplift.as_str()))
}

fn multipliers(model: &ModelGraph, t: &ActivationTrace, r: &ActivationTrace, i: usize, m_out: &[f64]) -> Vec<f64> {
    let layer = &model.layers()[i];
    let (a, b) = (t.layer_input(i).data(), r.layer_input(i).data());
    match layer {
        Layer::Relu => {
            let (ya, yb) = (t.layer_output(i).data(), r.layer_output(i).data());
            (0..a.len())
                .map(|j| {
                    let dx = a[j] - b[j];
                    if dx.abs() < RESCALE_EPS {
                        if a[j] > 0.0 { m_out[j] } else { 0.0 }
                    } else {
                        m_out[j] * (ya[j] - yb[j]) / dx
                    }
                })
                .collect()
        }
        Layer::MaxPool { .. } => {
            let (ka, kb) = (t.argmax(i).expect("max pool trace"), r.argmax(i).expect("max pool trace"));
            let (ya, yb) = (t.layer_output(i).data(), r.layer_output(i).data());
            let mut m = vec![0.0; a.len()];
            for o in 0..m_out.len() {
                let dy = ya[o] - yb[o];
                let (p, q) = (ka[o], kb[o]);
                let (dp, dq) = (a[p] - b[p], a[q] - b[q]);
                let p_ok = dp.abs() >= RESCALE_EPS;
                let q_ok = dq.abs() >= RESCALE_EPS;
                if p == q || !q_ok {
                    if p_ok {
                        m[p] += m_out[o] * dy / dp;
                    } else if q_ok {
                        m[q] += m_out[o] * dy / dq;
                    } else {
                        m[p] += m_out[o];
                    }
                } else if !p_ok {
                    m[q] += m_out[o] * dy / dq;
                } else {
                    // Split the output difference between both winners.
                    m[p] += 0.5 * m_out[o] * dy / dp;
                    m[q] += 0.5 * m_out[o] * dy / dq;
                }
            }
            m
        }
        // Affine layers: multipliers are the transposed weights.
        _ => layer.backward_input(t.layer_input(i), None, model.layer_output_shape(i), m_out),
    }
}
