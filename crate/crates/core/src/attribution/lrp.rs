use serde::{Deserialize, Serialize};

use super::{AttributionMap, MethodId};
use crate::error::Result;
use crate::model::{ActivationTrace, Layer, ModelGraph};
use crate::numerics::{dense_raw, dense_transpose, ConvGeometry, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrpRule {
    Zero,
    Epsilon,
    Gamma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrpConfig {
    pub gamma: f64,
    /// ε as a multiple of the standard deviation of the layer's pre-activations.
    pub epsilon_scale: f64,
    /// One rule everywhere instead of the γ / ε / 0 thirds.
    pub uniform_rule: Option<LrpRule>,
    /// Keep biases in the denominators, letting them absorb relevance.
    pub include_bias: bool,
}

impl Default for LrpConfig {
    fn default() -> Self {
        Self {
            gamma: 0.25,
            epsilon_scale: 0.25,
            uniform_rule: None,
            include_bias: false,
        }
    }
}

/// Rule per layer (`None` for parameter-free layers). Parameterized layers
/// are split into thirds, γ then ε then 0, remainders going to earlier thirds.
pub fn layer_rules(model: &ModelGraph, cfg: &LrpConfig) -> Vec<Option<LrpRule>> {
    let n = model.layers().iter().filter(|l| l.has_params()).count();
    let first = n / 3 + usize::from(n % 3 > 0);
    let second = n / 3 + usize::from(n % 3 > 1);
    let mut k = 0;
    model
        .layers()
        .iter()
        .map(|l| {
            if !l.has_params() {
                return None;
            }
            let rule = cfg.uniform_rule.unwrap_or(if k < first {
                LrpRule::Gamma
            } else if k < first + second {
                LrpRule::Epsilon
            } else {
                LrpRule::Zero
            });
            k += 1;
            Some(rule)
        })
        .collect()
}

/// Relevance at the input of every layer; entry `n` is the initial output relevance.
pub fn lrp_relevances(model: &ModelGraph, x: &Tensor, class: usize, cfg: &LrpConfig) -> Result<Vec<Tensor>> {
    model.check_class(class)?;
    let trace = model.trace(x)?;
    let rules = layer_rules(model, cfg);
    let n = model.layers().len();
    let mut out = vec![Tensor::zeros(&[1]); n + 1];
    let mut r = vec![0.0; model.num_classes()];
    r[class] = trace.logits()[class];
    out[n] = Tensor::new(vec![r.len()], r.clone())?;
    for i in (0..n).rev() {
        r = propagate(model, &trace, i, rules[i], &r, cfg);
        out[i] = Tensor::new(model.layer_input_shape(i).to_vec(), r.clone())?;
    }
    Ok(out)
}

pub fn lrp(model: &ModelGraph, x: &Tensor, class: usize, cfg: &LrpConfig) -> Result<AttributionMap> {
    let rel = lrp_relevances(model, x, class, cfg)?.swap_remove(0);
    Ok(AttributionMap::new(rel.sum_channels()?, class, MethodId::Lrp.as_str()))
}

fn propagate(
    model: &ModelGraph,
    trace: &ActivationTrace,
    i: usize,
    rule: Option<LrpRule>,
    r_out: &[f64],
    cfg: &LrpConfig,
) -> Vec<f64> {
    let a = trace.layer_input(i);
    let layer = &model.layers()[i];
    match layer {
        Layer::Relu | Layer::Flatten => r_out.to_vec(),
        Layer::MaxPool { .. } => {
            let mut r = vec![0.0; a.len()];
            for (&idx, &v) in trace.argmax(i).expect("max pool trace").iter().zip(r_out) {
                r[idx] += v;
            }
            r
        }
        Layer::AvgPool { .. } | Layer::GlobalAvgPool => {
            // Pooling is linear with non-negative weights: LRP-0 through its adjoint.
            let z = trace.layer_output(i).data();
            let s: Vec<f64> = r_out.iter().zip(z).map(|(&r, &z)| safe_div(r, z)).collect();
            let c = layer.backward_input(a, None, model.layer_output_shape(i), &s);
            a.data().iter().zip(&c).map(|(a, c)| a * c).collect()
        }
        Layer::Conv(conv) => {
            let rule = rule.expect("parameterized layer has a rule");
            let (kernel, bias) = modified(conv.weights.data(), conv.bias.data(), rule, cfg);
            let geo = ConvGeometry::new(a.shape(), conv.weights.shape(), conv.stride, conv.pad)
                .expect("validated model");
            let z = geo.forward(a.data(), &kernel, &bias);
            let s = scaled(&z, r_out, rule, cfg.epsilon_scale);
            let c = geo.backward_input(&s, &kernel);
            a.data().iter().zip(&c).map(|(a, c)| a * c).collect()
        }
        Layer::Dense(d) => {
            let rule = rule.expect("parameterized layer has a rule");
            let (weights, bias) = modified(d.weights.data(), d.bias.data(), rule, cfg);
            let z = dense_raw(a.data(), &weights, &bias);
            let s = scaled(&z, r_out, rule, cfg.epsilon_scale);
            let c = dense_transpose(&s, &weights, a.len());
            a.data().iter().zip(&c).map(|(a, c)| a * c).collect()
        }
    }
}

fn modified(w: &[f64], b: &[f64], rule: LrpRule, cfg: &LrpConfig) -> (Vec<f64>, Vec<f64>) {
    let lift = |v: f64| match rule {
        LrpRule::Gamma => v + cfg.gamma * v.max(0.0),
        LrpRule::Zero | LrpRule::Epsilon => v,
    };
    let bias = if cfg.include_bias { b.iter().map(|&v| lift(v)).collect() } else { vec![0.0; b.len()] };
    (w.iter().map(|&v| lift(v)).collect(), bias)
}

/// `R_t / denominator_t`, with ε-stabilized denominators for the ε rule.
fn scaled(z: &[f64], r: &[f64], rule: LrpRule, epsilon_scale: f64) -> Vec<f64> {
    match rule {
        LrpRule::Epsilon => {
            let n = z.len() as f64;
            let mean = z.iter().sum::<f64>() / n;
            let std = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            let eps = epsilon_scale * std;
            z.iter()
                .zip(r)
                .map(|(&z, &r)| safe_div(r, z + if z >= 0.0 { eps } else { -eps }))
                .collect()
        }
        LrpRule::Zero | LrpRule::Gamma => z.iter().zip(r).map(|(&z, &r)| safe_div(r, z)).collect(),
    }
}

fn safe_div(r: f64, z: f64) -> f64 {
    if z == 0.0 {
        0.0
    } else {
        r / z
    }
}
