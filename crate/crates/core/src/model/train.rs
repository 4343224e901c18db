use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::graph::{quantize, ModelGraph};
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Tensor};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            lr: 0.1,
            momentum: 0.9,
            batch: 16,
            seed: 0,
        }
    }
}

/// Mean per-class binary cross-entropy of logits against 0/1 targets.
pub fn bce_with_logits(logits: &[f64], targets: &[bool]) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(targets)
        .map(|(&z, &y)| {
            let y = if y { 1.0 } else { 0.0 };
            z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
        })
        .sum();
    total / logits.len() as f64
}

/// Mini-batch SGD with momentum on the mean per-class BCE. Returns the trained
/// copy and the mean training loss of every epoch.
pub fn train(
    model: &ModelGraph,
    images: &[Tensor],
    labels: &[Vec<bool>],
    cfg: &TrainConfig,
) -> Result<(ModelGraph, Vec<f64>)> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if images.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} images with {} label vectors",
            images.len(),
            labels.len()
        )));
    }
    if cfg.batch == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    if let Some(bad) = labels.iter().find(|l| l.len() != model.num_classes()) {
        return Err(Error::ShapeMismatch(format!(
            "label vector of length {} for {} classes",
            bad.len(),
            model.num_classes()
        )));
    }

    let mut layers = model.layers().to_vec();
    let mut velocity: Vec<Vec<Vec<f64>>> = layers
        .iter()
        .map(|l| l.params().iter().map(|t| vec![0.0; t.len()]).collect())
        .collect();
    let mut current = model.clone();
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let classes = model.num_classes() as f64;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut seed::derived_rng(cfg.seed, "train-shuffle", &[epoch as u64]));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch) {
            let mut acc: Vec<Vec<Vec<f64>>> = velocity
                .iter()
                .map(|l| l.iter().map(|p| vec![0.0; p.len()]).collect())
                .collect();
            let scale = 1.0 / (batch.len() as f64 * classes);
            for &idx in batch {
                let trace = current.trace(&images[idx])?;
                let logits = trace.logits();
                epoch_loss += bce_with_logits(logits, &labels[idx]);
                let upstream: Vec<f64> = logits
                    .iter()
                    .zip(&labels[idx])
                    .map(|(&z, &y)| (sigmoid(z) - if y { 1.0 } else { 0.0 }) * scale)
                    .collect();
                for (a, g) in acc.iter_mut().zip(current.param_gradients(&trace, &upstream)) {
                    if let Some((dw, db)) = g {
                        add_into(&mut a[0], &dw);
                        add_into(&mut a[1], &db);
                    }
                }
            }
            if !epoch_loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            for ((layer, vel), grad) in layers.iter_mut().zip(&mut velocity).zip(&acc) {
                for ((t, v), g) in layer.params_mut().into_iter().zip(vel).zip(grad) {
                    for ((p, v), g) in t.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                        *v = cfg.momentum * *v - cfg.lr * g;
                        *p = quantize(*p + *v);
                    }
                }
            }
            if layers.iter().flat_map(|l| l.params()).any(|t| !t.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            current.replace_layers(layers.clone());
        }
        let mean = epoch_loss / images.len() as f64;
        log::debug!("epoch {epoch}: loss {mean:.5}");
        history.push(mean);
    }
    Ok((current, history))
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

/// Mean over classes of the per-class F1 score. A class that is never
/// present nor predicted scores 1.
pub fn macro_f1(predicted: &[Vec<bool>], truth: &[Vec<bool>]) -> f64 {
    let classes = truth.first().map_or(0, Vec::len);
    if classes == 0 {
        return 0.0;
    }
    let total: f64 = (0..classes)
        .map(|c| {
            let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
            for (p, t) in predicted.iter().zip(truth) {
                match (p[c], t[c]) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    _ => {}
                }
            }
            if tp + fp + fneg == 0 {
                1.0
            } else {
                2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
            }
        })
        .sum();
    total / classes as f64
}
