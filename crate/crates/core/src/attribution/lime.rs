use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{AttributionMap, MethodId};
use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::numerics::Tensor;
use crate::perturb::{
    apply_mask_in_place, resolve_baseline, segment_slic_like, BaselineSpec, Segmentation, SlicParams,
};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimeConfig {
    pub segments: usize,
    /// Perturbed samples, including the all-ones vector.
    pub samples: usize,
    pub kernel_width: f64,
    pub ridge_lambda: f64,
    pub keep_prob: f64,
    pub compactness: f64,
    pub slic_iterations: usize,
    pub baseline: BaselineSpec,
}

impl Default for LimeConfig {
    fn default() -> Self {
        Self {
            segments: 15,
            samples: 1000,
            kernel_width: 500.0,
            ridge_lambda: 0.01,
            keep_prob: 0.5,
            compactness: 10.0,
            slic_iterations: 10,
            baseline: BaselineSpec::black(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

/// Weighted ridge regression of `y` on binary rows `z` with an unpenalized intercept.
pub fn fit_surrogate(z: &[Vec<bool>], y: &[f64], weights: &[f64], lambda: f64) -> Result<SurrogateFit> {
    let n = z.len();
    if n == 0 || y.len() != n || weights.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} rows, {} targets, {} weights",
            y.len(),
            weights.len()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge lambda must be >= 0, got {lambda}")));
    }
    let m = z[0].len();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::SingularFit);
    }
    let mut z_mean = vec![0.0; m];
    let mut y_mean = 0.0;
    for ((row, &yi), &wi) in z.iter().zip(y).zip(weights) {
        for (acc, &b) in z_mean.iter_mut().zip(row) {
            *acc += wi * f64::from(u8::from(b));
        }
        y_mean += wi * yi;
    }
    z_mean.iter_mut().for_each(|v| *v /= total);
    y_mean /= total;

    let mut gram = DMatrix::<f64>::identity(m, m) * lambda;
    let mut rhs = DVector::<f64>::zeros(m);
    let mut centered = vec![0.0; m];
    for ((row, &yi), &wi) in z.iter().zip(y).zip(weights) {
        for (k, c) in centered.iter_mut().enumerate() {
            *c = f64::from(u8::from(row[k])) - z_mean[k];
        }
        for a in 0..m {
            rhs[a] += wi * centered[a] * (yi - y_mean);
            for b in 0..m {
                gram[(a, b)] += wi * centered[a] * centered[b];
            }
        }
    }
    let beta = gram.cholesky().ok_or(Error::SingularFit)?.solve(&rhs);
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularFit);
    }
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let intercept = y_mean - coefficients.iter().zip(&z_mean).map(|(b, m)| b * m).sum::<f64>();
    Ok(SurrogateFit {
        intercept,
        coefficients,
    })
}

/// Superpixel surrogate explanation with randomly drawn on/off vectors.
pub fn lime(model: &ModelGraph, x: &Tensor, classes: &[usize], cfg: &LimeConfig, seed: u64) -> Result<Vec<AttributionMap>> {
    if cfg.segments < 2 || cfg.samples < 2 {
        return Err(Error::InvalidArgument("LIME needs at least 2 segments and 2 samples".into()));
    }
    let seg = segment_slic_like(
        x,
        &SlicParams {
            segments: cfg.segments,
            compactness: cfg.compactness,
            iterations: cfg.slic_iterations,
        },
    )?;
    let mut rng = seed::derived_rng(seed, "lime-samples", &[]);
    let mut z = Vec::with_capacity(cfg.samples);
    z.push(vec![true; seg.count]);
    while z.len() < cfg.samples {
        z.push((0..seg.count).map(|_| rng.random_bool(cfg.keep_prob)).collect());
    }
    lime_with_samples(model, x, classes, &seg, &z, cfg)
}

/// LIME on a given segmentation and explicit on/off vectors.
pub fn lime_with_samples(
    model: &ModelGraph,
    x: &Tensor,
    classes: &[usize],
    seg: &Segmentation,
    z: &[Vec<bool>],
    cfg: &LimeConfig,
) -> Result<Vec<AttributionMap>> {
    let (c, h, w) = x.dims3()?;
    if seg.height != h || seg.width != w || z.iter().any(|r| r.len() != seg.count) {
        return Err(Error::ShapeMismatch("segmentation does not match the input".into()));
    }
    if !(cfg.kernel_width > 0.0) {
        return Err(Error::InvalidArgument("kernel width must be positive".into()));
    }
    let baseline = resolve_baseline(&cfg.baseline, x)?;
    let plane = h * w;
    // Squared pixel-space distance contributed by removing each segment.
    let mut seg_dist = vec![0.0; seg.count];
    for (p, &id) in seg.ids.iter().enumerate() {
        for ch in 0..c {
            seg_dist[id] += (x.data()[ch * plane + p] - baseline.value(ch, plane, p)).powi(2);
        }
    }
    let mut targets = vec![Vec::with_capacity(z.len()); classes.len()];
    let mut weights = Vec::with_capacity(z.len());
    for row in z {
        let off: Vec<bool> = row.iter().map(|&keep| !keep).collect();
        let mut perturbed = x.clone();
        apply_mask_in_place(&mut perturbed, &seg.mask_of(&off), &baseline)?;
        let probs = model.probabilities(&perturbed)?;
        for (t, &cl) in targets.iter_mut().zip(classes) {
            t.push(probs[cl]);
        }
        let d2: f64 = off.iter().zip(&seg_dist).filter(|(o, _)| **o).map(|(_, d)| d).sum();
        weights.push((-d2 / cfg.kernel_width.powi(2)).exp());
    }
    classes
        .iter()
        .zip(targets)
        .map(|(&cl, y)| {
            let fit = fit_surrogate(z, &y, &weights, cfg.ridge_lambda)?;
            let values = seg.ids.iter().map(|&id| fit.coefficients[id]).collect();
            Ok(AttributionMap::new(Tensor::new(vec![h, w], values)?, cl, MethodId::Lime.as_str()))
        })
        .collect()
}
