use rand::seq::index;

use super::{FeConfig, IrofConfig};
use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::numerics::{pearson_corr, Tensor};
use crate::perturb::{
    apply_mask, apply_mask_in_place, resolve_baseline, segment_slic_like, Segmentation, SlicParams, Strategy,
};
use crate::seed;

/// Pearson correlation between the attribution mass of random pixel subsets
/// and the output drop when those pixels are replaced by the baseline.
pub fn faithfulness_estimate(
    model: &ModelGraph,
    x: &Tensor,
    class: usize,
    attr: &Tensor,
    cfg: &FeConfig,
    seed: u64,
) -> Result<f64> {
    model.check_class(class)?;
    let (_, h, w) = x.dims3()?;
    if attr.shape() != [h, w] {
        return Err(Error::ShapeMismatch(format!("attribution {:?} for a {h}x{w} input", attr.shape())));
    }
    let d = h * w;
    let k = ((cfg.subset_fraction * d as f64).round() as usize).clamp(1, d);
    if cfg.subsets < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 subsets, got {}", cfg.subsets)));
    }
    let baseline = resolve_baseline(&cfg.baseline, x)?;
    let output = |x: &Tensor| -> Result<f64> {
        Ok(if cfg.use_logit { model.logits(x)?[class] } else { model.probabilities(x)?[class] })
    };
    let f = output(x)?;
    let mut rng = seed::derived_rng(seed, "fe-subsets", &[]);
    let mut sums = Vec::with_capacity(cfg.subsets);
    let mut drops = Vec::with_capacity(cfg.subsets);
    let mut mask = vec![false; d];
    for _ in 0..cfg.subsets {
        mask.fill(false);
        let subset = index::sample(&mut rng, d, k);
        let mut total = 0.0;
        for p in subset.iter() {
            mask[p] = true;
            total += attr.data()[p];
        }
        sums.push(total);
        drops.push(f - output(&apply_mask(x, &mask, &baseline)?)?);
    }
    pearson_corr(&sums, &drops)
}

pub fn irof_segmentation(x: &Tensor, cfg: &IrofConfig) -> Result<Segmentation> {
    segment_slic_like(
        x,
        &SlicParams {
            segments: cfg.segments,
            compactness: cfg.compactness,
            iterations: cfg.slic_iterations,
        },
    )
}

/// Mean over `κ = 0..=K` of `f(x with the first κ segments removed) / f(x)`,
/// segments ordered by mean attribution.
pub fn irof(model: &ModelGraph, x: &Tensor, class: usize, attr: &Tensor, seg: &Segmentation, cfg: &IrofConfig) -> Result<f64> {
    model.check_class(class)?;
    let (_, h, w) = x.dims3()?;
    if attr.shape() != [h, w] || seg.height != h || seg.width != w {
        return Err(Error::ShapeMismatch("attribution, segmentation and input disagree".into()));
    }
    let f = model.probabilities(x)?[class];
    if f < 1e-6 {
        return Err(Error::ZeroPrediction(f));
    }
    let mut mean = vec![0.0; seg.count];
    let mut size = vec![0usize; seg.count];
    for (&id, &a) in seg.ids.iter().zip(attr.data()) {
        mean[id] += a;
        size[id] += 1;
    }
    for (m, &n) in mean.iter_mut().zip(&size) {
        *m /= n.max(1) as f64;
    }
    let mut order: Vec<usize> = (0..seg.count).collect();
    match cfg.strategy {
        Strategy::Morf => order.sort_by(|&a, &b| mean[b].total_cmp(&mean[a])),
        Strategy::Lerf => order.sort_by(|&a, &b| mean[a].total_cmp(&mean[b])),
    }
    let steps = cfg.steps.unwrap_or(seg.count).min(seg.count);
    let baseline = resolve_baseline(&cfg.baseline, x)?;
    let mut perturbed = x.clone();
    let mut total = 1.0;
    for &s in &order[..steps] {
        let mut only = vec![false; seg.count];
        only[s] = true;
        apply_mask_in_place(&mut perturbed, &seg.mask_of(&only), &baseline)?;
        total += model.probabilities(&perturbed)?[class] / f;
    }
    Ok(total / (steps + 1) as f64)
}
