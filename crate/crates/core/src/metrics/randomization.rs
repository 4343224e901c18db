use rand::Rng as _;

use crate::attribution::{normalize_map, AttributionMap, ExplainContext, Explainer};
use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::numerics::{histogram_entropy, ssim, Tensor};
use crate::seed;

/// Relative rise of the histogram entropy when the explanation is computed on
/// the randomized model instead.
#[allow(clippy::too_many_arguments)]
pub fn model_parameter_randomization(
    randomized: &ModelGraph,
    x: &Tensor,
    class: usize,
    attr: &Tensor,
    explainer: &dyn Explainer,
    ctx: &ExplainContext,
    bins: usize,
) -> Result<f64> {
    let base = histogram_entropy(attr.data(), bins)?;
    if base < 1e-9 {
        return Err(Error::ZeroComplexity(base));
    }
    let other = explainer.explain(randomized, x, class, ctx)?;
    Ok((histogram_entropy(other.data(), bins)? - base) / base)
}

/// Seeded uniform pick among the classes predicted absent, falling back to
/// any other class, and to `class` itself for a single-class model.
pub fn non_target_class(model: &ModelGraph, x: &Tensor, class: usize, seed: u64) -> Result<usize> {
    let labels = model.predict_multilabel(x)?.labels;
    let mut pool: Vec<usize> = (0..labels.len()).filter(|&k| k != class && !labels[k]).collect();
    if pool.is_empty() {
        pool = (0..labels.len()).filter(|&k| k != class).collect();
    }
    if pool.is_empty() {
        return Ok(class);
    }
    let mut rng = seed::derived_rng(seed, "non-target", &[]);
    Ok(pool[rng.random_range(0..pool.len())])
}

/// SSIM between the normalized maps of the target and a non-target class.
pub fn random_logit(
    model: &ModelGraph,
    x: &Tensor,
    class: usize,
    attr: &AttributionMap,
    explainer: &dyn Explainer,
    ctx: &ExplainContext,
    seed: u64,
) -> Result<f64> {
    let other_class = non_target_class(model, x, class, seed)?;
    let other = explainer.explain(model, x, other_class, ctx)?;
    ssim(&normalize_map(attr).values, &normalize_map(&other).values, 1.0)
}
