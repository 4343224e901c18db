use rand::Rng as _;
use rand_distr::{Normal, Uniform};

use super::{NoiseKind, RobustnessConfig};
use crate::attribution::{ExplainContext, Explainer};
use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::numerics::Tensor;
use crate::seed;

/// Perturbed copies of `x` within the ε-neighborhood, clamped to `[0,1]`.
pub fn neighborhood(x: &Tensor, cfg: &RobustnessConfig, seed: u64) -> Result<Vec<Tensor>> {
    if !(cfg.epsilon > 0.0 && cfg.epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {}", cfg.epsilon)));
    }
    if cfg.samples == 0 {
        return Err(Error::InvalidArgument("need at least one neighborhood sample".into()));
    }
    let mut rng = seed::derived_rng(seed, "neighborhood", &[]);
    let data = x.data();
    let uniform = Uniform::new_inclusive(-cfg.epsilon, cfg.epsilon).expect("valid range");
    let normal = Normal::new(0.0, cfg.epsilon).expect("valid std");
    Ok((0..cfg.samples)
        .map(|_| {
            Tensor::from_fn(x.shape(), |i| {
                let d = match cfg.noise {
                    NoiseKind::Uniform => rng.sample(uniform),
                    NoiseKind::Gaussian => rng.sample(normal),
                };
                (data[i] + d).clamp(0.0, 1.0)
            })
        })
        .collect())
}

fn diff_norm(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Mean of `‖Φ(x) − Φ(x+δ)‖ / ‖x‖` over the neighborhood.
#[allow(clippy::too_many_arguments)]
pub fn avg_sensitivity(
    model: &ModelGraph,
    x: &Tensor,
    class: usize,
    attr: &Tensor,
    explainer: &dyn Explainer,
    ctx: &ExplainContext,
    cfg: &RobustnessConfig,
    seed: u64,
) -> Result<f64> {
    let norm = x.norm_l2();
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let mut total = 0.0;
    let samples = neighborhood(x, cfg, seed)?;
    for xp in &samples {
        let other = explainer.explain(model, xp, class, ctx)?;
        total += diff_norm(attr, &other.values) / norm;
    }
    Ok(total / samples.len() as f64)
}

/// Max of `‖Φ(x) − Φ(x+δ)‖ / ‖δ‖` over the neighborhood; `δ = 0` draws are skipped.
#[allow(clippy::too_many_arguments)]
pub fn local_lipschitz_estimate(
    model: &ModelGraph,
    x: &Tensor,
    class: usize,
    attr: &Tensor,
    explainer: &dyn Explainer,
    ctx: &ExplainContext,
    cfg: &RobustnessConfig,
    seed: u64,
) -> Result<f64> {
    let mut best: Option<f64> = None;
    for xp in &neighborhood(x, cfg, seed)? {
        let dx = diff_norm(x, xp);
        if dx == 0.0 {
            continue;
        }
        let other = explainer.explain(model, xp, class, ctx)?;
        let ratio = diff_norm(attr, &other.values) / dx;
        best = Some(best.map_or(ratio, |b: f64| b.max(ratio)));
    }
    best.ok_or(Error::DegenerateNeighborhood)
}
