use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{
    avg_sensitivity, complexity, faithfulness_estimate, irof, irof_segmentation, local_lipschitz_estimate,
    model_parameter_randomization, orient, random_logit, relevance_rank_accuracy, sparseness, top_k_intersection,
    MetricConfig, MetricId, MetricRecord, Score,
};
use crate::attribution::{AttributionArchive, AttributionMap, ExplainContext, Explainer};
use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::numerics::Tensor;
use crate::scene::Scene;
use crate::seed;

/// An input with optional per-class ground-truth masks.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSample {
    pub id: u64,
    pub image: Tensor,
    pub masks: Option<Vec<Vec<bool>>>,
}

impl From<&Scene> for EvalSample {
    fn from(s: &Scene) -> Self {
        let masks = (0..s.num_classes())
            .map(|c| s.class_map.iter().map(|&k| usize::from(k) == c).collect())
            .collect();
        Self {
            id: s.id,
            image: s.image.clone(),
            masks: Some(masks),
        }
    }
}

/// A metric under a name; several variants of one metric may coexist
/// (e.g. IROF with different baselines).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSpec {
    pub id: String,
    pub kind: MetricId,
    pub config: MetricConfig,
}

impl MetricSpec {
    pub fn new(kind: MetricId, config: &MetricConfig) -> Self {
        Self::named(kind.as_str(), kind, config)
    }

    pub fn named(id: impl Into<String>, kind: MetricId, config: &MetricConfig) -> Self {
        Self {
            id: id.into(),
            kind,
            config: config.clone(),
        }
    }
}

/// Everything a single metric evaluation may read.
pub struct ScoreInputs<'a> {
    pub model: &'a ModelGraph,
    /// Fully re-initialized reference model for MPRT.
    pub randomized: &'a ModelGraph,
    pub x: &'a Tensor,
    pub masks: Option<&'a [Vec<bool>]>,
    pub class: usize,
    pub explainer: &'a dyn Explainer,
    pub attr: &'a AttributionMap,
    pub ctx: ExplainContext,
}

pub fn randomized_reference(model: &ModelGraph, seed: u64) -> ModelGraph {
    model.randomize_parameters(seed::derive(seed, "mprt-randomized", &[]))
}

/// Predicted-positive classes, or the top class when none is predicted.
pub fn evaluation_classes(model: &ModelGraph, x: &Tensor) -> Result<Vec<usize>> {
    let p = model.predict_multilabel(x)?;
    let pos = p.positive_classes();
    Ok(if pos.is_empty() { vec![p.top_class()] } else { pos })
}

pub fn evaluate_one(spec: &MetricSpec, inp: &ScoreInputs) -> Result<Score> {
    let cfg = &spec.config;
    let attr = &inp.attr.values;
    let seed = seed::derive(
        cfg.seed,
        spec.kind.as_str(),
        &[inp.ctx.dataset_id, inp.ctx.sample_id, inp.class as u64],
    );
    let mask = || -> Result<&[bool]> {
        let masks = inp
            .masks
            .ok_or_else(|| Error::Precondition(format!("{} needs ground-truth masks", spec.id)))?;
        masks
            .get(inp.class)
            .map(Vec::as_slice)
            .ok_or(Error::InvalidClass { index: inp.class, num_classes: masks.len() })
    };
    let raw = match spec.kind {
        MetricId::Fe => faithfulness_estimate(inp.model, inp.x, inp.class, attr, &cfg.fe, seed)?,
        MetricId::Irof => {
            let seg = irof_segmentation(inp.x, &cfg.irof)?;
            irof(inp.model, inp.x, inp.class, attr, &seg, &cfg.irof)?
        }
        MetricId::As => avg_sensitivity(
            inp.model, inp.x, inp.class, attr, inp.explainer, &inp.ctx, &cfg.robustness, seed,
        )?,
        MetricId::Lle => local_lipschitz_estimate(
            inp.model, inp.x, inp.class, attr, inp.explainer, &inp.ctx, &cfg.robustness, seed,
        )?,
        MetricId::Tki => top_k_intersection(attr, mask()?, cfg.top_k)?,
        MetricId::Rra => relevance_rank_accuracy(attr, mask()?)?,
        MetricId::Sp => sparseness(attr)?,
        MetricId::Co => complexity(attr)?,
        MetricId::Mprt => model_parameter_randomization(
            inp.randomized, inp.x, inp.class, attr, inp.explainer, &inp.ctx, cfg.entropy_bins,
        )?,
        MetricId::Rl => random_logit(inp.model, inp.x, inp.class, inp.attr, inp.explainer, &inp.ctx, seed)?,
    };
    if !raw.is_finite() {
        return Err(Error::InvalidArgument(format!("{} produced a non-finite score", spec.id)));
    }
    Ok(Score {
        raw,
        oriented: orient(spec.kind, cfg, raw, attr.len()),
    })
}

/// Scores every (sample, evaluated class, method, metric) tuple. Maps come
/// from `archive` when it holds them and are recomputed otherwise.
pub fn evaluate(
    model: &ModelGraph,
    samples: &[EvalSample],
    explainers: &[&dyn Explainer],
    specs: &[MetricSpec],
    archive: Option<&AttributionArchive>,
    explain_seed: u64,
    dataset_id: u64,
) -> Result<Vec<MetricRecord>> {
    let randomized: Vec<ModelGraph> = specs.iter().map(|s| randomized_reference(model, s.config.seed)).collect();
    let per_sample: Vec<Vec<MetricRecord>> = samples
        .par_iter()
        .map(|sample| -> Result<Vec<MetricRecord>> {
            let ctx = ExplainContext {
                dataset_id,
                sample_id: sample.id,
                seed: explain_seed,
            };
            let classes = evaluation_classes(model, &sample.image)?;
            let mut out = Vec::new();
            for explainer in explainers {
                // Failed explanations keep only their status code.
                let maps: Vec<std::result::Result<AttributionMap, &'static str>> = match archive {
                    Some(a) => classes
                        .iter()
                        .map(|&c| match a.get(sample.id, c, explainer.id()) {
                            Some(m) => Ok(m.clone()),
                            None => explainer.explain(model, &sample.image, c, &ctx).map_err(|e| e.status_code()),
                        })
                        .collect(),
                    None => match explainer.explain_classes(model, &sample.image, &classes, &ctx) {
                        Ok(v) => v.into_iter().map(Ok).collect(),
                        Err(e) => classes.iter().map(|_| Err(e.status_code())).collect(),
                    },
                };
                for (&class, map) in classes.iter().zip(&maps) {
                    for (spec, rand_model) in specs.iter().zip(&randomized) {
                        let attr = match map {
                            Ok(a) => a,
                            Err(status) => {
                                out.push(MetricRecord::failed(&spec.id, explainer.id(), sample.id, class, status));
                                continue;
                            }
                        };
                        let inputs = ScoreInputs {
                            model,
                            randomized: rand_model,
                            x: &sample.image,
                            masks: sample.masks.as_deref(),
                            class,
                            explainer: *explainer,
                            attr,
                            ctx,
                        };
                        let result = evaluate_one(spec, &inputs);
                        out.push(MetricRecord::from_result(&spec.id, explainer.id(), sample.id, class, &result));
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut records: Vec<MetricRecord> = per_sample.into_iter().flatten().collect();
    orient_by_method_set(&mut records);
    Ok(records)
}

/// Fills missing oriented scores by min-max scaling raw scores across the
/// methods that share (metric, sample, class); equal scores map to 0.5.
pub fn orient_by_method_set(records: &mut [MetricRecord]) {
    let mut groups: BTreeMap<(String, u64, usize), (f64, f64)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_ok() && r.oriented_score.is_none()) {
        let v = r.raw_score.expect("ok record has a raw score");
        let e = groups
            .entry((r.metric_id.clone(), r.sample_id, r.class_index))
            .or_insert((f64::INFINITY, f64::NEG_INFINITY));
        e.0 = e.0.min(v);
        e.1 = e.1.max(v);
    }
    for r in records.iter_mut().filter(|r| r.is_ok() && r.oriented_score.is_none()) {
        let (lo, hi) = groups[&(r.metric_id.clone(), r.sample_id, r.class_index)];
        let v = r.raw_score.expect("ok record has a raw score");
        r.oriented_score = Some(if hi > lo { (v - lo) / (hi - lo) } else { 0.5 });
    }
}
