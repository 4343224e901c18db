//! Feature attribution methods producing one `[H,W]` map per class.

mod archive;
mod deeplift;
mod gradcam;
mod lime;
mod lrp;
mod occlusion;

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardUniform;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::numerics::Tensor;
use crate::seed;

pub use archive::{load_archive, save_archive, ArchiveEntry, AttributionArchive, ARCHIVE_FORMAT_VERSION};
pub use deeplift::{deeplift, deeplift_contributions, deeplift_reference, DeepLiftConfig};
pub use gradcam::{gradcam, gradcam_from_parts, GradCamConfig};
pub use lime::{fit_surrogate, lime, lime_with_samples, LimeConfig, SurrogateFit};
pub use lrp::{layer_rules, lrp, lrp_relevances, LrpConfig, LrpRule};
pub use occlusion::{occlusion, window_starts, OcclusionConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    /// `[H,W]`
    pub values: Tensor,
    pub class_index: usize,
    pub method_id: String,
    pub normalized: bool,
}

impl AttributionMap {
    pub fn new(values: Tensor, class_index: usize, method_id: impl Into<String>) -> Self {
        Self {
            values,
            class_index,
            method_id: method_id.into(),
            normalized: false,
        }
    }

    pub fn data(&self) -> &[f64] {
        self.values.data()
    }
}

/// Min-max scaling to `[0,1]`; a constant map becomes all 0.5.
pub fn normalize_map(map: &AttributionMap) -> AttributionMap {
    let (lo, hi) = (map.values.min(), map.values.max());
    let values = if hi > lo {
        map.values.map(|v| (v - lo) / (hi - lo))
    } else {
        map.values.map(|_| 0.5)
    };
    AttributionMap {
        values,
        class_index: map.class_index,
        method_id: map.method_id.clone(),
        normalized: true,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodId {
    Occlusion,
    Lime,
    Gradcam,
    Lrp,
    Deeplift,
    Random,
}

impl MethodId {
    pub const ALL: [MethodId; 6] = [
        MethodId::Occlusion,
        MethodId::Lime,
        MethodId::Gradcam,
        MethodId::Lrp,
        MethodId::Deeplift,
        MethodId::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::Occlusion => "occlusion",
            MethodId::Lime => "lime",
            MethodId::Gradcam => "gradcam",
            MethodId::Lrp => "lrp",
            MethodId::Deeplift => "deeplift",
            MethodId::Random => "random",
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}'")))
    }
}

/// Hyperparameters of every method.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodConfig {
    pub occlusion: OcclusionConfig,
    pub lime: LimeConfig,
    pub gradcam: GradCamConfig,
    pub lrp: LrpConfig,
    pub deeplift: DeepLiftConfig,
}

/// Identifies the sample being explained, for seeding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExplainContext {
    pub dataset_id: u64,
    pub sample_id: u64,
    pub seed: u64,
}

/// Anything that produces attribution maps for a model, input and class.
pub trait Explainer: Sync {
    fn id(&self) -> &str;

    fn explain(&self, model: &ModelGraph, x: &Tensor, class: usize, ctx: &ExplainContext) -> Result<AttributionMap>;

    /// Maps for several classes; implementations may share work across classes.
    fn explain_classes(
        &self,
        model: &ModelGraph,
        x: &Tensor,
        classes: &[usize],
        ctx: &ExplainContext,
    ) -> Result<Vec<AttributionMap>> {
        classes.iter().map(|&c| self.explain(model, x, c, ctx)).collect()
    }
}

/// One of the built-in methods with its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Method {
    pub id: MethodId,
    pub config: MethodConfig,
}

impl Method {
    pub fn new(id: MethodId, config: &MethodConfig) -> Self {
        Self {
            id,
            config: config.clone(),
        }
    }
}

impl Explainer for Method {
    fn id(&self) -> &str {
        self.id.as_str()
    }

    fn explain(&self, model: &ModelGraph, x: &Tensor, class: usize, ctx: &ExplainContext) -> Result<AttributionMap> {
        Ok(self.explain_classes(model, x, &[class], ctx)?.remove(0))
    }

    fn explain_classes(
        &self,
        model: &ModelGraph,
        x: &Tensor,
        classes: &[usize],
        ctx: &ExplainContext,
    ) -> Result<Vec<AttributionMap>> {
        for &c in classes {
            model.check_class(c)?;
        }
        let cfg = &self.config;
        match self.id {
            MethodId::Occlusion => occlusion(model, x, classes, &cfg.occlusion),
            MethodId::Lime => lime(model, x, classes, &cfg.lime, lime_seed(ctx)),
            MethodId::Gradcam => classes.iter().map(|&c| gradcam(model, x, c, &cfg.gradcam)).collect(),
            MethodId::Lrp => classes.iter().map(|&c| lrp(model, x, c, &cfg.lrp)).collect(),
            MethodId::Deeplift => classes.iter().map(|&c| deeplift(model, x, c, &cfg.deeplift)).collect(),
            MethodId::Random => {
                let (_, h, w) = x.dims3()?;
                Ok(classes.iter().map(|&c| random_attribution(h, w, c, ctx)).collect())
            }
        }
    }
}

fn lime_seed(ctx: &ExplainContext) -> u64 {
    seed::derive(ctx.seed, "lime", &[ctx.dataset_id, ctx.sample_id])
}

/// I.i.d. `U(0,1)` map seeded by dataset and sample only, so every class of a
/// sample receives the same map.
pub fn random_attribution(h: usize, w: usize, class: usize, ctx: &ExplainContext) -> AttributionMap {
    let mut rng = seed::derived_rng(ctx.dataset_id, "random-attribution", &[ctx.sample_id]);
    let values = Tensor::from_fn(&[h, w], |_| rng.sample(StandardUniform));
    AttributionMap::new(values, class, MethodId::Random.as_str())
}

/// Wraps a closure as an [`Explainer`].
pub struct FnExplainer<F> {
    id: String,
    f: F,
}

impl<F> FnExplainer<F>
where
    F: Fn(&ModelGraph, &Tensor, usize) -> Result<Tensor> + Sync,
{
    pub fn new(id: impl Into<String>, f: F) -> Self {
        Self { id: id.into(), f }
    }
}

impl<F> Explainer for FnExplainer<F>
where
    F: Fn(&ModelGraph, &Tensor, usize) -> Result<Tensor> + Sync,
{
    fn id(&self) -> &str {
        &self.id
    }

    fn explain(&self, model: &ModelGraph, x: &Tensor, class: usize, _ctx: &ExplainContext) -> Result<AttributionMap> {
        Ok(AttributionMap::new((self.f)(model, x, class)?, class, self.id.clone()))
    }
}
