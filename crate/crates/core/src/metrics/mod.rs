//! Explanation-quality metrics and their higher-is-better orientation.

mod complexity;
mod csv;
mod eval;
mod faithfulness;
mod localization;
mod randomization;
mod robustness;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturb::{BaselineSpec, Strategy};

pub use complexity::{complexity, sparseness};
pub use csv::{read_records, records_to_csv, write_records, CSV_HEADER};
pub use eval::{
    evaluate, evaluate_one, evaluation_classes, orient_by_method_set, randomized_reference, EvalSample,
    MetricSpec, ScoreInputs,
};
pub use faithfulness::{faithfulness_estimate, irof, irof_segmentation};
pub use localization::{relevance_rank_accuracy, top_k_intersection};
pub use randomization::{model_parameter_randomization, non_target_class, random_logit};
pub use robustness::{avg_sensitivity, local_lipschitz_estimate, neighborhood};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricId {
    Fe,
    Irof,
    As,
    Lle,
    Tki,
    Rra,
    Sp,
    Co,
    Mprt,
    Rl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Faithfulness,
    Robustness,
    Localization,
    Complexity,
    Randomization,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Faithfulness,
        Category::Robustness,
        Category::Localization,
        Category::Complexity,
        Category::Randomization,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Faithfulness => "faithfulness",
            Category::Robustness => "robustness",
            Category::Localization => "localization",
            Category::Complexity => "complexity",
            Category::Randomization => "randomization",
        }
    }
}

impl MetricId {
    pub const ALL: [MetricId; 10] = [
        MetricId::Fe,
        MetricId::Irof,
        MetricId::As,
        MetricId::Lle,
        MetricId::Tki,
        MetricId::Rra,
        MetricId::Sp,
        MetricId::Co,
        MetricId::Mprt,
        MetricId::Rl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricId::Fe => "fe",
            MetricId::Irof => "irof",
            MetricId::As => "as",
            MetricId::Lle => "lle",
            MetricId::Tki => "tki",
            MetricId::Rra => "rra",
            MetricId::Sp => "sp",
            MetricId::Co => "co",
            MetricId::Mprt => "mprt",
            MetricId::Rl => "rl",
        }
    }

    pub fn category(self) -> Category {
        match self {
            MetricId::Fe | MetricId::Irof => Category::Faithfulness,
            MetricId::As | MetricId::Lle => Category::Robustness,
            MetricId::Tki | MetricId::Rra => Category::Localization,
            MetricId::Sp | MetricId::Co => Category::Complexity,
            MetricId::Mprt | MetricId::Rl => Category::Randomization,
        }
    }

    /// Whether the metric reads ground-truth masks.
    pub fn needs_masks(self) -> bool {
        matches!(self, MetricId::Tki | MetricId::Rra)
    }

    /// Whether the metric calls the explainer again on other inputs or models.
    pub fn needs_explainer(self) -> bool {
        matches!(self, MetricId::As | MetricId::Lle | MetricId::Mprt | MetricId::Rl)
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown metric '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeConfig {
    /// Subset size as a fraction of the pixel count.
    pub subset_fraction: f64,
    pub subsets: usize,
    pub baseline: BaselineSpec,
    /// Measure drops on the logit instead of the probability.
    pub use_logit: bool,
}

impl Default for FeConfig {
    fn default() -> Self {
        Self {
            subset_fraction: 0.05,
            subsets: 100,
            baseline: BaselineSpec::mean(),
            use_logit: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrofConfig {
    pub segments: usize,
    pub compactness: f64,
    pub slic_iterations: usize,
    pub baseline: BaselineSpec,
    pub strategy: Strategy,
    /// Segments removed; `None` removes all of them.
    pub steps: Option<usize>,
}

impl Default for IrofConfig {
    fn default() -> Self {
        Self {
            segments: 64,
            compactness: 10.0,
            slic_iterations: 10,
            baseline: BaselineSpec::mean(),
            strategy: Strategy::Morf,
            steps: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// `U(−ε, ε)` per element.
    Uniform,
    /// `N(0, ε²)` per element.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustnessConfig {
    pub epsilon: f64,
    pub samples: usize,
    pub noise: NoiseKind,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            samples: 20,
            noise: NoiseKind::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub fe: FeConfig,
    pub irof: IrofConfig,
    pub robustness: RobustnessConfig,
    /// TKI's K; `None` uses the mask size.
    pub top_k: Option<usize>,
    pub entropy_bins: usize,
    /// Base seed for subsets, neighborhoods, non-target classes and model randomization.
    pub seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            fe: FeConfig::default(),
            irof: IrofConfig::default(),
            robustness: RobustnessConfig::default(),
            top_k: None,
            entropy_bins: crate::numerics::stats::DEFAULT_HISTOGRAM_BINS,
            seed: 0,
        }
    }
}

/// A metric value and its `[0,1]` higher-is-better counterpart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub raw: f64,
    /// `None` where orientation needs the whole method set (MPRT).
    pub oriented: Option<f64>,
}

/// Fixed orientation table.
pub fn orient(metric: MetricId, config: &MetricConfig, raw: f64, pixels: usize) -> Option<f64> {
    let v = match metric {
        MetricId::Fe => (raw + 1.0) / 2.0,
        MetricId::Irof => match config.irof.strategy {
            Strategy::Morf => 1.0 - raw,
            Strategy::Lerf => raw,
        },
        MetricId::As | MetricId::Lle => 1.0 / (1.0 + raw),
        MetricId::Tki | MetricId::Rra | MetricId::Sp => raw,
        MetricId::Co => 1.0 - raw / (pixels as f64).ln(),
        MetricId::Mprt => return None,
        MetricId::Rl => 1.0 - raw,
    };
    Some(v.clamp(0.0, 1.0))
}

/// One row of the results table. Missing scores carry a non-`ok` status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric_id: String,
    pub method_id: String,
    pub sample_id: u64,
    pub class_index: usize,
    pub raw_score: Option<f64>,
    pub oriented_score: Option<f64>,
    pub status: String,
}

pub const STATUS_OK: &str = "ok";

impl MetricRecord {
    pub fn from_result(metric_id: &str, method_id: &str, sample_id: u64, class_index: usize, r: &Result<Score>) -> Self {
        let (raw_score, oriented_score, status) = match r {
            Ok(s) => (Some(s.raw), s.oriented, STATUS_OK.to_string()),
            Err(e) => (None, None, e.status_code().to_string()),
        };
        Self {
            metric_id: metric_id.to_string(),
            method_id: method_id.to_string(),
            sample_id,
            class_index,
            raw_score,
            oriented_score,
            status,
        }
    }

    pub fn failed(metric_id: &str, method_id: &str, sample_id: u64, class_index: usize, status: &str) -> Self {
        Self {
            metric_id: metric_id.to_string(),
            method_id: method_id.to_string(),
            sample_id,
            class_index,
            raw_score: None,
            oriented_score: None,
            status: status.to_string(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == STATUS_OK
    }
}

/// Per-sample oriented score: mean over the evaluated classes that have one.
pub fn per_sample_scores(records: &[MetricRecord], metric_id: &str, method_id: &str) -> Vec<(u64, f64)> {
    let mut acc: std::collections::BTreeMap<u64, (f64, usize)> = std::collections::BTreeMap::new();
    for r in records {
        if r.metric_id == metric_id && r.method_id == method_id {
            if let Some(v) = r.oriented_score {
                let e = acc.entry(r.sample_id).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
    }
    acc.into_iter().map(|(s, (sum, n))| (s, sum / n as f64)).collect()
}

/// Mean of [`per_sample_scores`]; `None` when no sample has a score.
pub fn mean_oriented(records: &[MetricRecord], metric_id: &str, method_id: &str) -> Option<f64> {
    let s = per_sample_scores(records, metric_id, method_id);
    (!s.is_empty()).then(|| s.iter().map(|(_, v)| v).sum::<f64>() / s.len() as f64)
}
