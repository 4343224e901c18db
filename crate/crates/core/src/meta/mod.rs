//! Reliability of the metrics themselves: how their scores react to minor
//! (label-preserving) and disruptive (label-changing) perturbations of the
//! input or the model.

mod calibrate;
mod consistency;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use calibrate::{calibrate_perturbation, CalibrationConfig, PerturbationPlan};
pub use consistency::{iac, iec, mc_score};

use crate::attribution::{ExplainContext, Explainer};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_one, randomized_reference, Category, EvalSample, MetricId, MetricSpec, ScoreInputs};
use crate::model::ModelGraph;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Input,
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Predicted labels unchanged; scores should stay put.
    Minor,
    /// Predicted labels changed; scores should react.
    Disruptive,
}

impl Space {
    pub const ALL: [Space; 2] = [Space::Input, Space::Model];
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Minor, Mode::Disruptive];
}

/// Where a record's components come from; `Combined` averages the two spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaSpace {
    Input,
    Model,
    Combined,
}

impl From<Space> for MetaSpace {
    fn from(s: Space) -> Self {
        match s {
            Space::Input => MetaSpace::Input,
            Space::Model => MetaSpace::Model,
        }
    }
}

/// A metric as the meta-evaluation sees it: a higher-is-better score for one
/// explanation.
pub trait QualityMetric: Sync {
    fn id(&self) -> &str;

    fn category(&self) -> Option<Category> {
        None
    }

    /// Fully randomized reference model, for metrics that need one.
    fn randomized_model(&self, _model: &ModelGraph) -> Option<ModelGraph> {
        None
    }

    fn meta_score(&self, inputs: &ScoreInputs) -> Result<f64>;
}

impl QualityMetric for MetricSpec {
    fn id(&self) -> &str {
        &self.id
    }

    fn category(&self) -> Option<Category> {
        Some(self.kind.category())
    }

    fn randomized_model(&self, model: &ModelGraph) -> Option<ModelGraph> {
        (self.kind == MetricId::Mprt).then(|| randomized_reference(model, self.config.seed))
    }

    /// Oriented score, or the raw one where orientation needs the whole
    /// method set (MPRT's raw score is already higher-is-better).
    fn meta_score(&self, inputs: &ScoreInputs) -> Result<f64> {
        let s = evaluate_one(self, inputs)?;
        Ok(s.oriented.unwrap_or(s.raw))
    }
}

/// A metric defined by a closure, mostly for tests and experiments.
pub struct FnMetric<F> {
    id: String,
    f: F,
}

impl<F> FnMetric<F>
where
    F: Fn(&ScoreInputs) -> Result<f64> + Sync,
{
    pub fn new(id: impl Into<String>, f: F) -> Self {
        Self { id: id.into(), f }
    }
}

impl<F> QualityMetric for FnMetric<F>
where
    F: Fn(&ScoreInputs) -> Result<f64> + Sync,
{
    fn id(&self) -> &str {
        &self.id
    }

    fn meta_score(&self, inputs: &ScoreInputs) -> Result<f64> {
        (self.f)(inputs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    pub n_samples: usize,
    /// Perturbation plans per (space, mode).
    pub k_plans: usize,
    pub iterations: usize,
    pub calibration: CalibrationConfig,
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            n_samples: 128,
            k_plans: 5,
            iterations: 3,
            calibration: CalibrationConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaRecord {
    pub metric_id: String,
    pub space: MetaSpace,
    pub iac_nr: Option<f64>,
    pub iac_ar: Option<f64>,
    pub iec_nr: Option<f64>,
    pub iec_ar: Option<f64>,
    pub mc: Option<f64>,
    /// Fewest complete sample rows behind any component.
    pub rows: usize,
}

impl MetaRecord {
    fn from_components(metric_id: &str, space: MetaSpace, c: [Option<f64>; 4], rows: usize) -> Self {
        let mc = match c {
            [Some(a), Some(b), Some(d), Some(e)] => Some(mc_score(a, b, d, e)),
            _ => None,
        };
        Self {
            metric_id: metric_id.to_string(),
            space,
            iac_nr: c[0],
            iac_ar: c[1],
            iec_nr: c[2],
            iec_ar: c[3],
            mc,
            rows,
        }
    }

    fn components(&self) -> [Option<f64>; 5] {
        [self.iac_nr, self.iac_ar, self.iec_nr, self.iec_ar, self.mc]
    }
}

/// Calibration outcome for one (space, mode) family in one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub space: Space,
    pub mode: Mode,
    pub samples: usize,
    /// Samples with at least one plan that failed to calibrate.
    pub skipped: usize,
    pub mean_noise_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub seed: u64,
    pub sample_ids: Vec<u64>,
    pub coverage: Vec<Coverage>,
    pub records: Vec<MetaRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaSummary {
    pub metric_id: String,
    pub category: Option<Category>,
    pub space: MetaSpace,
    pub iac_nr: Option<MeanStd>,
    pub iac_ar: Option<MeanStd>,
    pub iec_nr: Option<MeanStd>,
    pub iec_ar: Option<MeanStd>,
    pub mc: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaReport {
    pub config: MetaConfig,
    pub dataset_id: u64,
    pub methods: Vec<String>,
    pub metrics: Vec<String>,
    pub iterations: Vec<IterationReport>,
    pub summary: Vec<MetaSummary>,
}

impl MetaReport {
    pub fn summary_for(&self, metric_id: &str, space: MetaSpace) -> Option<&MetaSummary> {
        self.summary.iter().find(|s| s.metric_id == metric_id && s.space == space)
    }

    /// Mean combined MC of a metric across iterations.
    pub fn mean_mc(&self, metric_id: &str) -> Option<f64> {
        self.summary_for(metric_id, MetaSpace::Combined)?.mc.map(|m| m.mean)
    }
}

pub fn save_meta_report(report: &MetaReport, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_meta_report(path: &Path) -> Result<MetaReport> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// `[metric][method]` scores of one (model, input) pair; failures are `None`.
type ScoreGrid = Vec<Vec<Option<f64>>>;

struct SampleOutcome {
    unperturbed: ScoreGrid,
    /// Indexed by [`plan_index`]; `None` when calibration failed.
    perturbed: Vec<Option<ScoreGrid>>,
    noise: Vec<Option<f64>>,
}

fn plan_index(space: Space, mode: Mode, k: usize, k_plans: usize) -> usize {
    let family = match (space, mode) {
        (Space::Input, Mode::Minor) => 0,
        (Space::Input, Mode::Disruptive) => 1,
        (Space::Model, Mode::Minor) => 2,
        (Space::Model, Mode::Disruptive) => 3,
    };
    family * k_plans + k
}

struct Context<'a> {
    explainers: &'a [&'a dyn Explainer],
    metrics: &'a [&'a dyn QualityMetric],
    randomized: &'a [Option<ModelGraph>],
}

impl Context<'_> {
    fn scores(&self, model: &ModelGraph, sample: &EvalSample, x: &crate::Tensor, class: usize, ctx: ExplainContext) -> ScoreGrid {
        let mut grid = vec![vec![None; self.explainers.len()]; self.metrics.len()];
        for (j, explainer) in self.explainers.iter().enumerate() {
            let Ok(attr) = explainer.explain(model, x, class, &ctx) else {
                continue;
            };
            for (i, metric) in self.metrics.iter().enumerate() {
                let inputs = ScoreInputs {
                    model,
                    randomized: self.randomized[i].as_ref().unwrap_or(model),
                    x,
                    masks: sample.masks.as_deref(),
                    class,
                    explainer: *explainer,
                    attr: &attr,
                    ctx,
                };
                grid[i][j] = metric.meta_score(&inputs).ok().filter(|v| v.is_finite());
            }
        }
        grid
    }
}

fn select_samples(samples: &[EvalSample], n: usize, seed: u64) -> Vec<&EvalSample> {
    if n >= samples.len() {
        return samples.iter().collect();
    }
    let mut rng = seed::derived_rng(seed, "meta-samples", &[]);
    let mut idx = rand::seq::index::sample(&mut rng, samples.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| &samples[i]).collect()
}

/// Scores every metric on the unperturbed samples and under `k_plans` minor
/// and disruptive perturbations in input and model space, then condenses
/// the score shifts into IAC/IEC/MC per metric. The explained class is the
/// unperturbed top-1 class throughout.
pub fn run_meta_evaluation(
    model: &ModelGraph,
    samples: &[EvalSample],
    explainers: &[&dyn Explainer],
    metrics: &[&dyn QualityMetric],
    cfg: &MetaConfig,
    dataset_id: u64,
) -> Result<MetaReport> {
    if explainers.len() < 2 {
        return Err(Error::Precondition(format!("need at least 2 methods, got {}", explainers.len())));
    }
    if cfg.k_plans == 0 || cfg.iterations == 0 || cfg.n_samples == 0 {
        return Err(Error::InvalidArgument("k_plans, iterations and n_samples must be positive".into()));
    }
    let randomized: Vec<Option<ModelGraph>> = metrics.iter().map(|m| m.randomized_model(model)).collect();
    let context = Context {
        explainers,
        metrics,
        randomized: &randomized,
    };
    let mut iterations = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let iter_seed = seed::derive(cfg.seed, "meta-iteration", &[it as u64]);
        let chosen = select_samples(samples, cfg.n_samples, iter_seed);
        let explain_seed = seed::derive(iter_seed, "explain", &[]);
        let outcomes: Vec<SampleOutcome> = chosen
            .par_iter()
            .map(|sample| run_sample(model, sample, &context, cfg, iter_seed, explain_seed, dataset_id))
            .collect::<Result<_>>()?;
        let coverage = coverage(&outcomes, cfg.k_plans);
        for c in &coverage {
            if 2 * c.skipped > c.samples {
                return Err(Error::CoverageTooLow {
                    family: format!("{:?}/{:?}", c.space, c.mode).to_lowercase(),
                    skipped: c.skipped,
                    total: c.samples,
                });
            }
        }
        let mut records = Vec::new();
        for (i, metric) in metrics.iter().enumerate() {
            let per_space: Vec<MetaRecord> = Space::ALL
                .into_iter()
                .map(|space| space_record(metric.id(), i, space, &outcomes, cfg.k_plans))
                .collect();
            records.push(combine(metric.id(), &per_space));
            records.extend(per_space);
        }
        iterations.push(IterationReport {
            iteration: it,
            seed: iter_seed,
            sample_ids: chosen.iter().map(|s| s.id).collect(),
            coverage,
            records,
        });
    }
    let summary = summarize(metrics, &iterations);
    Ok(MetaReport {
        config: cfg.clone(),
        dataset_id,
        methods: explainers.iter().map(|e| e.id().to_string()).collect(),
        metrics: metrics.iter().map(|m| m.id().to_string()).collect(),
        iterations,
        summary,
    })
}

fn run_sample(
    model: &ModelGraph,
    sample: &EvalSample,
    context: &Context,
    cfg: &MetaConfig,
    iter_seed: u64,
    explain_seed: u64,
    dataset_id: u64,
) -> Result<SampleOutcome> {
    let class = model.predict_multilabel(&sample.image)?.top_class();
    let ctx = ExplainContext {
        dataset_id,
        sample_id: sample.id,
        seed: explain_seed,
    };
    let unperturbed = context.scores(model, sample, &sample.image, class, ctx);
    let plans = 4 * cfg.k_plans;
    let mut perturbed = vec![None; plans];
    let mut noise = vec![None; plans];
    for space in Space::ALL {
        for mode in Mode::ALL {
            for k in 0..cfg.k_plans {
                let plan_seed = seed::derive(
                    iter_seed,
                    "plan",
                    &[space as u64, mode as u64, k as u64, dataset_id, sample.id],
                );
                let plan = match calibrate_perturbation(model, &sample.image, space, mode, plan_seed, &cfg.calibration) {
                    Ok(p) => p,
                    Err(Error::CalibrationFailed { .. }) => continue,
                    Err(e) => return Err(e),
                };
                let (m, x) = plan.apply(model, &sample.image)?;
                let p = plan_index(space, mode, k, cfg.k_plans);
                perturbed[p] = Some(context.scores(&m, sample, &x, class, ctx));
                noise[p] = Some(plan.noise_std);
            }
        }
    }
    Ok(SampleOutcome {
        unperturbed,
        perturbed,
        noise,
    })
}

fn coverage(outcomes: &[SampleOutcome], k_plans: usize) -> Vec<Coverage> {
    let mut out = Vec::new();
    for space in Space::ALL {
        for mode in Mode::ALL {
            let idx: Vec<usize> = (0..k_plans).map(|k| plan_index(space, mode, k, k_plans)).collect();
            let skipped = outcomes
                .iter()
                .filter(|o| idx.iter().any(|&p| o.perturbed[p].is_none()))
                .count();
            let stds: Vec<f64> = outcomes.iter().flat_map(|o| idx.iter().filter_map(|&p| o.noise[p])).collect();
            out.push(Coverage {
                space,
                mode,
                samples: outcomes.len(),
                skipped,
                mean_noise_std: (!stds.is_empty()).then(|| stds.iter().sum::<f64>() / stds.len() as f64),
            });
        }
    }
    out
}

/// Rows complete for metric `i` under plan `p`: every method scored both
/// before and after the perturbation.
fn complete_rows(outcomes: &[SampleOutcome], i: usize, p: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut before = Vec::new();
    let mut after = Vec::new();
    for o in outcomes {
        let Some(grid) = &o.perturbed[p] else { continue };
        let b: Option<Vec<f64>> = o.unperturbed[i].iter().copied().collect();
        let a: Option<Vec<f64>> = grid[i].iter().copied().collect();
        if let (Some(b), Some(a)) = (b, a) {
            before.push(b);
            after.push(a);
        }
    }
    (before, after)
}

fn column(rows: &[Vec<f64>], j: usize) -> Vec<f64> {
    rows.iter().map(|r| r[j]).collect()
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// IAC and IEC for one mode: per-plan values averaged over plans (and over
/// methods for IAC). Plans with too few complete rows are left out.
fn mode_components(outcomes: &[SampleOutcome], i: usize, space: Space, mode: Mode, k_plans: usize) -> (Option<f64>, Option<f64>, usize) {
    let mut iac_values = Vec::new();
    let mut iec_values = Vec::new();
    let mut rows = usize::MAX;
    for k in 0..k_plans {
        let (before, after) = complete_rows(outcomes, i, plan_index(space, mode, k, k_plans));
        rows = rows.min(before.len());
        if before.is_empty() {
            continue;
        }
        let methods = before[0].len();
        for j in 0..methods {
            if let Ok(v) = iac(&column(&before, j), &[column(&after, j)], mode) {
                iac_values.push(v);
            }
        }
        if let Ok(v) = iec(&before, &[after], mode) {
            iec_values.push(v);
        }
    }
    (mean(&iac_values), mean(&iec_values), rows)
}

fn space_record(metric_id: &str, i: usize, space: Space, outcomes: &[SampleOutcome], k_plans: usize) -> MetaRecord {
    let (iac_nr, iec_nr, r1) = mode_components(outcomes, i, space, Mode::Minor, k_plans);
    let (iac_ar, iec_ar, r2) = mode_components(outcomes, i, space, Mode::Disruptive, k_plans);
    MetaRecord::from_components(metric_id, space.into(), [iac_nr, iac_ar, iec_nr, iec_ar], r1.min(r2))
}

fn combine(metric_id: &str, per_space: &[MetaRecord]) -> MetaRecord {
    let avg = |f: fn(&MetaRecord) -> Option<f64>| -> Option<f64> {
        let v: Option<Vec<f64>> = per_space.iter().map(f).collect();
        mean(&v?)
    };
    let c = [avg(|r| r.iac_nr), avg(|r| r.iac_ar), avg(|r| r.iec_nr), avg(|r| r.iec_ar)];
    let rows = per_space.iter().map(|r| r.rows).min().unwrap_or(0);
    MetaRecord::from_components(metric_id, MetaSpace::Combined, c, rows)
}

fn summarize(metrics: &[&dyn QualityMetric], iterations: &[IterationReport]) -> Vec<MetaSummary> {
    let mut out = Vec::new();
    for metric in metrics {
        for space in [MetaSpace::Combined, MetaSpace::Input, MetaSpace::Model] {
            let recs: Vec<&MetaRecord> = iterations
                .iter()
                .flat_map(|it| &it.records)
                .filter(|r| r.metric_id == metric.id() && r.space == space)
                .collect();
            let stat = |c: usize| {
                let v: Vec<f64> = recs.iter().filter_map(|r| r.components()[c]).collect();
                MeanStd::of(&v)
            };
            out.push(MetaSummary {
                metric_id: metric.id().to_string(),
                category: metric.category(),
                space,
                iac_nr: stat(0),
                iac_ar: stat(1),
                iec_nr: stat(2),
                iec_ar: stat(3),
                mc: stat(4),
            });
        }
    }
    out
}
