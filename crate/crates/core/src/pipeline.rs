//! The end-to-end run: data, training, explanations, metric scores,
//! meta-evaluation and report, each stage reading and writing plain files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{save_archive, AttributionArchive, ExplainContext, Explainer, Method, MethodConfig, MethodId};
use crate::error::{Error, Result};
use crate::meta::{run_meta_evaluation, save_meta_report, MetaConfig, MetaReport, QualityMetric};
use crate::metrics::{
    evaluate, evaluation_classes, write_records, EvalSample, MetricConfig, MetricId, MetricRecord, MetricSpec,
};
use crate::model::{macro_f1, save_model, train, ModelGraph, TrainConfig};
use crate::perturb::{BaselineSpec, Strategy};
use crate::report::{build_report, ReportInputs};
use crate::scene::{generate_dataset, save_dataset, Dataset, SceneConfig};
use crate::seed;

/// Everything a full run needs. Only `seed` is mandatory in a config file;
/// other fields fall back to their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: Option<usize>,
    pub scene: SceneConfig,
    pub train_samples: usize,
    pub test_samples: usize,
    pub train: TrainConfig,
    pub methods: Vec<MethodId>,
    pub method_config: MethodConfig,
    pub metrics: Vec<MetricId>,
    pub metric_config: MetricConfig,
    /// Test samples scored by `evaluate` and explained by `explain`.
    pub eval_samples: usize,
    pub meta: MetaConfig,
    /// Methods compared in the meta-evaluation; `None` uses `methods`.
    pub meta_methods: Option<Vec<MethodId>>,
    /// Metrics meta-evaluated; `None` uses `metrics`.
    pub meta_metrics: Option<Vec<MetricId>>,
    /// Add the six IROF baseline × ordering variants to the meta-evaluation.
    pub irof_ablation: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: None,
            scene: SceneConfig::default(),
            train_samples: 2000,
            test_samples: 256,
            train: TrainConfig::default(),
            methods: MethodId::ALL.to_vec(),
            method_config: MethodConfig::default(),
            metrics: MetricId::ALL.to_vec(),
            metric_config: MetricConfig::default(),
            eval_samples: 128,
            meta: MetaConfig::default(),
            meta_methods: None,
            meta_metrics: None,
            irof_ablation: true,
        }
    }
}

impl RunConfig {
    pub fn explainers(&self) -> Vec<Method> {
        explainers(&self.methods, &self.method_config)
    }

    /// Evaluation metrics, one spec per id.
    pub fn metric_specs(&self) -> Vec<MetricSpec> {
        metric_specs(&self.metrics, &self.metric_config)
    }

    pub fn meta_explainers(&self) -> Vec<Method> {
        explainers(self.meta_methods.as_deref().unwrap_or(&self.methods), &self.method_config)
    }

    /// Meta-evaluated metrics plus the IROF variants.
    pub fn meta_specs(&self) -> Vec<MetricSpec> {
        let mut specs = metric_specs(self.meta_metrics.as_deref().unwrap_or(&self.metrics), &self.metric_config);
        if self.irof_ablation {
            specs.extend(irof_variants(&self.metric_config));
        }
        specs
    }
}

pub fn explainers(methods: &[MethodId], config: &MethodConfig) -> Vec<Method> {
    methods.iter().map(|&m| Method::new(m, config)).collect()
}

pub fn metric_specs(metrics: &[MetricId], config: &MetricConfig) -> Vec<MetricSpec> {
    metrics.iter().map(|&m| MetricSpec::new(m, config)).collect()
}

/// IROF under every {mean, black, uniform} baseline and {MoRF, LeRF} order,
/// named `irof_<baseline>_<order>`.
pub fn irof_variants(config: &MetricConfig) -> Vec<MetricSpec> {
    let baselines = [
        BaselineSpec::mean(),
        BaselineSpec::black(),
        BaselineSpec::uniform_random(seed::derive(config.seed, "irof-uniform", &[])),
    ];
    let mut out = Vec::new();
    for b in baselines {
        for s in [Strategy::Morf, Strategy::Lerf] {
            let mut cfg = config.clone();
            cfg.irof.baseline = b;
            cfg.irof.strategy = s;
            out.push(MetricSpec::named(format!("irof_{}_{}", b.name(), s.name()), MetricId::Irof, &cfg));
        }
    }
    out
}

/// Parses a comma-separated id list.
pub fn parse_list<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<Vec<T>> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(str::parse).collect()
}

pub fn eval_samples(dataset: &Dataset, n: usize) -> Vec<EvalSample> {
    dataset.scenes.iter().take(n).map(EvalSample::from).collect()
}

fn explain_seed(seed: u64) -> u64 {
    seed::derive(seed, "explain", &[])
}

pub fn build_model(scene: &SceneConfig, seed: u64) -> Result<ModelGraph> {
    ModelGraph::tiny_cnn(
        [scene.channels, scene.height, scene.width],
        scene.num_classes,
        seed::derive(seed, "model-init", &[]),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub config: TrainConfig,
    pub epoch_losses: Vec<f64>,
    pub train_macro_f1: f64,
    pub eval_macro_f1: Option<f64>,
}

pub fn dataset_macro_f1(model: &ModelGraph, data: &Dataset) -> Result<f64> {
    let predicted: Vec<Vec<bool>> = data
        .scenes
        .par_iter()
        .map(|s| model.predict_multilabel(&s.image).map(|p| p.labels))
        .collect::<Result<_>>()?;
    Ok(macro_f1(&predicted, &data.labels()))
}

/// Trains a fresh TinyCNN. The training seed is taken from `seed` and
/// overrides the one in `config`.
pub fn train_stage(data: &Dataset, eval: Option<&Dataset>, config: &TrainConfig, seed: u64) -> Result<(ModelGraph, TrainLog)> {
    let init = build_model(&data.config, seed)?;
    let cfg = TrainConfig {
        seed: seed::derive(seed, "train", &[]),
        ..config.clone()
    };
    let (model, epoch_losses) = train(&init, &data.images(), &data.labels(), &cfg)?;
    let train_macro_f1 = dataset_macro_f1(&model, data)?;
    let eval_macro_f1 = eval.map(|d| dataset_macro_f1(&model, d)).transpose()?;
    Ok((
        model,
        TrainLog {
            config: cfg,
            epoch_losses,
            train_macro_f1,
            eval_macro_f1,
        },
    ))
}

/// Maps of every method for the evaluation classes of each sample.
pub fn explain_stage(
    model: &ModelGraph,
    samples: &[EvalSample],
    explainers: &[&dyn Explainer],
    dataset_id: u64,
    seed: u64,
) -> Result<AttributionArchive> {
    let (_, h, w) = model.input_shape().into();
    let per_sample: Vec<Vec<(u64, crate::attribution::AttributionMap)>> = samples
        .par_iter()
        .map(|s| -> Result<_> {
            let ctx = ExplainContext {
                dataset_id,
                sample_id: s.id,
                seed: explain_seed(seed),
            };
            let classes = evaluation_classes(model, &s.image)?;
            let mut out = Vec::new();
            for e in explainers {
                for map in e.explain_classes(model, &s.image, &classes, &ctx)? {
                    out.push((s.id, map));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut archive = AttributionArchive::new(h, w);
    for (id, map) in per_sample.into_iter().flatten() {
        archive.push(id, map)?;
    }
    Ok(archive)
}

pub fn evaluate_stage(
    model: &ModelGraph,
    samples: &[EvalSample],
    explainers: &[&dyn Explainer],
    specs: &[MetricSpec],
    archive: Option<&AttributionArchive>,
    dataset_id: u64,
    seed: u64,
) -> Result<Vec<MetricRecord>> {
    if specs.iter().any(|s| s.kind.needs_masks()) && samples.iter().any(|s| s.masks.is_none()) {
        return Err(Error::Precondition("localization metrics need ground-truth masks".into()));
    }
    evaluate(model, samples, explainers, specs, archive, explain_seed(seed), dataset_id)
}

pub fn meta_stage(
    model: &ModelGraph,
    samples: &[EvalSample],
    explainers: &[&dyn Explainer],
    specs: &[MetricSpec],
    config: &MetaConfig,
    dataset_id: u64,
) -> Result<MetaReport> {
    let metrics: Vec<&dyn QualityMetric> = specs.iter().map(|s| s as &dyn QualityMetric).collect();
    run_meta_evaluation(model, samples, explainers, &metrics, config, dataset_id)
}

pub fn write_files(dir: &Path, files: &BTreeMap<String, String>) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, body) in files {
        fs::write(dir.join(name), body)?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Output locations of [`run_pipeline`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunPaths {
    pub train_data: PathBuf,
    pub test_data: PathBuf,
    pub model: PathBuf,
    pub train_log: PathBuf,
    pub attributions: PathBuf,
    pub metrics: PathBuf,
    pub meta: PathBuf,
    pub meta_chart: PathBuf,
    pub report: PathBuf,
}

impl RunPaths {
    pub fn new(out: &Path) -> Self {
        Self {
            train_data: out.join("data/train"),
            test_data: out.join("data/test"),
            model: out.join("model.bin"),
            train_log: out.join("train_log.json"),
            attributions: out.join("attributions"),
            metrics: out.join("metrics.csv"),
            meta: out.join("meta.json"),
            meta_chart: out.join("meta.svg"),
            report: out.join("report"),
        }
    }
}

/// In-memory results of a full run.
pub struct RunOutput {
    pub model: ModelGraph,
    pub train_log: TrainLog,
    pub records: Vec<MetricRecord>,
    pub meta: MetaReport,
}

/// Runs every stage and writes its artifacts under `out`.
pub fn run_pipeline(cfg: &RunConfig, out: &Path) -> Result<RunOutput> {
    let paths = RunPaths::new(out);
    let train_data = generate_dataset(&cfg.scene, cfg.train_samples, seed::derive(cfg.seed, "train-data", &[]))?;
    let test_data = generate_dataset(&cfg.scene, cfg.test_samples, seed::derive(cfg.seed, "test-data", &[]))?;
    save_dataset(&train_data, &paths.train_data)?;
    save_dataset(&test_data, &paths.test_data)?;
    log::info!("generated {} training and {} test scenes", train_data.len(), test_data.len());

    let (model, train_log) = train_stage(&train_data, Some(&test_data), &cfg.train, cfg.seed)?;
    save_model(&model, &paths.model)?;
    write_json(&train_log, &paths.train_log)?;
    log::info!("trained model, test macro-F1 {:?}", train_log.eval_macro_f1);

    let methods = cfg.explainers();
    let explainers: Vec<&dyn Explainer> = methods.iter().map(|m| m as &dyn Explainer).collect();
    let samples = eval_samples(&test_data, cfg.eval_samples);
    let dataset_id = test_data.id();
    let archive = explain_stage(&model, &samples, &explainers, dataset_id, cfg.seed)?;
    save_archive(&archive, &paths.attributions)?;

    let records = evaluate_stage(&model, &samples, &explainers, &cfg.metric_specs(), Some(&archive), dataset_id, cfg.seed)?;
    write_records(&records, &paths.metrics)?;
    log::info!("scored {} metric records", records.len());

    let meta_cfg = MetaConfig {
        seed: seed::derive(cfg.seed, "meta", &[]),
        ..cfg.meta.clone()
    };
    // Each meta iteration draws its own subset from the whole test set.
    let pool = eval_samples(&test_data, test_data.len());
    let meta_methods = cfg.meta_explainers();
    let meta_explainers: Vec<&dyn Explainer> = meta_methods.iter().map(|m| m as &dyn Explainer).collect();
    let meta = meta_stage(&model, &pool, &meta_explainers, &cfg.meta_specs(), &meta_cfg, dataset_id)?;
    save_meta_report(&meta, &paths.meta)?;
    fs::write(&paths.meta_chart, crate::report::mc_chart_svg(&meta))?;

    let files = build_report(&ReportInputs {
        records: Some(&records),
        meta: Some(&meta),
        echo: vec![("config".into(), serde_json::to_string(cfg)?)],
    });
    write_files(&paths.report, &files)?;
    Ok(RunOutput {
        model,
        train_log,
        records,
        meta,
    })
}
