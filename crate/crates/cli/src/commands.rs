use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use attrex::attribution::{load_archive, save_archive, Explainer, MethodConfig, MethodId};
use attrex::meta::{load_meta_report, save_meta_report, CalibrationConfig, MetaConfig};
use attrex::metrics::{read_records, write_records, EvalSample, MetricConfig, MetricId};
use attrex::model::{load_model, save_model, ModelGraph, TrainConfig};
use attrex::pipeline::{
    eval_samples, evaluate_stage, explain_stage, explainers, irof_variants, meta_stage, metric_specs, train_stage,
    write_files, write_json,
};
use attrex::report::{build_report, mc_chart_svg, ReportInputs};
use attrex::scene::{generate_dataset, load_dataset, save_dataset, Dataset, SceneConfig};
use attrex::{seed, Error};

use crate::Global;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Missing(String),
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Failed(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Missing(m) => write!(f, "missing input: {m}"),
            CliError::Failed(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::MissingInput(m) => CliError::Missing(m),
            Error::InvalidArgument(m) => CliError::Usage(m),
            other => CliError::Failed(other.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

pub fn load_config(path: Option<&Path>) -> CliResult<Map<String, Value>> {
    let Some(path) = path else { return Ok(Map::new()) };
    let text = fs::read_to_string(path).map_err(|e| CliError::Missing(format!("{}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(CliError::Usage(format!("{} must hold a JSON object", path.display()))),
        Err(e) => Err(CliError::Usage(format!("{}: {e}", path.display()))),
    }
}

/// Replaces fields of `args` by config keys of the same name.
pub fn overlay<T: Serialize + DeserializeOwned>(args: &T, config: &Map<String, Value>) -> CliResult<T> {
    let Value::Object(mut obj) = serde_json::to_value(args).map_err(|e| CliError::Failed(e.to_string()))? else {
        return Err(CliError::Failed("arguments must serialize to an object".into()));
    };
    for (k, v) in config {
        if obj.contains_key(k) {
            obj.insert(k.clone(), v.clone());
        }
    }
    serde_json::from_value(Value::Object(obj)).map_err(|e| CliError::Usage(format!("config: {e}")))
}

pub fn keys<T: Serialize>(args: &T) -> CliResult<BTreeSet<String>> {
    match serde_json::to_value(args) {
        Ok(Value::Object(m)) => Ok(m.keys().cloned().chain(["config".to_string()]).collect()),
        _ => Err(CliError::Failed("arguments must serialize to an object".into())),
    }
}

pub fn reject_unknown(config: &Map<String, Value>, known: &BTreeSet<String>) -> CliResult {
    match config.keys().find(|k| !known.contains(*k)) {
        Some(k) => Err(CliError::Usage(format!("unknown config key '{k}'"))),
        None => Ok(()),
    }
}

fn parse_method(s: &str) -> Result<MethodId, String> {
    s.parse().map_err(|_| {
        let valid: Vec<&str> = MethodId::ALL.iter().map(|m| m.as_str()).collect();
        format!("unknown method '{s}' (valid: {})", valid.join(", "))
    })
}

fn parse_metric(s: &str) -> Result<MetricId, String> {
    s.parse().map_err(|_| {
        let valid: Vec<&str> = MetricId::ALL.iter().map(|m| m.as_str()).collect();
        format!("unknown metric '{s}' (valid: {})", valid.join(", "))
    })
}

const ALL_METHODS: &str = "occlusion,lime,gradcam,lrp,deeplift,random";
const ALL_METRICS: &str = "fe,irof,as,lle,tki,rra,sp,co,mprt,rl";

fn required_seed(g: &Global) -> CliResult<u64> {
    g.seed.ok_or_else(|| CliError::Usage("--seed is required".into()))
}

fn required_out(g: &Global) -> CliResult<&Path> {
    g.out.as_deref().ok_or_else(|| CliError::Usage("--out is required".into()))
}

fn existing(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing(format!("{what} {} does not exist", path.display())))
    }
}

fn open_dataset(path: &Path) -> CliResult<Dataset> {
    existing(path, "dataset")?;
    Ok(load_dataset(path)?)
}

fn open_model(path: &Path) -> CliResult<ModelGraph> {
    existing(path, "model")?;
    Ok(load_model(path)?)
}

fn method_list(methods: &[MethodId], config: &MethodConfig) -> Vec<attrex::attribution::Method> {
    explainers(methods, config)
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenData {
    /// Number of scenes.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    /// Share of single-class scenes covering every pixel.
    #[arg(long, default_value_t = 0.2)]
    pub single_class_fraction: f64,
    #[arg(long, default_value_t = 0.05)]
    pub noise_std: f64,
    /// Full scene configuration; only settable from `--config`.
    #[arg(skip)]
    #[serde(default)]
    pub scene: Option<SceneConfig>,
}

pub fn gen_data(g: &Global, a: &GenData) -> CliResult {
    let out = required_out(g)?;
    let seed = required_seed(g)?;
    let cfg = a.scene.clone().unwrap_or(SceneConfig {
        height: a.height,
        width: a.width,
        num_classes: a.classes,
        single_class_fraction: a.single_class_fraction,
        noise_std: a.noise_std,
        ..SceneConfig::default()
    });
    let data = generate_dataset(&cfg, a.n, seed)?;
    save_dataset(&data, out)?;
    let single = data.scenes.iter().filter(|s| s.is_single_class()).count();
    let mut counts = vec![0usize; cfg.num_classes];
    for s in &data.scenes {
        for (c, &l) in s.labels.iter().enumerate() {
            counts[c] += usize::from(l);
        }
    }
    println!("scenes: {}", data.len());
    println!("single-class scenes: {single}");
    println!("class counts: {counts:?}");
    println!("dataset id: {:016x}", data.id());
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Train {
    /// Training dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out dataset for the reported macro-F1.
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
}

pub fn train(g: &Global, a: &Train) -> CliResult {
    let out = required_out(g)?;
    let seed = required_seed(g)?;
    let data = open_dataset(&a.data)?;
    let eval = a.eval_data.as_deref().map(open_dataset).transpose()?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch: a.batch,
        momentum: a.momentum,
        seed: 0,
    };
    let (model, log) = train_stage(&data, eval.as_ref(), &cfg, seed)?;
    fs::create_dir_all(out).map_err(Error::from)?;
    save_model(&model, &out.join("model.bin"))?;
    write_json(&log, &out.join("train_log.json"))?;
    println!("final loss: {:.5}", log.epoch_losses.last().copied().unwrap_or(f64::NAN));
    println!("train macro-F1: {:.4}", log.train_macro_f1);
    if let Some(f1) = log.eval_macro_f1 {
        println!("eval macro-F1: {f1:.4}");
    }
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Explain {
    #[arg(long)]
    pub data: PathBuf,
    /// Model file written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Comma-separated method ids.
    #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = ALL_METHODS)]
    pub methods: Vec<MethodId>,
    /// Number of dataset samples to explain.
    #[arg(long, default_value_t = 128)]
    pub n: usize,
    #[arg(skip)]
    #[serde(default)]
    pub method_config: MethodConfig,
}

pub fn explain(g: &Global, a: &Explain) -> CliResult {
    let out = required_out(g)?;
    let seed = required_seed(g)?;
    let data = open_dataset(&a.data)?;
    let model = open_model(&a.model)?;
    let methods = method_list(&a.methods, &a.method_config);
    let ex: Vec<&dyn Explainer> = methods.iter().map(|m| m as &dyn Explainer).collect();
    let samples = eval_samples(&data, a.n);
    let archive = explain_stage(&model, &samples, &ex, data.id(), seed)?;
    save_archive(&archive, out)?;
    println!("maps: {} ({} samples, {} methods)", archive.entries.len(), samples.len(), ex.len());
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Evaluate {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Archive written by `explain`; missing maps are recomputed.
    #[arg(long)]
    pub attributions: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = ALL_METHODS)]
    pub methods: Vec<MethodId>,
    #[arg(long, value_delimiter = ',', value_parser = parse_metric, default_value = ALL_METRICS)]
    pub metrics: Vec<MetricId>,
    #[arg(long, default_value_t = 128)]
    pub n: usize,
    /// Fail unless every sample has ground-truth masks.
    #[arg(long)]
    pub require_masks: bool,
    /// Evaluate as if the dataset had no ground-truth masks.
    #[arg(long)]
    pub drop_masks: bool,
    #[arg(skip)]
    #[serde(default)]
    pub method_config: MethodConfig,
    #[arg(skip)]
    #[serde(default)]
    pub metric_config: MetricConfig,
}

pub fn evaluate(g: &Global, a: &Evaluate) -> CliResult {
    let out = required_out(g)?;
    let seed = required_seed(g)?;
    let data = open_dataset(&a.data)?;
    let model = open_model(&a.model)?;
    let archive = match &a.attributions {
        Some(p) => {
            existing(p, "attribution archive")?;
            Some(load_archive(p)?)
        }
        None => None,
    };
    let mut samples = eval_samples(&data, a.n);
    if a.drop_masks {
        samples.iter_mut().for_each(|s: &mut EvalSample| s.masks = None);
    }
    if a.require_masks && samples.iter().any(|s| s.masks.is_none()) {
        return Err(CliError::Failed(Error::Precondition("dataset has no ground-truth masks".into()).to_string()));
    }
    let methods = method_list(&a.methods, &a.method_config);
    let ex: Vec<&dyn Explainer> = methods.iter().map(|m| m as &dyn Explainer).collect();
    let metric_config = MetricConfig {
        seed: seed::derive(seed, "metrics", &[]),
        ..a.metric_config.clone()
    };
    let specs = metric_specs(&a.metrics, &metric_config);
    let records = evaluate_stage(&model, &samples, &ex, &specs, archive.as_ref(), data.id(), seed)?;
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent).map_err(Error::from)?;
    }
    write_records(&records, out)?;
    let failed = records.iter().filter(|r| !r.is_ok()).count();
    println!("records: {} ({failed} without a score)", records.len());
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Meta {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = ALL_METHODS)]
    pub methods: Vec<MethodId>,
    #[arg(long, value_delimiter = ',', value_parser = parse_metric, default_value = ALL_METRICS)]
    pub metrics: Vec<MetricId>,
    /// Samples per iteration.
    #[arg(long, default_value_t = 128)]
    pub n: usize,
    /// Perturbation plans per space and mode.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 3)]
    pub iterations: usize,
    /// Also meta-evaluate IROF under every baseline and ordering.
    #[arg(long)]
    pub irof_ablation: bool,
    #[arg(skip)]
    #[serde(default)]
    pub method_config: MethodConfig,
    #[arg(skip)]
    #[serde(default)]
    pub metric_config: MetricConfig,
    #[arg(skip)]
    #[serde(default)]
    pub calibration: CalibrationConfig,
}

pub fn meta(g: &Global, a: &Meta) -> CliResult {
    let out = required_out(g)?;
    let seed = required_seed(g)?;
    let data = open_dataset(&a.data)?;
    let model = open_model(&a.model)?;
    let methods = method_list(&a.methods, &a.method_config);
    let ex: Vec<&dyn Explainer> = methods.iter().map(|m| m as &dyn Explainer).collect();
    let metric_config = MetricConfig {
        seed: seed::derive(seed, "metrics", &[]),
        ..a.metric_config.clone()
    };
    let mut specs = metric_specs(&a.metrics, &metric_config);
    if a.irof_ablation {
        specs.extend(irof_variants(&metric_config));
    }
    let cfg = MetaConfig {
        n_samples: a.n,
        k_plans: a.k,
        iterations: a.iterations,
        calibration: a.calibration.clone(),
        seed: seed::derive(seed, "meta", &[]),
    };
    let samples = eval_samples(&data, data.len());
    let report = meta_stage(&model, &samples, &ex, &specs, &cfg, data.id())?;
    fs::create_dir_all(out).map_err(Error::from)?;
    save_meta_report(&report, &out.join("meta.json"))?;
    fs::write(out.join("meta.svg"), mc_chart_svg(&report)).map_err(Error::from)?;
    for m in &report.metrics {
        match report.mean_mc(m) {
            Some(v) => println!("{m}: MC {v:.3}"),
            None => println!("{m}: MC unavailable"),
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Report {
    /// Metric CSV written by `evaluate`.
    #[arg(long)]
    pub metrics_csv: Option<PathBuf>,
    /// `meta.json` written by `meta`.
    #[arg(long)]
    pub meta: Option<PathBuf>,
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn report(g: &Global, a: &Report) -> CliResult {
    let out = required_out(g)?;
    let mut echo = vec![("attrex".to_string(), env!("CARGO_PKG_VERSION").to_string())];
    let records = match &a.metrics_csv {
        Some(p) if p.exists() => {
            echo.push(("metric records".into(), file_name(p)));
            Some(read_records(p)?)
        }
        Some(p) => {
            eprintln!("warning: {} not found, report has gaps", p.display());
            None
        }
        None => None,
    };
    let meta = match &a.meta {
        Some(p) if p.exists() => {
            echo.push(("meta-evaluation".into(), file_name(p)));
            Some(load_meta_report(p)?)
        }
        Some(p) => {
            eprintln!("warning: {} not found, report has gaps", p.display());
            None
        }
        None => None,
    };
    if records.is_none() && meta.is_none() {
        eprintln!("warning: no inputs given, report has gaps only");
    }
    let files = build_report(&ReportInputs {
        records: records.as_deref(),
        meta: meta.as_ref(),
        echo,
    });
    write_files(out, &files)?;
    println!("wrote {} files to {}", files.len(), out.display());
    Ok(())
}
