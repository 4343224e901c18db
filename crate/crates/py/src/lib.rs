//! Python bindings: scenes, models, explainers, metrics and meta-evaluation.
//!
//! Tensors cross the boundary as flat row-major lists plus a shape.

use std::path::PathBuf;

use attrex::attribution::{AttributionMap, ExplainContext, Explainer, Method, MethodConfig, MethodId};
use attrex::meta::{self, MetaConfig, Mode};
use attrex::metrics::{evaluate_one, randomized_reference, MetricConfig, MetricId, MetricSpec, ScoreInputs};
use attrex::model::{load_model, save_model, ModelGraph, TrainConfig};
use attrex::numerics::{self, Tensor};
use attrex::pipeline::{eval_samples, meta_stage, metric_specs, train_stage};
use attrex::scene::{generate_dataset, load_dataset, save_dataset, Dataset, SceneConfig};
use attrex::{seed, Error};
use pyo3::exceptions::{PyFileNotFoundError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::MissingInput(_) => PyFileNotFoundError::new_err(e.to_string()),
        Error::ShapeMismatch(_) | Error::InvalidArgument(_) | Error::InvalidClass { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for attrex::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn parse_mode(s: &str) -> PyResult<Mode> {
    match s {
        "minor" => Ok(Mode::Minor),
        "disruptive" => Ok(Mode::Disruptive),
        _ => Err(PyValueError::new_err(format!("mode must be 'minor' or 'disruptive', got '{s}'"))),
    }
}

fn parse_method(s: &str) -> PyResult<Method> {
    let id: MethodId = s.parse().py()?;
    Ok(Method::new(id, &MethodConfig::default()))
}

#[pyclass(name = "Tensor", module = "attrex_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyTensor {
    inner: Tensor,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: Tensor::new(shape, data).py()? })
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

impl From<Tensor> for PyTensor {
    fn from(inner: Tensor) -> Self {
        Self { inner }
    }
}

#[pyclass(name = "Dataset", module = "attrex_py", frozen)]
pub struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    /// Synthetic scenes. `config_json` holds any scene settings to override.
    #[staticmethod]
    #[pyo3(signature = (n, seed, config_json=None))]
    fn generate(py: Python<'_>, n: usize, seed: u64, config_json: Option<&str>) -> PyResult<Self> {
        let config: SceneConfig = match config_json {
            Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => SceneConfig::default(),
        };
        let inner = py.detach(|| generate_dataset(&config, n, seed)).py()?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: load_dataset(&dir).py()? })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        save_dataset(&self.inner, &dir).py()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn id(&self) -> u64 {
        self.inner.id()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.config.num_classes
    }

    fn scene_id(&self, i: usize) -> PyResult<u64> {
        Ok(self.scene(i)?.id)
    }

    fn image(&self, i: usize) -> PyResult<PyTensor> {
        Ok(self.scene(i)?.image.clone().into())
    }

    fn labels(&self, i: usize) -> PyResult<Vec<bool>> {
        Ok(self.scene(i)?.labels.clone())
    }

    fn mask(&self, i: usize, class_index: usize) -> PyResult<PyTensor> {
        let s = self.scene(i)?;
        if class_index >= s.num_classes() {
            return Err(py_err(Error::InvalidClass { index: class_index, num_classes: s.num_classes() }));
        }
        Ok(s.mask(class_index).into())
    }
}

impl PyDataset {
    fn scene(&self, i: usize) -> PyResult<&attrex::scene::Scene> {
        self.inner
            .scenes
            .get(i)
            .ok_or_else(|| PyValueError::new_err(format!("scene {i} out of range for {} scenes", self.inner.len())))
    }
}

#[pyclass(name = "Model", module = "attrex_py", frozen)]
pub struct PyModel {
    inner: ModelGraph,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn tiny_cnn(input_shape: [usize; 3], num_classes: usize, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: ModelGraph::tiny_cnn(input_shape, num_classes, seed).py()? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: load_model(&path).py()? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_model(&self.inner, &path).py()
    }

    #[getter]
    fn input_shape(&self) -> [usize; 3] {
        self.inner.input_shape()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn logits(&self, x: &PyTensor) -> PyResult<Vec<f64>> {
        self.inner.logits(&x.inner).py()
    }

    fn probabilities(&self, x: &PyTensor) -> PyResult<Vec<f64>> {
        self.inner.probabilities(&x.inner).py()
    }

    /// Multi-label prediction at probability 0.5.
    fn predict(&self, x: &PyTensor) -> PyResult<Vec<bool>> {
        Ok(self.inner.predict_multilabel(&x.inner).py()?.labels)
    }

    fn randomized(&self, seed: u64) -> Self {
        Self { inner: self.inner.randomize_parameters(seed) }
    }

    fn perturbed(&self, std: f64, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: self.inner.perturb_parameters(std, seed).py()? })
    }
}

/// Trains a fresh TinyCNN on `data`; returns the model, epoch losses and training macro-F1.
#[pyfunction]
#[pyo3(signature = (data, seed, epochs=8, lr=0.1, batch=16))]
fn train(py: Python<'_>, data: &PyDataset, seed: u64, epochs: usize, lr: f64, batch: usize) -> PyResult<(PyModel, Vec<f64>, f64)> {
    let cfg = TrainConfig {
        epochs,
        lr,
        batch,
        ..TrainConfig::default()
    };
    let (model, log) = py.detach(|| train_stage(&data.inner, None, &cfg, seed)).py()?;
    Ok((PyModel { inner: model }, log.epoch_losses, log.train_macro_f1))
}

/// `[H,W]` attribution map of one method for one class.
#[pyfunction]
#[pyo3(signature = (model, x, class_index, method, seed=0, dataset_id=0, sample_id=0))]
fn explain(
    py: Python<'_>,
    model: &PyModel,
    x: &PyTensor,
    class_index: usize,
    method: &str,
    seed: u64,
    dataset_id: u64,
    sample_id: u64,
) -> PyResult<PyTensor> {
    let m = parse_method(method)?;
    let ctx = ExplainContext { dataset_id, sample_id, seed };
    let map = py.detach(|| m.explain(&model.inner, &x.inner, class_index, &ctx)).py()?;
    Ok(map.values.into())
}

/// Scores one map with one metric. Returns `(raw, oriented)`; `oriented` is
/// `None` for MPRT, which is only oriented across a set of methods.
#[pyfunction]
#[pyo3(signature = (metric, model, x, class_index, attribution, method, masks=None, seed=0, sample_id=0))]
fn score(
    py: Python<'_>,
    metric: &str,
    model: &PyModel,
    x: &PyTensor,
    class_index: usize,
    attribution: &PyTensor,
    method: &str,
    masks: Option<Vec<Vec<bool>>>,
    seed: u64,
    sample_id: u64,
) -> PyResult<(f64, Option<f64>)> {
    let kind: MetricId = metric.parse().py()?;
    let explainer = parse_method(method)?;
    let config = MetricConfig { seed, ..MetricConfig::default() };
    let spec = MetricSpec::new(kind, &config);
    py.detach(|| {
        let randomized = randomized_reference(&model.inner, config.seed);
        let attr = AttributionMap::new(attribution.inner.clone(), class_index, explainer.id());
        let inputs = ScoreInputs {
            model: &model.inner,
            randomized: &randomized,
            x: &x.inner,
            masks: masks.as_deref(),
            class: class_index,
            explainer: &explainer,
            attr: &attr,
            ctx: ExplainContext { dataset_id: 0, sample_id, seed },
        };
        evaluate_one(&spec, &inputs).map(|s| (s.raw, s.oriented))
    })
    .py()
}

/// Runs the meta-evaluation and returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (model, data, methods, metrics, n_samples=128, k_plans=5, iterations=3, seed=0))]
#[allow(clippy::too_many_arguments)]
fn meta_evaluate(
    py: Python<'_>,
    model: &PyModel,
    data: &PyDataset,
    methods: Vec<String>,
    metrics: Vec<String>,
    n_samples: usize,
    k_plans: usize,
    iterations: usize,
    seed: u64,
) -> PyResult<String> {
    let explainers = methods.iter().map(|m| parse_method(m)).collect::<PyResult<Vec<_>>>()?;
    let ids = metrics.iter().map(|m| m.parse::<MetricId>()).collect::<attrex::Result<Vec<_>>>().py()?;
    let specs = metric_specs(&ids, &MetricConfig { seed, ..MetricConfig::default() });
    let cfg = MetaConfig {
        n_samples,
        k_plans,
        iterations,
        seed,
        ..MetaConfig::default()
    };
    let report = py
        .detach(|| {
            let ex: Vec<&dyn Explainer> = explainers.iter().map(|m| m as &dyn Explainer).collect();
            let samples = eval_samples(&data.inner, data.inner.len());
            meta_stage(&model.inner, &samples, &ex, &specs, &cfg, data.inner.id())
        })
        .py()?;
    serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pyfunction]
fn iac(unperturbed: Vec<f64>, perturbed: Vec<Vec<f64>>, mode: &str) -> PyResult<f64> {
    meta::iac(&unperturbed, &perturbed, parse_mode(mode)?).py()
}

#[pyfunction]
fn iec(unperturbed: Vec<Vec<f64>>, perturbed: Vec<Vec<Vec<f64>>>, mode: &str) -> PyResult<f64> {
    meta::iec(&unperturbed, &perturbed, parse_mode(mode)?).py()
}

#[pyfunction]
fn mc_score(iac_nr: f64, iac_ar: f64, iec_nr: f64, iec_ar: f64) -> f64 {
    meta::mc_score(iac_nr, iac_ar, iec_nr, iec_ar)
}

#[pyfunction]
fn pearson(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    numerics::pearson_corr(&a, &b).py()
}

/// Two-sided paired test; returns `(statistic, p_value)`.
#[pyfunction]
fn wilcoxon(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64)> {
    let r = numerics::wilcoxon_signed_rank(&a, &b).py()?;
    Ok((r.statistic, r.p_value))
}

#[pyfunction]
#[pyo3(signature = (a, b, data_range=1.0))]
fn ssim(a: &PyTensor, b: &PyTensor, data_range: f64) -> PyResult<f64> {
    numerics::ssim(&a.inner, &b.inner, data_range).py()
}

#[pyfunction]
#[pyo3(signature = (values, bins=numerics::stats::DEFAULT_HISTOGRAM_BINS))]
fn histogram_entropy(values: Vec<f64>, bins: usize) -> PyResult<f64> {
    numerics::histogram_entropy(&values, bins).py()
}

#[pyfunction]
fn gini(values: Vec<f64>) -> PyResult<f64> {
    numerics::gini_index(&values).py()
}

#[pyfunction]
#[pyo3(signature = (base, label, path=Vec::new()))]
fn derive_seed(base: u64, label: &str, path: Vec<u64>) -> u64 {
    seed::derive(base, label, &path)
}

#[pymodule]
fn attrex_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(explain, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(meta_evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(iac, m)?)?;
    m.add_function(wrap_pyfunction!(iec, m)?)?;
    m.add_function(wrap_pyfunction!(mc_score, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(wilcoxon, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(histogram_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(gini, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    Ok(())
}
