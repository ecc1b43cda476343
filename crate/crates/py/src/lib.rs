use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;

use p16::analysis::ScanFunction;
use p16::dataio::{load_model, save_model};
use p16::experiment::{cmd_compare, cmd_model_info, cmd_scan, cmd_tolerance, cmd_train, ExperimentConfig};
use p16::{LayerKind, Precision, Tensor};

create_exception!(p16py, P16Error, PyException);
create_exception!(p16py, UnstableError, P16Error);

fn err(e: p16::Error) -> PyErr {
    match e {
        p16::Error::Unstable(msg) => UnstableError::new_err(msg),
        other => P16Error::new_err(other.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| P16Error::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = value.py().import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| P16Error::new_err(e.to_string()))
}

fn parse_precision(name: &str) -> PyResult<Precision> {
    name.parse().map_err(|e: p16::Error| err(e))
}

fn config(value: Option<&Bound<'_, PyAny>>) -> PyResult<ExperimentConfig> {
    let cfg = match value {
        Some(v) => from_py(v)?,
        None => ExperimentConfig::default(),
    };
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

/// An IEEE 754 binary16 value with correctly rounded arithmetic.
#[pyclass(name = "Half", frozen, eq, from_py_object)]
#[derive(Clone, Copy, PartialEq)]
struct PyHalf(p16::Half);

#[pymethods]
impl PyHalf {
    /// Round a Python float to the nearest binary16 value (ties to even).
    #[new]
    fn new(x: f64) -> Self {
        PyHalf(p16::Half::from_f64(x))
    }

    #[staticmethod]
    fn from_bits(bits: u16) -> Self {
        PyHalf(p16::Half::from_bits(bits))
    }

    #[getter]
    fn bits(&self) -> u16 {
        self.0.to_bits()
    }

    fn is_nan(&self) -> bool {
        self.0.is_nan()
    }

    fn is_finite(&self) -> bool {
        self.0.is_finite()
    }

    fn is_infinite(&self) -> bool {
        self.0.is_infinite()
    }

    fn sqrt(&self) -> Self {
        PyHalf(self.0.sqrt())
    }

    fn exp(&self) -> Self {
        PyHalf(self.0.exp())
    }

    fn log(&self) -> Self {
        PyHalf(self.0.ln())
    }

    fn __float__(&self) -> f64 {
        self.0.to_f64()
    }

    fn __add__(&self, other: PyHalf) -> Self {
        PyHalf(self.0 + other.0)
    }

    fn __sub__(&self, other: PyHalf) -> Self {
        PyHalf(self.0 - other.0)
    }

    fn __mul__(&self, other: PyHalf) -> Self {
        PyHalf(self.0 * other.0)
    }

    fn __truediv__(&self, other: PyHalf) -> Self {
        PyHalf(self.0 / other.0)
    }

    fn __neg__(&self) -> Self {
        PyHalf(-self.0)
    }

    fn __abs__(&self) -> Self {
        PyHalf(self.0.abs())
    }

    fn __repr__(&self) -> String {
        format!("Half({:?}, bits=0x{:04x})", self.0.to_f64(), self.0.to_bits())
    }
}

/// A feed-forward network whose storage and arithmetic follow one precision.
#[pyclass(name = "Model")]
struct PyModel(p16::Model);

#[pymethods]
impl PyModel {
    /// `architecture` is a list of layer dicts such as
    /// `{"type": "dense", "inputs": 784, "outputs": 10}`.
    #[new]
    #[pyo3(signature = (architecture, input_shape, precision = "pure16", seed = 42))]
    fn new(architecture: &Bound<'_, PyAny>, input_shape: Vec<usize>, precision: &str, seed: u64) -> PyResult<Self> {
        let kinds: Vec<LayerKind> = from_py(architecture)?;
        let model = p16::Model::new(&input_shape, &kinds, parse_precision(precision)?, seed).map_err(err)?;
        Ok(PyModel(model))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        load_model(&path).map(PyModel).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_model(&self.0, &path).map_err(err)
    }

    #[getter]
    fn precision(&self) -> &'static str {
        self.0.precision().name()
    }

    #[getter]
    fn input_shape(&self) -> Vec<usize> {
        self.0.input_shape().to_vec()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.0.param_count()
    }

    fn cast(&self, precision: &str) -> PyResult<Self> {
        Ok(PyModel(self.0.cast(parse_precision(precision)?)))
    }

    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.summary())
    }

    /// Class probabilities for a batch of flattened samples.
    fn predict(&self, samples: Vec<Vec<f32>>) -> PyResult<Vec<Vec<f32>>> {
        let width: usize = self.0.input_shape().iter().product();
        let mut shape = vec![samples.len()];
        shape.extend_from_slice(self.0.input_shape());
        let mut flat = Vec::with_capacity(samples.len() * width);
        for s in &samples {
            if s.len() != width {
                return Err(P16Error::new_err(format!("sample has {} values, expected {width}", s.len())));
            }
            flat.extend_from_slice(s);
        }
        let x = Tensor::from_f32(&shape, &flat, self.0.precision()).map_err(err)?;
        let (p, _) = self.0.predict(&x).map_err(err)?;
        let values = p.to_vec();
        let classes = if samples.is_empty() { 0 } else { values.len() / samples.len() };
        Ok(values.chunks(classes.max(1)).map(<[f32]>::to_vec).collect())
    }

    fn __repr__(&self) -> String {
        format!("Model(precision={}, params={})", self.0.precision().name(), self.0.param_count())
    }
}

/// Round `x` to the nearest binary16 value and return it as a float.
#[pyfunction]
fn round_to_half(x: f64) -> f64 {
    p16::b16::round_to_half(x).to_f64()
}

/// Train one model. Returns the per-epoch history and the written paths.
#[pyfunction]
#[pyo3(signature = (config = None))]
fn train<'py>(py: Python<'py>, config: Option<&Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = self::config(config)?;
    let out = py.detach(|| cmd_train(&cfg)).map_err(err)?;
    #[derive(Serialize)]
    struct Out<'a> {
        history: &'a [p16::dataio::EpochMetrics],
        metrics_csv: PathBuf,
        metrics_json: PathBuf,
        model: PathBuf,
    }
    to_py(
        py,
        &Out { history: &out.history, metrics_csv: out.metrics_csv, metrics_json: out.metrics_json, model: out.model },
    )
}

/// Train Pure32 and Pure16 side by side and report accuracy and tolerance.
#[pyfunction]
#[pyo3(signature = (config = None))]
fn compare<'py>(py: Python<'py>, config: Option<&Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = self::config(config)?;
    let cmp = py.detach(|| cmd_compare(&cfg)).map_err(err)?;
    #[derive(Serialize)]
    struct Run<'a> {
        precision: Precision,
        history: &'a [p16::dataio::EpochMetrics],
        unstable: Option<String>,
    }
    #[derive(Serialize)]
    struct Out<'a> {
        runs: Vec<Run<'a>>,
        tolerance: &'a [p16::experiment::EpochTolerance],
        acc_gap: Option<f64>,
    }
    let runs = cmp
        .runs
        .iter()
        .map(|t| Run {
            precision: t.model().precision(),
            history: t.history(),
            unstable: t.instability().map(|r| r.to_string()),
        })
        .collect();
    to_py(py, &Out { runs, tolerance: &cmp.tolerance, acc_gap: cmp.acc_gap() })
}

/// Evaluate a function on every finite binary16 input against binary32.
#[pyfunction]
#[pyo3(signature = (function, keep_signed_zero = false, output_dir = PathBuf::from("runs")))]
fn scan<'py>(
    py: Python<'py>,
    function: &str,
    keep_signed_zero: bool,
    output_dir: PathBuf,
) -> PyResult<Bound<'py, PyAny>> {
    let f: ScanFunction = function.parse().map_err(err)?;
    let r = py.detach(|| cmd_scan(f, !keep_signed_zero, &output_dir)).map_err(err)?;
    to_py(py, &r)
}

/// Describe one or two model files; with two, also their size ratios.
#[pyfunction]
fn model_info<'py>(py: Python<'py>, paths: Vec<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let (infos, ratio) = cmd_model_info(&paths).map_err(err)?;
    #[derive(Serialize)]
    struct Out {
        models: Vec<p16::experiment::ModelInfo>,
        payload_ratio: Option<f64>,
        file_ratio: Option<f64>,
    }
    to_py(py, &Out { models: infos, payload_ratio: ratio.map(|r| r.0), file_ratio: ratio.map(|r| r.1) })
}

/// Compare two saved models on the configured test set.
#[pyfunction]
#[pyo3(signature = (reference, other, config = None))]
fn tolerance<'py>(
    py: Python<'py>,
    reference: PathBuf,
    other: PathBuf,
    config: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = self::config(config)?;
    let r = py.detach(|| cmd_tolerance(&reference, &other, &cfg)).map_err(err)?;
    to_py(py, &r)
}

#[pymodule]
fn p16py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("P16Error", m.py().get_type::<P16Error>())?;
    m.add("UnstableError", m.py().get_type::<UnstableError>())?;
    m.add_class::<PyHalf>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(round_to_half, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(scan, m)?)?;
    m.add_function(wrap_pyfunction!(model_info, m)?)?;
    m.add_function(wrap_pyfunction!(tolerance, m)?)?;
    Ok(())
}
