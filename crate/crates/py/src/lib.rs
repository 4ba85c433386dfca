//! Python module `hybrid_dyn`: models, corpus, training, gradient checks and
//! Verilog-A export.

use std::collections::BTreeMap;
use std::path::PathBuf;

use hybrid_core::dataset::{Corpus, CorpusConfig, Excitation, NormStats, Waveform};
use hybrid_core::models::{forward_sequence, init_params, Checkpoint, ModelConfig, ModelKind, Sequence};
use hybrid_core::params::ParamStore;
use hybrid_core::spline::fit_natural_cubic;
use hybrid_core::train::{
    discrete_backprop_grad, evaluate, finite_diff_grad, hybrid_adjoint_backward, run_gradcheck, train,
    GradCheckConfig, TrainConfig,
};
use hybrid_core::veriloga::{export_veriloga, parse_subset, roundtrip_verify, simulate_subset};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: hybrid_core::Error) -> PyErr {
    match e {
        hybrid_core::Error::Io(_) | hybrid_core::Error::Json(_) => PyValueError::new_err(e.to_string()),
        e if e.is_divergence() => PyRuntimeError::new_err(e.to_string()),
        hybrid_core::Error::NonConvergent { .. } => PyRuntimeError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for hybrid_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

/// Parse JSON text with Python's `json` module.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn kind(name: &str) -> PyResult<ModelKind> {
    name.parse().py()
}

fn waveform(times: Vec<f64>, u: Vec<f64>, y: Option<Vec<f64>>) -> PyResult<Waveform> {
    let y = y.unwrap_or_else(|| vec![0.0; u.len()]);
    Waveform::new("py", times, u, y, 0.0, 1.0).py()
}

/// A model kind, its parameters and the normalization of its inputs/outputs.
#[pyclass(module = "hybrid_dyn")]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    norm: NormStats,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (kind, hidden=None, field_hidden=None, readout_hidden=16, substeps=4, seed=0))]
    fn new(
        kind: &str,
        hidden: Option<usize>,
        field_hidden: Option<Vec<usize>>,
        readout_hidden: usize,
        substeps: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let k = self::kind(kind)?;
        let base = ModelConfig::new(k);
        let config = ModelConfig {
            hidden: hidden.unwrap_or(base.hidden),
            field_hidden: field_hidden.unwrap_or(base.field_hidden.clone()),
            readout_hidden,
            substeps,
            ..base
        };
        let params = init_params(&config, seed).py()?;
        Ok(Self { config, params, norm: NormStats::default() })
    }

    /// Load a checkpoint written by `train` or `save`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let c = Checkpoint::load(&path).py()?;
        Ok(Self { config: c.model, params: c.params, norm: c.norm })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        Checkpoint::new(self.config.clone(), self.norm, self.params.clone()).py()?.save(&path).py()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.config.kind.name()
    }

    #[getter]
    fn hidden(&self) -> usize {
        self.config.hidden
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.params.total_len()
    }

    /// `{group: flat values}`.
    fn params(&self) -> BTreeMap<String, Vec<f64>> {
        self.params.iter().map(|(k, g)| (k.to_string(), g.values.clone())).collect()
    }

    fn set_params(&mut self, groups: BTreeMap<String, Vec<f64>>) -> PyResult<()> {
        let mut next = self.params.clone();
        for (name, values) in groups {
            let g = next.group_mut(&name).py()?;
            if g.values.len() != values.len() {
                return Err(PyValueError::new_err(format!(
                    "group `{name}` holds {} values, got {}",
                    g.values.len(),
                    values.len()
                )));
            }
            g.values = values;
        }
        self.params = next;
        Ok(())
    }

    /// Outputs `o_1..o_N` on normalized data.
    fn forward(&self, times: Vec<f64>, u: Vec<f64>) -> PyResult<Vec<f64>> {
        let seq = Sequence::from_waveform(&waveform(times, u, None)?).py()?;
        let out = forward_sequence(&self.config, &self.params, &seq).py()?;
        Ok(out.outputs.into_iter().map(|o| o[0]).collect())
    }

    /// `forward` in physical units, using the model's normalization.
    fn predict(&self, times: Vec<f64>, u: Vec<f64>) -> PyResult<Vec<f64>> {
        let w = self.norm.normalize(&waveform(times, u, None)?);
        Ok(self.forward(w.times, w.u)?.into_iter().map(|v| self.norm.denorm_y(v)).collect())
    }

    /// `(loss, {group: gradient})` by `adjoint`, `discrete` or `fd`.
    #[pyo3(signature = (times, u, y, method="adjoint", fd_step=1e-5))]
    fn gradient(
        &self,
        times: Vec<f64>,
        u: Vec<f64>,
        y: Vec<f64>,
        method: &str,
        fd_step: f64,
    ) -> PyResult<(f64, BTreeMap<String, Vec<f64>>)> {
        let seq = Sequence::from_waveform(&waveform(times, u, Some(y))?).py()?;
        let (c, p) = (&self.config, &self.params);
        let report = match method {
            "adjoint" => hybrid_adjoint_backward(c, p, &seq),
            "discrete" => discrete_backprop_grad(c, p, &seq),
            "fd" => finite_diff_grad(c, p, &seq, fd_step),
            other => return Err(PyValueError::new_err(format!("unknown gradient method `{other}`"))),
        }
        .py()?;
        let grads = report.grads.iter().map(|(k, g)| (k.to_string(), g.values.clone())).collect();
        Ok((report.loss, grads))
    }

    fn export_veriloga(&self) -> PyResult<String> {
        export_veriloga(&self.config, &self.params, &self.norm).py()
    }

    /// Round-trip report for one period of `amplitude * sin(2 pi f t)`.
    #[pyo3(signature = (amplitude=1.5, frequency=0.5, timestep=None))]
    fn verify_export<'py>(
        &self,
        py: Python<'py>,
        amplitude: f64,
        frequency: f64,
        timestep: Option<f64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let dt = timestep.unwrap_or(1.0 / (512.0 * frequency));
        let ex = Excitation { amplitude, frequency };
        let r = roundtrip_verify(&self.config, &self.params, &self.norm, &ex, dt).py()?;
        to_py(py, &r)
    }

    fn __repr__(&self) -> String {
        format!("Model(kind='{}', hidden={}, params={})", self.config.kind, self.config.hidden, self.params.total_len())
    }
}

/// Simulated diode-RC waveforms with a train/test split.
#[pyclass(module = "hybrid_dyn", name = "Corpus")]
pub struct PyCorpus {
    inner: Corpus,
}

#[pymethods]
impl PyCorpus {
    #[staticmethod]
    #[pyo3(signature = (count=160, samples=128, seed=0))]
    fn generate(count: usize, samples: usize, seed: u64) -> PyResult<Self> {
        let cfg = CorpusConfig { count, samples, seed, ..CorpusConfig::default() };
        Ok(Self { inner: Corpus::generate(&cfg).py()? })
    }

    /// From a manifest file or the directory holding it.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: Corpus::load(&path).py()? })
    }

    /// Write CSVs and the manifest; returns the manifest path.
    fn write(&self, dir: PathBuf) -> PyResult<PathBuf> {
        self.inner.write(&dir).py()
    }

    fn __len__(&self) -> usize {
        self.inner.waveforms.len()
    }

    #[getter]
    fn train_indices(&self) -> Vec<usize> {
        self.inner.split.train.clone()
    }

    #[getter]
    fn test_indices(&self) -> Vec<usize> {
        self.inner.split.test.clone()
    }

    /// Raw (physical-unit) waveform `i` as a dict.
    fn waveform<'py>(&self, py: Python<'py>, i: usize) -> PyResult<Bound<'py, PyDict>> {
        let w = self
            .inner
            .waveforms
            .get(i)
            .ok_or_else(|| PyValueError::new_err(format!("waveform index {i} out of range")))?;
        let d = PyDict::new(py);
        d.set_item("id", &w.id)?;
        d.set_item("times", &w.times)?;
        d.set_item("u", &w.u)?;
        d.set_item("y", &w.y)?;
        d.set_item("amplitude", w.amplitude)?;
        d.set_item("frequency", w.frequency)?;
        Ok(d)
    }

    fn norm<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.norm)
    }
}

/// Train in place (keeping the best test checkpoint); returns the history.
#[pyfunction]
#[pyo3(signature = (model, corpus, epochs=50, learning_rate=1e-3, batch_size=1, seed=0))]
fn train_model<'py>(
    py: Python<'py>,
    model: &mut Model,
    corpus: &PyCorpus,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = TrainConfig { epochs, batch_size, seed, ..TrainConfig::default() };
    cfg.adam.learning_rate = learning_rate;
    let c = &corpus.inner;
    let out = py
        .detach(|| train(&cfg, &model.config, model.params.clone(), &c.train(), &c.test()))
        .py()?;
    model.params = out.best_params;
    model.norm = c.norm;
    let d = PyDict::new(py);
    d.set_item("best_epoch", out.best_epoch)?;
    d.set_item("best_test_nrmse", out.best_test_nrmse)?;
    d.set_item("history", to_py(py, &out.history)?)?;
    Ok(d)
}

/// Mean and per-waveform NRMSE over `split` (`train` or `test`).
#[pyfunction]
#[pyo3(signature = (model, corpus, split="test"))]
fn evaluate_model<'py>(py: Python<'py>, model: &Model, corpus: &PyCorpus, split: &str) -> PyResult<Bound<'py, PyAny>> {
    let c = &corpus.inner;
    let indices = match split {
        "train" => &c.split.train,
        "test" => &c.split.test,
        other => return Err(PyValueError::new_err(format!("split must be train or test, got `{other}`"))),
    };
    let set: Vec<_> = indices.iter().map(|&i| model.norm.normalize(&c.waveforms[i])).collect();
    let e = evaluate(&model.config, &model.params, &set).py()?;
    to_py(py, &e)
}

#[pyfunction]
#[pyo3(signature = (models=20, seed=0))]
fn gradcheck(py: Python<'_>, models: usize, seed: u64) -> PyResult<Bound<'_, PyAny>> {
    let cfg = GradCheckConfig { models, seed, ..GradCheckConfig::default() };
    let r = py.detach(|| run_gradcheck(&cfg)).py()?;
    to_py(py, &r)
}

/// Natural cubic spline through `(times, values)`: `(S(t), S'(t), S''(t))`.
#[pyfunction]
fn spline_eval(times: Vec<f64>, values: Vec<f64>, t: f64) -> PyResult<(f64, f64, f64)> {
    let s = fit_natural_cubic(&times, &[values]).py()?.eval(t).py()?;
    Ok((s.value[0], s.d1[0], s.d2[0]))
}

/// Interpret Verilog-A source (the exported subset) driven by `u(t)`.
#[pyfunction]
fn simulate_veriloga(source: &str, times: Vec<f64>, u: Vec<f64>, timestep: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let m = parse_subset(source).py()?;
    let out = simulate_subset(&m, &waveform(times, u, None)?, timestep).py()?;
    Ok((out.times, out.y))
}

#[pymodule]
fn hybrid_dyn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<PyCorpus>()?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_model, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(spline_eval, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_veriloga, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let times: Vec<f64> = (0..10).map(|k| 0.2 * k as f64).collect();
        let u = times.iter().map(|t| t.sin()).collect();
        let y = times.iter().map(|t| 0.3 * t.cos()).collect();
        (times, u, y)
    }

    #[test]
    fn model_round_trips_through_a_checkpoint() {
        let m = Model::new("node-rnn", Some(3), Some(vec![5]), 4, 4, 1).unwrap();
        let (times, u, _) = sample();
        let out = m.forward(times.clone(), u.clone()).unwrap();
        assert_eq!(out.len(), 9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(path.clone()).unwrap();
        assert_eq!(Model::load(path).unwrap().forward(times, u).unwrap(), out);
        assert!(Model::new("gru", None, None, 4, 4, 0).is_err());
    }

    #[test]
    fn gradient_methods_agree() {
        let m = Model::new("ncde-rnn", Some(3), Some(vec![5]), 4, 8, 2).unwrap();
        let (times, u, y) = sample();
        let (_, d) = m.gradient(times.clone(), u.clone(), y.clone(), "discrete", 1e-5).unwrap();
        let (_, a) = m.gradient(times.clone(), u.clone(), y.clone(), "adjoint", 1e-5).unwrap();
        for (name, g) in &d {
            let diff: f64 = g.iter().zip(&a[name]).map(|(x, z)| (x - z).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(diff <= 1e-3 * norm.max(1e-12), "{name}");
        }
        assert!(m.gradient(times, u, y, "magic", 1e-5).is_err());
    }

    #[test]
    fn set_params_checks_sizes() {
        let mut m = Model::new("ctrnn", Some(2), None, 3, 4, 0).unwrap();
        let mut groups = m.params();
        groups.get_mut("ctrnn").unwrap().pop();
        assert!(m.set_params(groups).is_err());
        let mut zeros = m.params();
        zeros.values_mut().for_each(|v| v.fill(0.0));
        m.set_params(zeros).unwrap();
        assert!(m.params().values().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn evaluation_returns_python_objects() {
        Python::attach(|py| {
            let corpus = PyCorpus::generate(10, 16, 0).unwrap();
            let m = Model::new("ncde", Some(3), Some(vec![4]), 4, 4, 0).unwrap();
            let e = evaluate_model(py, &m, &corpus, "test").unwrap();
            let nrmse: f64 = e.get_item("nrmse").unwrap().extract().unwrap();
            assert!(nrmse.is_finite() && nrmse > 0.0);
            assert!(evaluate_model(py, &m, &corpus, "val").is_err());
            let (s, _, d2) = spline_eval(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 0.0], 0.5).unwrap();
            assert_eq!((s, d2), (0.6875, -1.5));
        });
    }
}
