//! Python bindings: base-model sets, the sampler, width customization and
//! whole experiment runs.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use splitmix::bench::{self, ExperimentConfig};
use splitmix::nn::{count_macs, count_params, ArchSpec, BnRoute, ModelGraph, Tensor, Width};
use splitmix::splitmix as sm;
use splitmix::Error;

fn py_err(e: Error) -> PyErr {
    if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for splitmix::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn preset(name: &str, input_side: usize, classes: usize) -> PyResult<ArchSpec> {
    ArchSpec::preset(name, input_side, classes).py()
}

fn route(lam: Option<f64>) -> PyResult<BnRoute> {
    match lam {
        None => Ok(BnRoute::Clean),
        Some(l) => BnRoute::Mix(l).validate().py(),
    }
}

/// Stack rows of flattened samples into a batch of the model's input shape.
fn batch(rows: Vec<Vec<f64>>, input: &[usize]) -> PyResult<Tensor> {
    let per: usize = input.iter().product();
    if let Some(bad) = rows.iter().find(|r| r.len() != per) {
        return Err(PyValueError::new_err(format!("sample has {} values, model expects {per}", bad.len())));
    }
    let mut shape = vec![rows.len()];
    shape.extend_from_slice(input);
    Tensor::from_vec(&shape, rows.concat()).py()
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.batch()).map(|i| t.row(i).to_vec()).collect()
}

/// Parameter and MAC counts of a preset architecture at `width`.
#[pyfunction]
#[pyo3(signature = (preset_name, width, input_side=28, classes=10))]
fn model_cost(preset_name: &str, width: f64, input_side: usize, classes: usize) -> PyResult<(usize, u64)> {
    let arch = preset(preset_name, input_side, classes)?;
    let w = Width::from_ratio(width, 1 << 10).py()?;
    let m = ModelGraph::skeleton(&arch, w).py()?;
    Ok((count_params(&m), count_macs(&m, &arch.input).py()?))
}

/// The cursor-walk base sampler.
#[pyclass(name = "SamplerState")]
struct PySampler(sm::SamplerState);

#[pymethods]
impl PySampler {
    #[new]
    fn new(m: usize, seed: u64) -> PyResult<Self> {
        if m == 0 {
            return Err(PyValueError::new_err("m must be >= 1"));
        }
        Ok(PySampler(sm::SamplerState::new(m, seed)))
    }

    fn sample(&mut self, n: usize) -> PyResult<Vec<usize>> {
        self.0.sample(n).py()
    }

    #[getter]
    fn cursor(&self) -> usize {
        self.0.cursor()
    }

    #[getter]
    fn perm(&self) -> Vec<usize> {
        self.0.perm().to_vec()
    }
}

/// `M` base models of width `1/M`.
#[pyclass(name = "BaseModelSet")]
struct PyBaseSet(sm::BaseModelSet);

#[pymethods]
impl PyBaseSet {
    /// Fresh bases of a preset architecture.
    #[staticmethod]
    #[pyo3(signature = (preset_name, r, seed=0, input_side=28, classes=10, dual_bn=false))]
    fn build(preset_name: &str, r: f64, seed: u64, input_side: usize, classes: usize, dual_bn: bool) -> PyResult<Self> {
        let mut arch = preset(preset_name, input_side, classes)?;
        arch.dual_bn = dual_bn;
        let m = (1.0 / r).round() as usize;
        let atom = Width::from_ratio(r, m.max(1)).py()?;
        Ok(PyBaseSet(sm::build_base_models(&arch, atom, seed).py()?))
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(PyBaseSet(sm::BaseModelSet::load(&dir).py()?))
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.0.save(&dir).py()
    }

    #[getter]
    fn m(&self) -> usize {
        self.0.m()
    }

    #[getter]
    fn input_shape(&self) -> Vec<usize> {
        self.0.arch.input.clone()
    }

    #[getter]
    fn order(&self) -> Vec<usize> {
        self.0.ids.clone()
    }

    fn widths(&self) -> Vec<f64> {
        self.0.widths().iter().map(|w| w.as_f64()).collect()
    }

    /// `(params, macs)` of the width-`width` mixture.
    fn cost(&self, width: f64) -> PyResult<(usize, u64)> {
        let w = Width::from_ratio(width, self.0.m()).py()?;
        let mixed = self.0.customize(w).py()?;
        Ok((mixed.params(), mixed.macs().py()?))
    }

    /// Logits of the width-`width` model; `lam` mixes the dual batch-norm
    /// branches (0 clean, 1 noised).
    #[pyo3(signature = (x, width, lam=None))]
    fn predict(&self, x: Vec<Vec<f64>>, width: f64, lam: Option<f64>) -> PyResult<Vec<Vec<f64>>> {
        let w = Width::from_ratio(width, self.0.m()).py()?;
        let x = batch(x, &self.0.arch.input)?;
        Ok(rows(&self.0.customize(w).py()?.predict(&x, route(lam)?).py()?))
    }

    /// Mean logits of the bases at the given positions.
    #[pyo3(signature = (ids, x, lam=None))]
    fn mix_predict(&self, ids: Vec<usize>, x: Vec<Vec<f64>>, lam: Option<f64>) -> PyResult<Vec<Vec<f64>>> {
        let x = batch(x, &self.0.arch.input)?;
        Ok(rows(&sm::mix_predict(&self.0, &ids, &x, route(lam)?).py()?))
    }

    fn __repr__(&self) -> String {
        format!("BaseModelSet(arch={}, m={})", self.0.arch.id, self.0.m())
    }
}

/// Run every method of a config file, write the result files and return the
/// final tables as `{method: [row, ...]}`.
#[pyfunction]
#[pyo3(signature = (config, overrides=Vec::new(), output_dir=None))]
fn run_experiment<'py>(
    py: Python<'py>,
    config: PathBuf,
    overrides: Vec<String>,
    output_dir: Option<PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = ExperimentConfig::load(&config, &overrides).py()?;
    if let Some(d) = output_dir {
        cfg.output_dir = d;
    }
    let bundle = py.detach(|| bench::run_experiment(&cfg)).py()?;
    bench::write_bundle(&bundle, &cfg.output_dir).py()?;
    let out = PyDict::new(py);
    for m in &bundle.methods {
        let table: Vec<Bound<'py, PyDict>> = m
            .final_table
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("width", r.width)?;
                d.set_item("acc", r.acc)?;
                d.set_item("macs", r.macs)?;
                d.set_item("params", r.params)?;
                d.set_item("budget_compatible", r.budget_compatible)?;
                Ok(d)
            })
            .collect::<PyResult<_>>()?;
        out.set_item(&m.name, table)?;
    }
    Ok(out)
}

/// Evaluate a trained run directory at `width` (and mixing weight `lam`).
#[pyfunction]
#[pyo3(signature = (run_dir, width, lam=None))]
fn customize(py: Python<'_>, run_dir: PathBuf, width: f64, lam: Option<f64>) -> PyResult<String> {
    py.detach(|| bench::cli::customize(&run_dir, width, lam, false)).py()
}

/// Text report of a results directory.
#[pyfunction]
fn report(dir: PathBuf) -> PyResult<String> {
    bench::render_report(&dir).py()
}

#[pymodule]
fn splitmix_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySampler>()?;
    m.add_class::<PyBaseSet>()?;
    m.add_function(wrap_pyfunction!(model_cost, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(customize, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    Ok(())
}
