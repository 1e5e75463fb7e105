use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use qnoddi::estimator::{self, EstimatorModel, LossMode, TrainConfig};
use qnoddi::evaluation::{self, ExperimentSpec, Protocol};
use qnoddi::noddi::{self, NoddiParams, PhantomDataset};
use qnoddi::scheme::{self, GradientDirection, MultiShellScheme, SubsampleSelection};
use qnoddi::shbasis::{self, DEFAULT_LAMBDA, DEFAULT_ORDER};
use qnoddi::{io, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        Error::Underdetermined | Error::Numerical(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn direction(v: (f64, f64, f64)) -> PyResult<GradientDirection> {
    GradientDirection::normalized(v.0, v.1, v.2).map_err(to_py)
}

/// Multi-shell gradient scheme.
#[pyclass(name = "Scheme", module = "qnoddi", skip_from_py_object)]
#[derive(Clone)]
struct PyScheme {
    inner: MultiShellScheme,
}

#[pymethods]
impl PyScheme {
    /// Electrostatically repelled directions per shell.
    #[staticmethod]
    #[pyo3(signature = (n_per_shell, b_values, seed = 0))]
    fn generate(n_per_shell: Vec<usize>, b_values: Vec<f64>, seed: u64) -> PyResult<Self> {
        let inner = scheme::generate_uniform_scheme(&n_per_shell, &b_values, seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self { inner: scheme::scheme_from_text(text).map_err(to_py)? })
    }

    fn to_text(&self) -> String {
        scheme::scheme_to_text(&self.inner)
    }

    #[getter]
    fn b_values(&self) -> Vec<f64> {
        self.inner.b_values()
    }

    #[getter]
    fn shell_sizes(&self) -> Vec<usize> {
        self.inner.shell_sizes()
    }

    fn __len__(&self) -> usize {
        self.inner.total_directions()
    }

    fn directions(&self, shell: usize) -> PyResult<Vec<(f64, f64, f64)>> {
        let s = self
            .inner
            .shells()
            .get(shell)
            .ok_or_else(|| PyValueError::new_err(format!("no shell {shell}")))?;
        Ok(s.directions().iter().map(|d| (d.x, d.y, d.z)).collect())
    }

    /// Per-shell indices of an evenly spread subsample.
    #[pyo3(signature = (n_keep, seed = 0))]
    fn uniform_subsample(&self, n_keep: Vec<usize>, seed: u64) -> PyResult<Vec<Vec<usize>>> {
        let sel = scheme::uniform_subsample(&self.inner, &n_keep, seed).map_err(to_py)?;
        Ok(sel.per_shell().to_vec())
    }

    /// Per-shell indices of a random subsample with counts drawn from inclusive ranges.
    #[pyo3(signature = (ranges, seed = 0))]
    fn random_subsample(&self, ranges: Vec<(usize, usize)>, seed: u64) -> PyResult<Vec<Vec<usize>>> {
        let sel = scheme::random_subsample(&self.inner, &ranges, seed).map_err(to_py)?;
        Ok(sel.per_shell().to_vec())
    }

    fn subset(&self, selection: Vec<Vec<usize>>) -> PyResult<Self> {
        let sel = SubsampleSelection::new(selection);
        Ok(Self { inner: scheme::apply_selection(&self.inner, &sel).map_err(to_py)? })
    }

    fn __repr__(&self) -> String {
        format!("Scheme(b_values={:?}, shell_sizes={:?})", self.inner.b_values(), self.inner.shell_sizes())
    }
}

/// Synthetic phantom with ground-truth maps and signals.
#[pyclass(name = "Phantom", module = "qnoddi")]
struct PyPhantom {
    inner: PhantomDataset,
}

#[pymethods]
impl PyPhantom {
    #[new]
    #[pyo3(signature = (height, width, scheme, noise_sigma = 1.0 / 30.0, seed = 0))]
    fn new(height: usize, width: usize, scheme: &PyScheme, noise_sigma: f64, seed: u64) -> PyResult<Self> {
        let inner = noddi::generate_phantom(height, width, &scheme.inner, noise_sigma, seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Stacks phantoms sharing a scheme and width into one taller grid.
    #[staticmethod]
    fn stack(parts: Vec<PyRef<'_, PyPhantom>>) -> PyResult<Self> {
        let parts: Vec<PhantomDataset> = parts.iter().map(|p| p.inner.clone()).collect();
        Ok(Self { inner: PhantomDataset::vstack(&parts).map_err(to_py)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: io::read_dataset(path).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::write_dataset(path, &self.inner).map_err(to_py)
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.height(), self.inner.width())
    }

    #[getter]
    fn scheme(&self) -> PyScheme {
        PyScheme { inner: self.inner.scheme().clone() }
    }

    #[getter]
    fn mask(&self) -> Vec<bool> {
        self.inner.mask().to_vec()
    }

    /// Row-major `[v_ic, v_iso, od]` planes.
    fn maps(&self) -> Vec<Vec<f64>> {
        self.inner.maps().to_vec()
    }

    fn voxel_signal(&self, voxel: usize) -> PyResult<Vec<f64>> {
        if voxel >= self.inner.num_voxels() {
            return Err(PyValueError::new_err(format!("voxel {voxel} out of range")));
        }
        Ok(self.inner.voxel_signal(voxel).to_vec())
    }
}

/// Trained estimator.
#[pyclass(name = "Model", module = "qnoddi")]
struct PyModel {
    inner: EstimatorModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: io::read_model(path).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::write_model(path, &self.inner).map_err(to_py)
    }

    #[getter]
    fn b_values(&self) -> Vec<f64> {
        self.inner.b_values()
    }

    #[getter]
    fn training_scheme(&self) -> PyScheme {
        PyScheme { inner: self.inner.training_scheme().clone() }
    }

    /// `[v_ic, v_iso, od]` per voxel from voxel-major flat signals on `scheme`.
    fn predict(&self, signals: Vec<f64>, scheme: &PyScheme) -> PyResult<Vec<[f64; 3]>> {
        self.inner.predict_many(&signals, &scheme.inner).map_err(to_py)
    }

    /// CSV report of a test protocol (ss, rs, sweep or flexible).
    #[pyo3(signature = (phantom, protocol, seeds = vec![0]))]
    fn evaluate(&self, phantom: &PyPhantom, protocol: &str, seeds: Vec<u64>) -> PyResult<String> {
        let protocol: Protocol = protocol.parse().map_err(to_py)?;
        let rows = evaluation::run_protocol(&ExperimentSpec::new(protocol, seeds), Some(&self.inner), &phantom.inner)
            .map_err(to_py)?;
        Ok(evaluation::rows_to_csv(&rows))
    }
}

/// Noise-free NODDI signal, flat in shell order.
#[pyfunction]
fn noddi_signal(v_ic: f64, v_iso: f64, od: f64, mu: (f64, f64, f64), scheme: &PyScheme) -> PyResult<Vec<f64>> {
    let p = NoddiParams::new(v_ic, v_iso, od, direction(mu)?).map_err(to_py)?;
    Ok(noddi::noddi_signal(&p, &scheme.inner).map_err(to_py)?.flat())
}

#[pyfunction]
fn od_from_kappa(kappa: f64) -> PyResult<f64> {
    noddi::od_from_kappa(kappa).map_err(to_py)
}

/// Real symmetric SH basis rows for a list of directions.
#[pyfunction]
#[pyo3(signature = (directions, order = DEFAULT_ORDER))]
fn sh_basis(directions: Vec<(f64, f64, f64)>, order: usize) -> PyResult<Vec<Vec<f64>>> {
    let dirs = directions.into_iter().map(direction).collect::<PyResult<Vec<_>>>()?;
    let b = shbasis::build_sh_basis(&dirs, order).map_err(to_py)?;
    Ok(b.matrix().row_iter().map(|r| r.iter().copied().collect()).collect())
}

/// Per-shell SH coefficients of a flat signal.
#[pyfunction]
#[pyo3(signature = (signal, scheme, order = DEFAULT_ORDER, lam = DEFAULT_LAMBDA))]
fn fit_sh(signal: Vec<f64>, scheme: &PyScheme, order: usize, lam: f64) -> PyResult<Vec<Vec<f64>>> {
    let sig = shbasis::DwiSignal::from_flat(&signal, &scheme.inner).map_err(to_py)?;
    let bases = shbasis::build_scheme_bases(&scheme.inner, order).map_err(to_py)?;
    Ok(shbasis::fit_sh(&sig, &bases, lam).map_err(to_py)?.shells().to_vec())
}

/// Flat signal synthesized from per-shell SH coefficients.
#[pyfunction]
#[pyo3(signature = (coefficients, scheme, order = DEFAULT_ORDER))]
fn evaluate_sh(coefficients: Vec<Vec<f64>>, scheme: &PyScheme, order: usize) -> PyResult<Vec<f64>> {
    let c = shbasis::ShCoefficients::new(order, coefficients).map_err(to_py)?;
    Ok(shbasis::evaluate_sh(&c, &scheme.inner).map_err(to_py)?.flat())
}

/// Trains an estimator; returns the model and per-epoch losses.
#[pyfunction]
#[pyo3(signature = (
    phantom, uniform_counts, epochs = estimator::DEFAULT_EPOCHS, batch_size = estimator::DEFAULT_BATCH_SIZE,
    seed = 0, loss_mode = "consis", hidden_widths = None, mu = estimator::DEFAULT_MU,
    learning_rate = estimator::DEFAULT_LEARNING_RATE, raw_input = false
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    phantom: &PyPhantom,
    uniform_counts: Vec<usize>,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    loss_mode: &str,
    hidden_widths: Option<Vec<usize>>,
    mu: f64,
    learning_rate: f64,
    raw_input: bool,
) -> PyResult<(PyModel, Vec<f64>)> {
    let base = if raw_input {
        TrainConfig::raw_baseline(uniform_counts)
    } else {
        TrainConfig::new(uniform_counts)
    };
    let cfg = TrainConfig {
        epochs,
        batch_size,
        seed,
        loss_mode: loss_mode.parse::<LossMode>().map_err(to_py)?,
        hidden_widths: hidden_widths.unwrap_or(base.hidden_widths.clone()),
        mu,
        learning_rate,
        ..base
    };
    let data = &phantom.inner;
    let (model, log) = py.detach(|| estimator::train(data, &cfg)).map_err(to_py)?;
    Ok((PyModel { inner: model }, log.epochs.iter().map(|e| e.loss).collect()))
}

#[pyfunction]
#[pyo3(signature = (reference, test, mask, data_range = 1.0))]
fn psnr(reference: Vec<f64>, test: Vec<f64>, mask: Vec<bool>, data_range: f64) -> PyResult<f64> {
    evaluation::psnr(&reference, &test, &mask, data_range).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (reference, test, height, width, mask, data_range = 1.0))]
fn ssim(
    reference: Vec<f64>,
    test: Vec<f64>,
    height: usize,
    width: usize,
    mask: Vec<bool>,
    data_range: f64,
) -> PyResult<f64> {
    evaluation::ssim(&reference, &test, height, width, &mask, data_range).map_err(to_py)
}

#[pymodule]
#[pyo3(name = "qnoddi")]
fn qnoddi_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScheme>()?;
    m.add_class::<PyPhantom>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(noddi_signal, m)?)?;
    m.add_function(wrap_pyfunction!(od_from_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(sh_basis, m)?)?;
    m.add_function(wrap_pyfunction!(fit_sh, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_sh, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    Ok(())
}
