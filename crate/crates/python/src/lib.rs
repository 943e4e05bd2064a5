//! Python module `lumen`: phase functions, Gaussian-mixture tools, the
//! reflectance simulator and dataset/analysis helpers.
//!
//! Densities are plain lists on the shared 1000-point θ grid; records and
//! tallies come back as dicts.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use lumen_core::analysis;
use lumen_core::dataset::{self, DatasetSpec};
use lumen_core::gmm::{self, FitOptions};
use lumen_core::phase as core_phase;
use lumen_core::transport;
use lumen_core::{DiscretePdf, Error, GridSpec, HgPhase, OpticalMedium, SimulationConfig, ThetaGrid};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

/// Serializable value → Python object through the `json` module.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn pdf(values: Vec<f64>) -> PyResult<DiscretePdf> {
    gmm::truncate_normalize(&values).map_err(err)
}

#[pyfunction]
fn hg_pdf_mu(g: f64, mu: f64) -> PyResult<f64> {
    core_phase::hg_pdf_mu(g, mu).map_err(err)
}

#[pyfunction]
fn hg_pdf_theta(g: f64, theta: f64) -> PyResult<f64> {
    core_phase::hg_pdf_theta(g, theta).map_err(err)
}

#[pyfunction]
fn sample_hg(g: f64, xi: f64) -> PyResult<f64> {
    HgPhase::new(g).map_err(err)?;
    Ok(core_phase::sample_hg(g, xi))
}

/// Midpoints of the θ grid.
#[pyfunction]
#[pyo3(signature = (points = gmm::GRID_POINTS))]
fn theta_grid(points: usize) -> PyResult<Vec<f64>> {
    Ok(ThetaGrid::new(points).map_err(err)?.angles())
}

/// Normalized Henyey-Greenstein density on the θ grid.
#[pyfunction]
#[pyo3(signature = (g, points = gmm::GRID_POINTS))]
fn hg_target(g: f64, points: usize) -> PyResult<Vec<f64>> {
    let grid = ThetaGrid::new(points).map_err(err)?;
    let hg = HgPhase::new(g).map_err(err)?;
    Ok(DiscretePdf::from_phase(&hg, grid).map_err(err)?.into_values())
}

#[pyfunction]
fn truncate_normalize(raw: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(pdf(raw)?.into_values())
}

/// Grid MSE of two densities on the same grid (both are renormalized first).
#[pyfunction]
fn grid_mse(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    gmm::grid_mse(&pdf(a)?, &pdf(b)?).map_err(err)
}

/// ⟨cosθ⟩ of a density on the midpoint grid.
#[pyfunction]
fn mean_cosine(values: Vec<f64>) -> PyResult<f64> {
    Ok(pdf(values)?.mean_cosine())
}

#[pyfunction]
fn relative_g_error(g_true: f64, g_est: f64) -> PyResult<f64> {
    gmm::relative_g_error(g_true, g_est).map_err(err)
}

/// Gaussian mixture over θ.
#[pyclass(name = "GmmParams", module = "lumen", frozen, from_py_object)]
#[derive(Clone)]
struct PyGmmParams {
    inner: gmm::GmmParams,
}

#[pymethods]
impl PyGmmParams {
    #[new]
    fn new(weights: Vec<f64>, means: Vec<f64>, sigmas: Vec<f64>) -> PyResult<Self> {
        let inner = gmm::GmmParams::new(weights, means, sigmas).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = gmm::GmmParams::from_json(text).map_err(err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    #[getter]
    fn means(&self) -> Vec<f64> {
        self.inner.means().to_vec()
    }

    #[getter]
    fn sigmas(&self) -> Vec<f64> {
        self.inner.sigmas().to_vec()
    }

    /// Untruncated mixture density at `theta`.
    fn density(&self, theta: f64) -> f64 {
        self.inner.density(theta)
    }

    /// Truncated, normalized density on the θ grid.
    #[pyo3(signature = (points = gmm::GRID_POINTS))]
    fn pdf(&self, points: usize) -> PyResult<Vec<f64>> {
        let grid = ThetaGrid::new(points).map_err(err)?;
        Ok(gmm::gmm_pdf(&self.inner, grid).map_err(err)?.into_values())
    }

    fn g_hat(&self) -> PyResult<f64> {
        gmm::g_hat(&self.inner).map_err(err)
    }

    fn encode(&self) -> PyResult<Vec<f64>> {
        gmm::encode_output(&self.inner).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("GmmParams({})", self.inner.to_json())
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }
}

/// Maps 3K network outputs in [0, 1] to mixture parameters.
#[pyfunction]
fn decode_output(raw: Vec<f64>, k: usize) -> PyResult<PyGmmParams> {
    let inner = gmm::decode_output(&raw, k).map_err(err)?;
    Ok(PyGmmParams { inner })
}

/// Direct least-squares mixture fit. Give either `g` (Henyey-Greenstein) or
/// a `target` density on the θ grid.
#[pyfunction]
#[pyo3(signature = (g = None, k = 11, target = None, restarts = 20, max_iters = 500, seed = None))]
fn fit_gmm<'py>(
    py: Python<'py>,
    g: Option<f64>,
    k: usize,
    target: Option<Vec<f64>>,
    restarts: usize,
    max_iters: usize,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let target = match (g, target) {
        (Some(g), None) => DiscretePdf::from_phase(&HgPhase::new(g).map_err(err)?, ThetaGrid::default()).map_err(err)?,
        (None, Some(v)) => pdf(v)?,
        _ => return Err(PyValueError::new_err("give exactly one of g or target")),
    };
    let defaults = FitOptions::default();
    let opts = FitOptions {
        restarts,
        max_iters,
        seed: seed.unwrap_or(defaults.seed),
        ..defaults
    };
    let fit = py.detach(|| gmm::fit_gmm(&target, k, &opts)).map_err(err)?;
    let g_hat = gmm::g_hat(&fit.params).map_err(err)?;
    let out = serde_json::json!({
        "mse": fit.mse,
        "g_hat": g_hat,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "restart": fit.restart,
    });
    let dict = to_py(py, &out)?;
    dict.set_item("params", PyGmmParams { inner: fit.params })?;
    Ok(dict)
}

/// Simulated reflectance image.
#[pyclass(name = "ReflectanceImage", module = "lumen", frozen)]
struct PyImage {
    inner: transport::ReflectanceImage,
}

#[pymethods]
impl PyImage {
    #[getter]
    fn side(&self) -> usize {
        self.inner.side()
    }

    #[getter]
    fn n_r(&self) -> usize {
        self.inner.grid().n_r
    }

    #[getter]
    fn delta_r_mm(&self) -> f64 {
        self.inner.grid().delta_r_mm
    }

    /// Row-major pixel values, cm⁻².
    #[getter]
    fn pixels(&self) -> Vec<f64> {
        self.inner.pixels().to_vec()
    }

    #[getter]
    fn std_error(&self) -> Option<Vec<f64>> {
        self.inner.std_error().map(<[f64]>::to_vec)
    }

    #[getter]
    fn tallies<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.inner.tallies())
    }

    fn get(&self, row: usize, col: usize) -> PyResult<f64> {
        let side = self.inner.side();
        if row >= side || col >= side {
            return Err(PyValueError::new_err(format!("pixel ({row}, {col}) outside {side}x{side}")));
        }
        Ok(self.inner.get(row, col))
    }

    fn center_profile(&self) -> PyResult<Vec<f64>> {
        analysis::center_profile(&self.inner).map_err(err)
    }

    fn quadrant_sums(&self) -> [f64; 4] {
        self.inner.quadrant_sums()
    }

    /// Writes the f32 raster without a sidecar.
    fn save_raw(&self, path: &str) -> PyResult<()> {
        lumen_core::io::write_f32(path.as_ref(), self.inner.pixels()).map_err(err)
    }
}

/// Runs the photon simulation. The phase function is HG(`g`) unless `gmm`
/// is given, in which case `g` is only recorded.
#[pyfunction]
#[pyo3(signature = (
    mu_a, mu_s, g, n_r = 100, delta_r_mm = 0.02, n_photons = 1_000_000, seed = 0, workers = 1,
    n_tissue = transport::DEFAULT_N_TISSUE, n_ambient = transport::DEFAULT_N_AMBIENT,
    thickness_cm = transport::DEFAULT_THICKNESS_CM, gmm = None
))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    mu_a: f64,
    mu_s: f64,
    g: f64,
    n_r: usize,
    delta_r_mm: f64,
    n_photons: u64,
    seed: u64,
    workers: usize,
    n_tissue: f64,
    n_ambient: f64,
    thickness_cm: f64,
    gmm: Option<PyGmmParams>,
) -> PyResult<PyImage> {
    let medium = OpticalMedium {
        n_tissue,
        n_ambient,
        thickness_cm,
        ..OpticalMedium::new(mu_a, mu_s, g)
    };
    let grid = GridSpec::new(delta_r_mm, n_r).map_err(err)?;
    let config = SimulationConfig::new(n_photons, seed).with_workers(workers);
    let inner = py
        .detach(|| match &gmm {
            Some(p) => transport::run_forward_with_gmm(&p.inner, &medium, &grid, &config),
            None => HgPhase::new(g).and_then(|hg| transport::simulate(&medium, &hg, &grid, &config)),
        })
        .map_err(err)?;
    Ok(PyImage { inner })
}

/// Anisotropy of a Henyey-Greenstein or tabulated (grid) phase function.
#[pyfunction]
#[pyo3(signature = (g = None, density = None))]
fn anisotropy_of(g: Option<f64>, density: Option<Vec<f64>>) -> PyResult<f64> {
    match (g, density) {
        (Some(g), None) => core_phase::anisotropy_of(&HgPhase::new(g).map_err(err)?).map_err(err),
        (None, Some(d)) => {
            let t = core_phase::TabulatedPhase::new(d).map_err(err)?;
            core_phase::anisotropy_of(&t).map_err(err)
        }
        _ => Err(PyValueError::new_err("give exactly one of g or density")),
    }
}

#[pyfunction]
fn tissue_table<'py>(py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &dataset::tissue_table())
}

#[pyfunction]
fn mus_from(mu_s_prime: f64, g: f64) -> PyResult<f64> {
    dataset::mus_from(mu_s_prime, g).map_err(err)
}

/// Dataset geometry and counts, optionally scaled.
#[pyfunction]
#[pyo3(signature = (name, scale = 1.0))]
fn dataset_spec<'py>(py: Python<'py>, name: &str, scale: f64) -> PyResult<Bound<'py, PyAny>> {
    let spec = DatasetSpec::named(name).and_then(|s| s.scaled(scale)).map_err(err)?;
    to_py(py, &spec)
}

/// Planned records of a dataset, as manifest dicts without checksums.
#[pyfunction]
#[pyo3(signature = (name, master_seed = 0, scale = 1.0))]
fn plan_dataset<'py>(py: Python<'py>, name: &str, master_seed: u64, scale: f64) -> PyResult<Bound<'py, PyAny>> {
    let spec = DatasetSpec::named(name).and_then(|s| s.scaled(scale)).map_err(err)?;
    to_py(py, &dataset::plan_dataset(&spec, master_seed).map_err(err)?)
}

#[pyfunction]
fn read_manifest<'py>(py: Python<'py>, path: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &dataset::read_manifest(path.as_ref()).map_err(err)?)
}

/// Raw f32 raster as a flat list of floats.
#[pyfunction]
fn read_f32(path: &str) -> PyResult<Vec<f64>> {
    lumen_core::io::read_f32(path.as_ref()).map_err(err)
}

/// Middle row of a square row-major raster with odd side.
#[pyfunction]
fn center_profile(pixels: Vec<f64>, side: usize) -> PyResult<Vec<f64>> {
    analysis::middle_row(&pixels, side).map_err(err)
}

/// Pairwise Euclidean distances as a list of rows.
#[pyfunction]
fn compute_rdm(py: Python<'_>, items: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let rdm = py.detach(|| analysis::compute_rdm(&items)).map_err(err)?;
    Ok(rdm.distances().chunks(rdm.n().max(1)).map(<[f64]>::to_vec).collect())
}

/// Two-sided Wilcoxon rank-sum p-value.
#[pyfunction]
fn rank_sum_test(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    analysis::rank_sum_test(&a, &b).map_err(err)
}

/// 8-bit gamma rendering `round(255·(v/max)^γ)`.
#[pyfunction]
#[pyo3(signature = (pixels, gamma = 0.5))]
fn render_gamma<'py>(py: Python<'py>, pixels: Vec<f64>, gamma: f64) -> PyResult<Bound<'py, PyBytes>> {
    if !(gamma > 0.0) {
        return Err(PyValueError::new_err("gamma must be positive"));
    }
    Ok(PyBytes::new(py, &analysis::render_gamma(&pixels, gamma)))
}

#[pymodule]
pub fn lumen(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("GRID_POINTS", gmm::GRID_POINTS)?;
    m.add("SIGMA_MIN", gmm::SIGMA_MIN)?;
    m.add("SIGMA_MAX", gmm::SIGMA_MAX)?;
    m.add_class::<PyGmmParams>()?;
    m.add_class::<PyImage>()?;
    m.add_function(wrap_pyfunction!(hg_pdf_mu, m)?)?;
    m.add_function(wrap_pyfunction!(hg_pdf_theta, m)?)?;
    m.add_function(wrap_pyfunction!(sample_hg, m)?)?;
    m.add_function(wrap_pyfunction!(anisotropy_of, m)?)?;
    m.add_function(wrap_pyfunction!(theta_grid, m)?)?;
    m.add_function(wrap_pyfunction!(hg_target, m)?)?;
    m.add_function(wrap_pyfunction!(truncate_normalize, m)?)?;
    m.add_function(wrap_pyfunction!(grid_mse, m)?)?;
    m.add_function(wrap_pyfunction!(mean_cosine, m)?)?;
    m.add_function(wrap_pyfunction!(relative_g_error, m)?)?;
    m.add_function(wrap_pyfunction!(decode_output, m)?)?;
    m.add_function(wrap_pyfunction!(fit_gmm, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(tissue_table, m)?)?;
    m.add_function(wrap_pyfunction!(mus_from, m)?)?;
    m.add_function(wrap_pyfunction!(dataset_spec, m)?)?;
    m.add_function(wrap_pyfunction!(plan_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(read_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(read_f32, m)?)?;
    m.add_function(wrap_pyfunction!(center_profile, m)?)?;
    m.add_function(wrap_pyfunction!(compute_rdm, m)?)?;
    m.add_function(wrap_pyfunction!(rank_sum_test, m)?)?;
    m.add_function(wrap_pyfunction!(render_gamma, m)?)?;
    Ok(())
}
