//! Python bindings for the vvbo library: kernels, the grid-based output
//! space, measurement operators, the measurement-space KRR posterior, the
//! synthetic benchmarks, and the experiment runner.
//!
//! Vectors cross the boundary as plain Python lists of floats.

use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vvbo::benchmarks::{BenchmarkName, SyntheticProblem};
use vvbo::harness::{self, ExperimentConfig};
use vvbo::hilbert::{combine_functionals, HilbertVector, OutputGrid};
use vvbo::kernel::{KernelFamily, MaternNu, ScalarKernel};
use vvbo::measurement::{
    FunctionalRep, InducedSpectrum, MeasurementOperator, TruncationPolicy,
};
use vvbo::posterior::{PosteriorHyperparams, PosteriorState};

fn err(e: vvbo::VvboError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Deterministic random stream used by queries and optimizers.
#[pyclass(name = "Rng")]
struct PyRng {
    inner: ChaCha8Rng,
}

#[pymethods]
impl PyRng {
    #[new]
    fn new(seed: u64) -> Self {
        PyRng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// Scalar positive-definite kernel on R^d.
#[pyclass(name = "Kernel")]
#[derive(Clone)]
struct PyKernel {
    inner: ScalarKernel,
}

#[pymethods]
impl PyKernel {
    /// family: "rbf", "matern" (nu 1.5 or 2.5), or "linear".
    #[new]
    #[pyo3(signature = (family, length_scales, variance_scale=1.0, nu=2.5))]
    fn new(family: &str, length_scales: Vec<f64>, variance_scale: f64, nu: f64) -> PyResult<Self> {
        let family = match family {
            "rbf" => KernelFamily::Rbf,
            "linear" => KernelFamily::Linear,
            "matern" => KernelFamily::Matern {
                nu: if nu == 1.5 {
                    MaternNu::ThreeHalves
                } else if nu == 2.5 {
                    MaternNu::FiveHalves
                } else {
                    return Err(PyValueError::new_err("nu must be 1.5 or 2.5"));
                },
            },
            other => return Err(PyValueError::new_err(format!("unknown family '{other}'"))),
        };
        Ok(PyKernel {
            inner: ScalarKernel::new(family, length_scales, variance_scale).map_err(err)?,
        })
    }

    fn eval(&self, x: Vec<f64>, s: Vec<f64>) -> PyResult<f64> {
        self.inner.eval(&x, &s).map_err(err)
    }

    fn gram(&self, points: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let g = self.inner.gram(&points).map_err(err)?;
        Ok((0..g.nrows())
            .map(|i| g.row(i).iter().copied().collect())
            .collect())
    }
}

/// Discretized output space.
#[pyclass(name = "Grid")]
#[derive(Clone)]
struct PyGrid {
    inner: Arc<OutputGrid>,
}

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (lo, hi, n, kernel, fit_reg=0.01, required=None))]
    fn new(
        lo: f64,
        hi: f64,
        n: usize,
        kernel: PyKernel,
        fit_reg: f64,
        required: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let grid = match required {
            Some(req) => {
                OutputGrid::uniform_with_required(lo, hi, n, &req, kernel.inner, fit_reg)
            }
            None => OutputGrid::uniform(lo, hi, n, kernel.inner, fit_reg),
        }
        .map_err(err)?;
        Ok(PyGrid { inner: grid })
    }

    fn points(&self) -> Vec<f64> {
        self.inner.points().to_vec()
    }

    fn rank(&self) -> usize {
        self.inner.rank()
    }

    fn eigvals(&self) -> Vec<f64> {
        self.inner.eigvals().iter().copied().collect()
    }

    /// Fit a trajectory from one sample per grid point.
    fn fit(&self, samples: Vec<f64>) -> PyResult<PyTrajectory> {
        Ok(PyTrajectory {
            inner: self.inner.fit_from_samples(&samples).map_err(err)?,
        })
    }

    /// Point-evaluation representer at a grid-aligned index.
    fn point_eval(&self, t: f64) -> PyResult<PyTrajectory> {
        Ok(PyTrajectory {
            inner: self.inner.point_eval_functional(t).map_err(err)?,
        })
    }

    /// Integral-functional representer with a weight curve on the grid.
    fn integral(&self, weights: Vec<f64>) -> PyResult<PyTrajectory> {
        Ok(PyTrajectory {
            inner: self.inner.integral_functional(&weights).map_err(err)?,
        })
    }

    /// Weighted combination of functionals.
    #[staticmethod]
    fn combine(functionals: Vec<PyTrajectory>, weights: Vec<f64>) -> PyResult<PyTrajectory> {
        let fns: Vec<HilbertVector> = functionals.into_iter().map(|f| f.inner).collect();
        Ok(PyTrajectory {
            inner: combine_functionals(&fns, &weights).map_err(err)?,
        })
    }
}

/// Element of the output space (trajectory or functional representer).
#[pyclass(name = "Trajectory")]
#[derive(Clone)]
struct PyTrajectory {
    inner: HilbertVector,
}

#[pymethods]
impl PyTrajectory {
    fn coeffs(&self) -> Vec<f64> {
        self.inner.coeffs().iter().copied().collect()
    }

    fn canonical(&self) -> Vec<f64> {
        self.inner.canonical_coords().iter().copied().collect()
    }

    fn values_on_grid(&self) -> Vec<f64> {
        self.inner.values_on_grid().iter().copied().collect()
    }

    fn inner_product(&self, other: &PyTrajectory) -> PyResult<f64> {
        self.inner.inner(&other.inner).map_err(err)
    }

    fn norm(&self) -> f64 {
        self.inner.norm()
    }
}

/// Linear measurement operator with its induced spectrum.
#[pyclass(name = "Measurement")]
struct PyMeasurement {
    inner: MeasurementOperator,
    spectrum: Arc<InducedSpectrum>,
}

#[pymethods]
impl PyMeasurement {
    /// Full observation (M = I) with B = I.
    #[staticmethod]
    #[pyo3(signature = (grid, energy_fraction=None, fixed_rank=None))]
    fn identity(
        grid: &PyGrid,
        energy_fraction: Option<f64>,
        fixed_rank: Option<usize>,
    ) -> PyResult<Self> {
        let op = MeasurementOperator::identity(&grid.inner);
        let spectrum = op
            .induced_identity(policy(energy_fraction, fixed_rank))
            .map_err(err)?;
        Ok(PyMeasurement {
            inner: op,
            spectrum: Arc::new(spectrum),
        })
    }

    /// Finite projection onto the given functionals, with B = I.
    #[staticmethod]
    #[pyo3(signature = (functionals, energy_fraction=None, fixed_rank=None))]
    fn projection(
        functionals: Vec<PyTrajectory>,
        energy_fraction: Option<f64>,
        fixed_rank: Option<usize>,
    ) -> PyResult<Self> {
        let fns: Vec<HilbertVector> = functionals.into_iter().map(|f| f.inner).collect();
        let op = MeasurementOperator::projection(&fns).map_err(err)?;
        let spectrum = op
            .induced_identity(policy(energy_fraction, fixed_rank))
            .map_err(err)?;
        Ok(PyMeasurement {
            inner: op,
            spectrum: Arc::new(spectrum),
        })
    }

    fn rank(&self) -> usize {
        self.spectrum.rank()
    }

    fn eigvals(&self) -> Vec<f64> {
        self.spectrum.eigvals().iter().copied().collect()
    }

    /// Measurement coordinates of an output-space element.
    fn measure(&self, u: &PyTrajectory) -> PyResult<Vec<f64>> {
        Ok(self
            .inner
            .measure(&u.inner)
            .map_err(err)?
            .iter()
            .copied()
            .collect())
    }

    /// Measurement in the φ basis of the induced spectrum (posterior input).
    fn measure_phi(&self, u: &PyTrajectory) -> PyResult<Vec<f64>> {
        let m = self.inner.measure(&u.inner).map_err(err)?;
        Ok(self.spectrum.to_phi_coords(&m).iter().copied().collect())
    }

    /// Adjoint lift M* v of measurement coordinates.
    fn adjoint_lift(&self, v: Vec<f64>) -> PyResult<PyTrajectory> {
        Ok(PyTrajectory {
            inner: self
                .inner
                .adjoint_lift(&DVector::from_vec(v))
                .map_err(err)?,
        })
    }

    /// φ coordinates and norm of an output-space objective functional
    /// (identity measurement).
    fn functional_coords(&self, m: &PyTrajectory) -> PyResult<(Vec<f64>, f64)> {
        let (mbar, norm) = self
            .inner
            .functional_coords(FunctionalRep::OutputFunctional(&m.inner), &self.spectrum)
            .map_err(err)?;
        Ok((mbar.iter().copied().collect(), norm))
    }

    /// φ coordinates and norm of a weight vector over the projection's
    /// functionals.
    fn weight_coords(&self, w: Vec<f64>) -> PyResult<(Vec<f64>, f64)> {
        let (mbar, norm) = self
            .inner
            .functional_coords(FunctionalRep::Weights(&w), &self.spectrum)
            .map_err(err)?;
        Ok((mbar.iter().copied().collect(), norm))
    }
}

fn policy(energy_fraction: Option<f64>, fixed_rank: Option<usize>) -> TruncationPolicy {
    match (energy_fraction, fixed_rank) {
        (_, Some(n)) => TruncationPolicy::FixedRank(n),
        (Some(rho), None) => TruncationPolicy::EnergyFraction(rho),
        (None, None) => TruncationPolicy::keep_all(),
    }
}

/// Measurement-space KRR posterior.
#[pyclass(name = "Posterior")]
struct PyPosterior {
    inner: PosteriorState,
}

#[pymethods]
impl PyPosterior {
    #[new]
    #[pyo3(signature = (kernel, measurement, lam, gamma=1.0, sigma=0.0, zeta=0.1, beta=None))]
    fn new(
        kernel: PyKernel,
        measurement: &PyMeasurement,
        lam: f64,
        gamma: f64,
        sigma: f64,
        zeta: f64,
        beta: Option<f64>,
    ) -> PyResult<Self> {
        let mut hyper = PosteriorHyperparams::with_theoretical(lam, gamma, sigma, zeta).map_err(err)?;
        hyper.beta_override = beta;
        Ok(PyPosterior {
            inner: PosteriorState::new(kernel.inner, Arc::clone(&measurement.spectrum), hyper)
                .map_err(err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Append one observation given in φ coordinates.
    fn update(&mut self, x: Vec<f64>, y_phi: Vec<f64>) -> PyResult<()> {
        self.inner.update(&x, &y_phi).map_err(err)
    }

    fn mean_coords(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self
            .inner
            .posterior_mean_coords(&x)
            .map_err(err)?
            .iter()
            .copied()
            .collect())
    }

    fn objective_mean(&self, x: Vec<f64>, mbar: Vec<f64>) -> PyResult<f64> {
        self.inner
            .objective_mean(&x, &DVector::from_vec(mbar))
            .map_err(err)
    }

    fn opnorm(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.posterior_variance_opnorm(&x).map_err(err)
    }

    fn log_det(&self) -> f64 {
        self.inner.log_det()
    }

    fn beta(&self) -> f64 {
        self.inner.beta()
    }

    fn set_beta(&mut self, beta: Option<f64>) {
        self.inner.set_beta_override(beta);
    }

    /// UCB score for a linear objective (mbar, m_norm) at x.
    fn ucb(&self, x: Vec<f64>, mbar: Vec<f64>, m_norm: f64) -> PyResult<f64> {
        let mean = self
            .inner
            .objective_mean(&x, &DVector::from_vec(mbar))
            .map_err(err)?;
        let width =
            self.inner.beta() * m_norm * self.inner.posterior_variance_opnorm(&x).map_err(err)?.sqrt();
        Ok(mean + width)
    }

    fn confidence_interval(
        &self,
        x: Vec<f64>,
        mbar: Vec<f64>,
        m_norm: f64,
    ) -> PyResult<(f64, f64)> {
        self.inner
            .confidence_interval(&x, &DVector::from_vec(mbar), m_norm)
            .map_err(err)
    }

    /// JSON snapshot (points, observation coordinates, spectrum).
    fn snapshot_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.snapshot())
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_snapshot_json(json: &str) -> PyResult<Self> {
        let snap: vvbo::PosteriorSnapshot =
            serde_json::from_str(json).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyPosterior {
            inner: PosteriorState::from_snapshot(&snap).map_err(err)?,
        })
    }
}

/// One of the synthetic benchmark problems.
#[pyclass(name = "Benchmark")]
struct PyBenchmark {
    inner: Arc<SyntheticProblem>,
}

#[pymethods]
impl PyBenchmark {
    #[new]
    #[pyo3(signature = (name, benchmark_seed=2024))]
    fn new(name: &str, benchmark_seed: u64) -> PyResult<Self> {
        let bench = BenchmarkName::from_str(name).map_err(err)?;
        Ok(PyBenchmark {
            inner: Arc::new(SyntheticProblem::new(bench, benchmark_seed).map_err(err)?),
        })
    }

    fn grid_points(&self) -> Vec<f64> {
        self.inner.grid().points().to_vec()
    }

    fn x_lower(&self) -> Vec<f64> {
        self.inner.x_domain().lower().to_vec()
    }

    fn x_upper(&self) -> Vec<f64> {
        self.inner.x_domain().upper().to_vec()
    }

    fn phase_count(&self) -> usize {
        self.inner.phase_count()
    }

    /// Ground-truth value h(x, t).
    fn ground_truth(&self, x: Vec<f64>, t: f64) -> PyResult<f64> {
        self.inner.operator().eval(&x, t).map_err(err)
    }

    /// Noise-free objective F_phase(x).
    fn true_objective(&self, x: Vec<f64>, phase: usize) -> PyResult<f64> {
        self.inner.true_objective(&x, phase).map_err(err)
    }

    /// Brute-force optimum (x*, F(x*)) of a phase.
    fn oracle(&self, phase: usize) -> PyResult<(Vec<f64>, f64)> {
        self.inner.oracle_optimum(phase).map_err(err)
    }

    /// Table β for a phase.
    fn beta(&self, phase: usize) -> PyResult<f64> {
        Ok(self.inner.phase_objective(phase).map_err(err)?.beta)
    }

    /// Noisy fitted trajectory at x.
    fn query_trajectory(&self, x: Vec<f64>, rng: &mut PyRng) -> PyResult<PyTrajectory> {
        Ok(PyTrajectory {
            inner: self.inner.query_trajectory(&x, &mut rng.inner).map_err(err)?,
        })
    }

    /// Combined objective functional of a phase.
    fn phase_functional(&self, phase: usize) -> PyResult<PyTrajectory> {
        Ok(PyTrajectory {
            inner: self.inner.phase_objective(phase).map_err(err)?.combined.clone(),
        })
    }
}

/// Runs an experiment config (JSON text), writing outputs under `out_dir`.
/// Returns a summary dict with the failed run indices.
#[pyfunction]
#[pyo3(signature = (config_json, out_dir, workers=1))]
fn run_experiment(
    py: Python<'_>,
    config_json: &str,
    out_dir: &str,
    workers: usize,
) -> PyResult<Py<pyo3::types::PyDict>> {
    let resolved = ExperimentConfig::from_json(config_json)
        .and_then(|c| c.resolve())
        .map_err(err)?;
    let outputs =
        harness::run_experiment(&resolved, std::path::Path::new(out_dir), workers).map_err(err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("out_dir", outputs.out_dir.to_string_lossy())?;
    dict.set_item("n_runs", resolved.n_runs)?;
    dict.set_item(
        "failed_runs",
        outputs.failures.iter().map(|(i, _)| *i).collect::<Vec<_>>(),
    )?;
    Ok(dict.into())
}

/// Stateless seed derivation for named streams.
#[pyfunction]
fn derive_seed(master: u64, run_index: u64, stream: &str) -> u64 {
    vvbo::derive_seed(master, run_index, stream)
}

/// Dense representer-system oracle for the posterior mean (test reference).
#[pyfunction]
fn representer_oracle(
    kernel: PyKernel,
    points: Vec<Vec<f64>>,
    ybar_rows: Vec<Vec<f64>>,
    eigvals: Vec<f64>,
    lam: f64,
    x: Vec<f64>,
) -> PyResult<Vec<f64>> {
    let n = eigvals.len();
    let spectrum =
        InducedSpectrum::from_parts(DVector::from_vec(eigvals), DMatrix::identity(n, n))
            .map_err(err)?;
    let rows: Vec<DVector<f64>> = ybar_rows.into_iter().map(DVector::from_vec).collect();
    let out = vvbo::representer_oracle(&kernel.inner, &points, &rows, &spectrum, lam, &x)
        .map_err(err)?;
    Ok(out.iter().copied().collect())
}

#[pymodule]
fn vvbo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRng>()?;
    m.add_class::<PyKernel>()?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PyMeasurement>()?;
    m.add_class::<PyPosterior>()?;
    m.add_class::<PyBenchmark>()?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    m.add_function(wrap_pyfunction!(representer_oracle, m)?)?;
    Ok(())
}
