//! Python bindings for the saddle-point multigrid solvers.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use saddle_mg::bench::{run_table, BenchSpec, TableRow};
use saddle_mg::cr::cr_solve_mg;
use saddle_mg::hierarchy::build_hierarchy;
use saddle_mg::mesh::build_square_mesh;
use saddle_mg::mg::{MultigridSolver, SmootherKind, SolverConfig};
use saddle_mg::problem::{build_example, default_rhs};
use saddle_mg::theory::Sampling;
use saddle_mg::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) | Error::ShapeMismatch { .. } | Error::Incompatible { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn smoother(name: &str) -> PyResult<SmootherKind> {
    match name {
        "kernel" => Ok(SmootherKind::ExactKernel),
        "dense" => Ok(SmootherKind::ExactDense),
        "inexact" => Ok(SmootherKind::InexactDiagonal),
        other => Err(PyValueError::new_err(format!(
            "unknown smoother {other:?} (expected kernel, dense or inexact)"
        ))),
    }
}

fn config(
    tol: f64,
    max_iterations: usize,
    pre: usize,
    post: usize,
    smoother_name: &str,
) -> PyResult<SolverConfig> {
    let cfg = SolverConfig {
        tolerance: tol,
        max_iterations,
        pre,
        post,
        smoother: smoother(smoother_name)?,
        ..SolverConfig::default()
    };
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// Result of a multigrid solve.
#[pyclass(get_all, frozen)]
struct SolveResult {
    flux: Vec<f64>,
    pressure: Vec<f64>,
    iterations: usize,
    converged: bool,
    error_history: Vec<f64>,
    energy_history: Vec<f64>,
    final_constraint_residual: f64,
}

#[pymethods]
impl SolveResult {
    fn __repr__(&self) -> String {
        format!(
            "SolveResult(iterations={}, converged={}, final_error={:e})",
            self.iterations,
            self.converged,
            self.error_history.last().copied().unwrap_or(0.0)
        )
    }
}

/// V-cycle multigrid for one of the benchmark examples.
#[pyclass(frozen)]
struct Solver {
    inner: MultigridSolver,
}

#[pymethods]
impl Solver {
    #[new]
    #[pyo3(signature = (example, levels, coarse_n = 4, seed = 1))]
    fn new(example: u32, levels: usize, coarse_n: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: build_example(example, coarse_n, levels, seed).map_err(py_err)?,
        })
    }

    /// Number of edges plus number of triangles on the finest level.
    #[getter]
    fn size(&self) -> usize {
        self.inner.system().size()
    }

    #[getter]
    fn num_levels(&self) -> usize {
        self.inner.num_levels()
    }

    #[getter]
    fn num_edges(&self) -> usize {
        self.inner.system().num_edges()
    }

    #[getter]
    fn num_triangles(&self) -> usize {
        self.inner.system().num_triangles()
    }

    /// Flux satisfying the divergence constraint and boundary data.
    fn compatible_flux(&self) -> PyResult<Vec<f64>> {
        self.inner.compatible_flux().map_err(py_err)
    }

    /// ½uᵀMu − rhsᵀu.
    fn energy(&self, flux: Vec<f64>) -> PyResult<f64> {
        if flux.len() != self.inner.system().num_edges() {
            return Err(PyValueError::new_err(
                "flux length does not match the number of edges",
            ));
        }
        Ok(self.inner.energy(&flux))
    }

    /// max over triangles of |(B u − rhs_p)_T|.
    fn constraint_defect(&self, flux: Vec<f64>) -> PyResult<f64> {
        if flux.len() != self.inner.system().num_edges() {
            return Err(PyValueError::new_err(
                "flux length does not match the number of edges",
            ));
        }
        Ok(self.inner.system().constraint_defect(&flux))
    }

    #[pyo3(signature = (tol = 1e-8, max_iterations = 200, pre = 1, post = 1, smoother = "kernel"))]
    fn solve(
        &self,
        tol: f64,
        max_iterations: usize,
        pre: usize,
        post: usize,
        smoother: &str,
    ) -> PyResult<SolveResult> {
        let cfg = config(tol, max_iterations, pre, post, smoother)?;
        let out = self.inner.solve(&cfg).map_err(py_err)?;
        Ok(SolveResult {
            flux: out.flux,
            pressure: out.pressure,
            iterations: out.stats.iterations,
            converged: out.stats.converged,
            error_history: out.stats.error_history,
            energy_history: out.stats.energy_history,
            final_constraint_residual: out.stats.final_constraint_residual,
        })
    }

    /// Largest observed energy contraction per V-cycle on the homogeneous problem.
    #[pyo3(signature = (pre = 1, post = 1, smoother = "kernel", trials = 2, burn_in = 5, samples = 5, seed = 1))]
    #[allow(clippy::too_many_arguments)]
    fn measure_contraction(
        &self,
        pre: usize,
        post: usize,
        smoother: &str,
        trials: usize,
        burn_in: usize,
        samples: usize,
        seed: u64,
    ) -> PyResult<f64> {
        let cfg = config(1e-8, 200, pre, post, smoother)?;
        Ok(self
            .inner
            .measure_contraction(&cfg, trials, burn_in, samples, seed)
            .map_err(py_err)?
            .rho)
    }
}

fn row_dict<'py>(py: Python<'py>, r: &TableRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("h", r.h)?;
    d.set_item("size", r.size)?;
    d.set_item("iterations", r.iterations)?;
    d.set_item("converged", r.converged)?;
    d.set_item("final_error", r.final_error)?;
    d.set_item("elapsed_ms", r.elapsed_ms)?;
    if let Some(v) = r.equivalence_residual {
        d.set_item("equivalence_residual", v)?;
    }
    Ok(d)
}

/// Iteration-count table for one example; one dict per hierarchy depth.
#[pyfunction]
#[pyo3(signature = (example, levels = vec![2, 3, 4, 5], coarse_n = 4, seed = 1, tol = 1e-8, smoother = "kernel"))]
fn table<'py>(
    py: Python<'py>,
    example: u32,
    levels: Vec<usize>,
    coarse_n: usize,
    seed: u64,
    tol: f64,
    smoother: &str,
) -> PyResult<Bound<'py, PyList>> {
    let spec = BenchSpec {
        example,
        coarse_n,
        levels,
        solver: config(tol, 200, 1, 1, smoother)?,
        seed,
        timing: false,
    };
    let rows = run_table(&spec).map_err(py_err)?;
    let dicts = rows
        .iter()
        .map(|r| row_dict(py, r))
        .collect::<PyResult<Vec<_>>>()?;
    PyList::new(py, dicts)
}

/// CR multigrid on the Poisson problem with the default source.
#[pyfunction]
#[pyo3(signature = (levels, coarse_n = 4, tol = 1e-8))]
fn cr_solve<'py>(
    py: Python<'py>,
    levels: usize,
    coarse_n: usize,
    tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    if levels == 0 || coarse_n == 0 {
        return Err(PyValueError::new_err(
            "levels and coarse_n must be positive",
        ));
    }
    let hier = build_hierarchy(build_square_mesh(coarse_n), levels);
    let source = default_rhs(&hier);
    let out = cr_solve_mg(hier, source, &config(tol, 200, 1, 1, "kernel")?).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("lambda", out.lambda.values)?;
    d.set_item("flux", out.flux)?;
    d.set_item("iterations", out.stats.iterations)?;
    d.set_item("converged", out.stats.converged)?;
    d.set_item("equivalence_residuals", out.equivalence_residuals)?;
    Ok(d)
}

/// Brute-forced convergence constants and checks on a small hierarchy.
#[pyfunction]
#[pyo3(signature = (levels = 2, coarse_n = 4, seed = 1))]
fn theory<'py>(
    py: Python<'py>,
    levels: usize,
    coarse_n: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let sampling = Sampling {
        seed,
        ..Sampling::default()
    };
    let est = saddle_mg::bench::run_theory(coarse_n, levels, &sampling).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("levels", est.levels)?;
    d.set_item("num_subspaces", est.num_subspaces)?;
    d.set_item("kernel_dim", est.kernel_dim)?;
    d.set_item("c_a", est.c_a)?;
    d.set_item("c_s", est.c_s)?;
    d.set_item("c0", est.c0)?;
    d.set_item("rho_measured", est.rho_measured)?;
    d.set_item("rho_inexact", est.rho_inexact)?;
    d.set_item("sweep_norm_sq", est.sweep_norm_sq)?;
    d.set_item("bound_c0", est.bound_c0)?;
    d.set_item("bound", est.bound)?;
    d.set_item("kappa_max", est.kappa_max)?;
    d.set_item("epsilon_max", est.epsilon_max)?;
    d.set_item("bound_inexact", est.bound_inexact)?;
    d.set_item("xz_identity_pass", est.xz_identity_pass)?;
    d.set_item("bound_chain_pass", est.bound_chain_pass)?;
    d.set_item("inexact_pass", est.inexact_pass)?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "saddle_mg")]
fn saddle_mg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Solver>()?;
    m.add_class::<SolveResult>()?;
    m.add_function(wrap_pyfunction!(table, m)?)?;
    m.add_function(wrap_pyfunction!(cr_solve, m)?)?;
    m.add_function(wrap_pyfunction!(theory, m)?)?;
    Ok(())
}
