//! Python bindings for the split-feasibility solver toolkit.
//!
//! Exposes the operator/set/denoiser types and the solver entry points
//! over numpy arrays: real signals as float64 arrays (1-D vectors, 2-D
//! grayscale, 3-D channel-interleaved) and complex grids as complex128
//! 2-D arrays.

use numpy::{
    Complex64, IntoPyArray, PyArrayMethods, PyReadonlyArray1, PyReadonlyArray2, PyReadonlyArray3,
};
use pyo3::exceptions::{PyIOError, PyTypeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use scfp_core::denoisers::DenoiseError;
use scfp_core::landweber::StepRule;
use scfp_core::signal::{Domain, Shape, Signal};
use scfp_core::solvers::{LambdaSchedule, ProblemView, SolveConfig, SolveResult, SolveStatus};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn denoise_err(e: DenoiseError) -> PyErr {
    match e {
        DenoiseError::Transport(_) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn solve_err(e: scfp_core::solvers::SolveError) -> PyErr {
    match e {
        scfp_core::solvers::SolveError::Denoise(DenoiseError::Transport(msg)) => {
            PyIOError::new_err(msg)
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

fn signal_from_py(obj: &Bound<'_, PyAny>) -> PyResult<Signal> {
    if let Ok(arr) = obj.extract::<PyReadonlyArray1<f64>>() {
        let a = arr.as_array();
        let data: Vec<f64> = a.iter().copied().collect();
        return Ok(Signal::vector(&data));
    }
    if let Ok(arr) = obj.extract::<PyReadonlyArray2<f64>>() {
        let a = arr.as_array();
        let data: Vec<f64> = a.iter().copied().collect();
        return Signal::image(a.nrows(), a.ncols(), data).map_err(value_err);
    }
    if let Ok(arr) = obj.extract::<PyReadonlyArray2<Complex64>>() {
        let a = arr.as_array();
        let mut data = Vec::with_capacity(a.len() * 2);
        for v in a.iter() {
            data.push(v.re);
            data.push(v.im);
        }
        return Signal::complex_image(a.nrows(), a.ncols(), data).map_err(value_err);
    }
    if let Ok(arr) = obj.extract::<PyReadonlyArray3<f64>>() {
        let a = arr.as_array();
        let (r, c, ch) = (a.shape()[0], a.shape()[1], a.shape()[2]);
        let data: Vec<f64> = a.iter().copied().collect();
        return Signal::new(Shape::new(r, c, ch), Domain::Real, data).map_err(value_err);
    }
    Err(PyTypeError::new_err(
        "expected a float64 array (1-D, 2-D, or 3-D) or a complex128 2-D array",
    ))
}

fn signal_to_py<'py>(py: Python<'py>, s: &Signal) -> PyResult<Bound<'py, PyAny>> {
    let shape = s.shape();
    if s.domain() == Domain::Complex && shape.channels == 2 {
        let data: Vec<Complex64> = s
            .data()
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        let arr = data.into_pyarray(py).reshape([shape.rows, shape.cols])?;
        return Ok(arr.into_any());
    }
    let data = s.data().to_vec();
    if shape.channels == 1 && shape.cols == 1 {
        return Ok(data.into_pyarray(py).into_any());
    }
    if shape.channels == 1 {
        let arr = data.into_pyarray(py).reshape([shape.rows, shape.cols])?;
        return Ok(arr.into_any());
    }
    let arr = data
        .into_pyarray(py)
        .reshape([shape.rows, shape.cols, shape.channels])?;
    Ok(arr.into_any())
}

fn parse_step_rule(name: &str, value: f64, exponent: f64) -> PyResult<StepRule> {
    Ok(match name {
        "tau" => StepRule::TauExtrapolated,
        "polyak" => StepRule::Polyak,
        "constant" => StepRule::Constant(value),
        "diminishing" => StepRule::Diminishing {
            mu0: value,
            exponent,
        },
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown step rule '{other}' (tau, polyak, constant, diminishing)"
            )))
        }
    })
}

/// Bounded linear operator with forward and adjoint application.
#[pyclass(name = "Operator")]
struct PyOperator {
    inner: scfp_core::operators::LinearOperator,
}

#[pymethods]
impl PyOperator {
    #[staticmethod]
    fn identity(rows: usize, cols: usize) -> Self {
        PyOperator {
            inner: scfp_core::operators::identity(Shape::new(rows, cols, 1)),
        }
    }

    /// Dense matrix acting on flat vectors.
    #[staticmethod]
    fn dense(matrix: PyReadonlyArray2<f64>) -> PyResult<Self> {
        let a = matrix.as_array();
        let (out_len, in_len) = (a.nrows(), a.ncols());
        let data: Vec<f64> = a.iter().copied().collect();
        let inner = scfp_core::operators::build_dense(
            data,
            Shape::new(in_len, 1, 1),
            Shape::new(out_len, 1, 1),
        )
        .map_err(value_err)?;
        Ok(PyOperator { inner })
    }

    /// Circular 2-D convolution of a (rows, cols) image with an odd kernel.
    #[staticmethod]
    fn conv2d_circular(kernel: PyReadonlyArray2<f64>, rows: usize, cols: usize) -> PyResult<Self> {
        let k = kernel.as_array();
        let kern =
            scfp_core::operators::Kernel::new(k.nrows(), k.ncols(), k.iter().copied().collect())
                .map_err(value_err)?;
        let inner = scfp_core::operators::build_conv2d_circular(kern, Shape::new(rows, cols, 1))
            .map_err(value_err)?;
        Ok(PyOperator { inner })
    }

    /// Circular blur followed by downsampling with the given integer scale.
    #[staticmethod]
    fn downsample_blur(
        kernel: PyReadonlyArray2<f64>,
        rows: usize,
        cols: usize,
        scale: usize,
    ) -> PyResult<Self> {
        let k = kernel.as_array();
        let kern =
            scfp_core::operators::Kernel::new(k.nrows(), k.ncols(), k.iter().copied().collect())
                .map_err(value_err)?;
        let inner =
            scfp_core::operators::build_downsample_blur(kern, Shape::new(rows, cols, 1), scale)
                .map_err(value_err)?;
        Ok(PyOperator { inner })
    }

    /// Masked unitary Fourier sampling; kind is random, radial, or cartesian.
    #[staticmethod]
    #[pyo3(signature = (kind, fraction, rows, cols, seed = 0))]
    fn masked_fourier(
        kind: &str,
        fraction: f64,
        rows: usize,
        cols: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let kind = match kind {
            "random" => scfp_core::operators::MaskKind::Random,
            "radial" => scfp_core::operators::MaskKind::Radial,
            "cartesian" => scfp_core::operators::MaskKind::Cartesian,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown mask kind '{other}'"
                )))
            }
        };
        let mask = scfp_core::operators::make_mask(kind, fraction, rows, cols, seed)
            .map_err(value_err)?;
        let inner = scfp_core::operators::build_masked_fourier(mask).map_err(value_err)?;
        Ok(PyOperator { inner })
    }

    fn apply<'py>(&self, py: Python<'py>, x: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let sig = signal_from_py(x)?;
        let out = self.inner.apply(&sig).map_err(value_err)?;
        signal_to_py(py, &out)
    }

    fn adjoint<'py>(&self, py: Python<'py>, u: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let sig = signal_from_py(u)?;
        let out = self.inner.adjoint(&sig).map_err(value_err)?;
        signal_to_py(py, &out)
    }

    /// Declared upper bound on the operator norm, if known exactly.
    #[getter]
    fn norm_bound(&self) -> Option<f64> {
        self.inner.norm_bound()
    }

    #[pyo3(signature = (tol = 1e-10, max_iter = 2000))]
    fn estimate_norm(&self, tol: f64, max_iter: usize) -> (f64, usize, bool) {
        let est = scfp_core::operators::op_norm_estimate(&self.inner, tol, max_iter);
        (est.value, est.iterations, est.converged)
    }

    #[pyo3(signature = (trials = 100, tol = 1e-10))]
    fn adjoint_check(&self, trials: usize, tol: f64) -> (bool, f64) {
        let report = scfp_core::operators::adjoint_check(&self.inner, trials, tol);
        (report.pass, report.worst_violation)
    }

    #[getter]
    fn in_shape(&self) -> (usize, usize, usize) {
        let s = self.inner.in_shape();
        (s.rows, s.cols, s.channels)
    }

    #[getter]
    fn out_shape(&self) -> (usize, usize, usize) {
        let s = self.inner.out_shape();
        (s.rows, s.cols, s.channels)
    }
}

/// Closed convex constraint set with a metric projection.
#[pyclass(name = "ConvexSet")]
struct PyConvexSet {
    inner: scfp_core::projections::ConvexSet,
}

#[pymethods]
impl PyConvexSet {
    #[staticmethod]
    fn l2_ball(center: &Bound<'_, PyAny>, radius: f64) -> PyResult<Self> {
        let c = signal_from_py(center)?;
        Ok(PyConvexSet {
            inner: scfp_core::projections::ConvexSet::l2_ball(c, radius).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn l1_ball(center: &Bound<'_, PyAny>, radius: f64) -> PyResult<Self> {
        let c = signal_from_py(center)?;
        Ok(PyConvexSet {
            inner: scfp_core::projections::ConvexSet::l1_ball(c, radius).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn singleton(center: &Bound<'_, PyAny>) -> PyResult<Self> {
        Ok(PyConvexSet {
            inner: scfp_core::projections::ConvexSet::singleton(signal_from_py(center)?),
        })
    }

    #[staticmethod]
    #[pyo3(name = "box")]
    fn box_set(lower: &Bound<'_, PyAny>, upper: &Bound<'_, PyAny>) -> PyResult<Self> {
        Ok(PyConvexSet {
            inner: scfp_core::projections::ConvexSet::boxed(
                signal_from_py(lower)?,
                signal_from_py(upper)?,
            )
            .map_err(value_err)?,
        })
    }

    fn project<'py>(&self, py: Python<'py>, x: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let out = self.inner.project(&signal_from_py(x)?).map_err(value_err)?;
        signal_to_py(py, &out)
    }

    #[pyo3(signature = (x, tol = None))]
    fn contains(&self, x: &Bound<'_, PyAny>, tol: Option<f64>) -> PyResult<bool> {
        let tol = tol.unwrap_or_else(|| self.inner.default_tol());
        self.inner
            .contains(&signal_from_py(x)?, tol)
            .map_err(value_err)
    }

    fn distance(&self, x: &Bound<'_, PyAny>) -> PyResult<f64> {
        self.inner.distance(&signal_from_py(x)?).map_err(value_err)
    }

    #[getter]
    fn radius(&self) -> f64 {
        self.inner.radius()
    }
}

/// Denoiser with an optional demicontraction constant and (for built-ins)
/// an exact fixed-point oracle.
#[pyclass(name = "Denoiser")]
struct PyDenoiser {
    inner: scfp_core::denoisers::Denoiser,
}

#[pymethods]
impl PyDenoiser {
    /// Projection onto low Fourier frequencies (alpha = -1).
    #[staticmethod]
    #[pyo3(signature = (rows, cols, cutoff, channels = 1))]
    fn lowpass(rows: usize, cols: usize, cutoff: f64, channels: usize) -> PyResult<Self> {
        Ok(PyDenoiser {
            inner: scfp_core::denoisers::build_lowpass_denoiser(
                Shape::new(rows, cols, channels),
                cutoff,
            )
            .map_err(denoise_err)?,
        })
    }

    /// factor * Id with factor in [0, 1).
    #[staticmethod]
    #[pyo3(signature = (rows, cols, factor, channels = 1))]
    fn shrink(rows: usize, cols: usize, factor: f64, channels: usize) -> PyResult<Self> {
        Ok(PyDenoiser {
            inner: scfp_core::denoisers::build_shrink_denoiser(
                Shape::new(rows, cols, channels),
                factor,
            )
            .map_err(denoise_err)?,
        })
    }

    /// Orthogonal projection onto the span of the given vectors.
    #[staticmethod]
    fn subspace(basis: &Bound<'_, PyList>) -> PyResult<Self> {
        let spanning: Vec<Signal> = basis
            .iter()
            .map(|v| signal_from_py(&v))
            .collect::<PyResult<_>>()?;
        Ok(PyDenoiser {
            inner: scfp_core::denoisers::build_subspace_denoiser(&spanning)
                .map_err(denoise_err)?,
        })
    }

    /// Soft-threshold of the coefficients on an orthonormal basis.
    #[staticmethod]
    fn soft_threshold(basis: &Bound<'_, PyList>, theta: f64) -> PyResult<Self> {
        let spanning: Vec<Signal> = basis
            .iter()
            .map(|v| signal_from_py(&v))
            .collect::<PyResult<_>>()?;
        Ok(PyDenoiser {
            inner: scfp_core::denoisers::build_soft_threshold_denoiser(&spanning, theta)
                .map_err(denoise_err)?,
        })
    }

    /// External denoiser process speaking the DNZ1/DNR1 protocol.
    #[staticmethod]
    #[pyo3(signature = (command, sigma_f = 0.0))]
    fn external(command: Vec<String>, sigma_f: f64) -> PyResult<Self> {
        if command.is_empty() {
            return Err(PyValueError::new_err("command must not be empty"));
        }
        Ok(PyDenoiser {
            inner: scfp_core::denoisers::external_denoiser(&command[0], &command[1..], sigma_f)
                .map_err(denoise_err)?,
        })
    }

    fn denoise<'py>(&self, py: Python<'py>, x: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let out = self
            .inner
            .denoise(&signal_from_py(x)?)
            .map_err(denoise_err)?;
        signal_to_py(py, &out)
    }

    /// T_w = w T + (1 - w) Id (built-in denoisers only).
    fn relax(&self, w: f64) -> PyResult<Self> {
        let clone = self.inner.try_clone().ok_or_else(|| {
            PyValueError::new_err("external denoisers cannot be relaxed after construction")
        })?;
        Ok(PyDenoiser {
            inner: scfp_core::denoisers::relax(clone, w).map_err(denoise_err)?,
        })
    }

    fn red_value(&self, x: &Bound<'_, PyAny>) -> PyResult<f64> {
        scfp_core::denoisers::red_value(&self.inner, &signal_from_py(x)?).map_err(denoise_err)
    }

    fn project_fix<'py>(
        &self,
        py: Python<'py>,
        x: &Bound<'py, PyAny>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let out = self
            .inner
            .project_fix(&signal_from_py(x)?)
            .map_err(denoise_err)?;
        signal_to_py(py, &out)
    }

    #[getter]
    fn alpha(&self) -> Option<f64> {
        self.inner.alpha()
    }

    #[getter]
    fn sigma_f(&self) -> f64 {
        self.inner.sigma_f()
    }
}

#[pyfunction]
fn radius_from_noise(n0: usize, sigma: f64, epsilon: f64) -> PyResult<f64> {
    scfp_core::projections::radius_from_noise(n0, sigma, epsilon).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (reference, test, peak = 255.0))]
fn psnr(reference: &Bound<'_, PyAny>, test: &Bound<'_, PyAny>, peak: f64) -> PyResult<f64> {
    scfp_core::signal::psnr(&signal_from_py(reference)?, &signal_from_py(test)?, peak)
        .map_err(value_err)
}

#[pyfunction]
fn add_noise<'py>(
    py: Python<'py>,
    x: &Bound<'py, PyAny>,
    sigma: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let spec = scfp_core::signal::NoiseSpec::gaussian(sigma, seed).map_err(value_err)?;
    let out = scfp_core::signal::add_noise(&signal_from_py(x)?, &spec);
    signal_to_py(py, &out)
}

#[pyfunction]
fn fidelity(a: &PyOperator, q: &PyConvexSet, x: &Bound<'_, PyAny>) -> PyResult<f64> {
    scfp_core::landweber::fidelity(&a.inner, &q.inner, &signal_from_py(x)?).map_err(value_err)
}

#[pyfunction]
fn grad_fidelity<'py>(
    py: Python<'py>,
    a: &PyOperator,
    q: &PyConvexSet,
    x: &Bound<'py, PyAny>,
) -> PyResult<Bound<'py, PyAny>> {
    let out = scfp_core::landweber::grad_fidelity(&a.inner, &q.inner, &signal_from_py(x)?)
        .map_err(value_err)?;
    signal_to_py(py, &out)
}

#[pyfunction]
fn tau(a: &PyOperator, q: &PyConvexSet, x: &Bound<'_, PyAny>) -> PyResult<f64> {
    let a_norm = scfp_core::landweber::resolved_norm(&a.inner);
    scfp_core::landweber::tau(&a.inner, &q.inner, &signal_from_py(x)?, a_norm).map_err(value_err)
}

#[pyfunction]
fn polyak_step(a: &PyOperator, q: &PyConvexSet, x: &Bound<'_, PyAny>) -> PyResult<f64> {
    let a_norm = scfp_core::landweber::resolved_norm(&a.inner);
    scfp_core::landweber::polyak_step(&a.inner, &q.inner, &signal_from_py(x)?, a_norm)
        .map_err(value_err)
}

#[pyfunction]
fn landweber_apply<'py>(
    py: Python<'py>,
    a: &PyOperator,
    q: &PyConvexSet,
    x: &Bound<'py, PyAny>,
) -> PyResult<Bound<'py, PyAny>> {
    let a_norm = scfp_core::landweber::resolved_norm(&a.inner);
    let out = scfp_core::landweber::landweber_apply(
        &a.inner,
        &q.inner,
        &signal_from_py(x)?,
        a_norm * a_norm,
    )
    .map_err(value_err)?;
    signal_to_py(py, &out)
}

#[pyfunction]
#[pyo3(signature = (denoiser, samples, pairs = 1000, seed = 0, quantile = None))]
fn estimate_alpha(
    denoiser: &PyDenoiser,
    samples: &Bound<'_, PyList>,
    pairs: usize,
    seed: u64,
    quantile: Option<f64>,
) -> PyResult<(f64, usize, usize)> {
    let sample_signals: Vec<Signal> = samples
        .iter()
        .map(|v| signal_from_py(&v))
        .collect::<PyResult<_>>()?;
    let est = scfp_core::denoisers::estimate_alpha(
        &denoiser.inner,
        &sample_signals,
        pairs,
        seed,
        quantile,
    )
    .map_err(denoise_err)?;
    Ok((est.alpha_hat, est.pairs_used, est.pairs_skipped))
}

fn result_to_py<'py>(
    py: Python<'py>,
    result: SolveResult,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyDict>)> {
    let info = PyDict::new(py);
    let records = &result.trace.records;
    info.set_item("k", records.iter().map(|r| r.k).collect::<Vec<_>>())?;
    info.set_item("f", records.iter().map(|r| r.f).collect::<Vec<_>>())?;
    info.set_item(
        "residual",
        records.iter().map(|r| r.residual).collect::<Vec<_>>(),
    )?;
    info.set_item("step", records.iter().map(|r| r.step).collect::<Vec<_>>())?;
    info.set_item(
        "dist_q",
        records.iter().map(|r| r.dist_q).collect::<Vec<_>>(),
    )?;
    info.set_item(
        "denoiser_residual",
        records
            .iter()
            .map(|r| r.denoiser_residual)
            .collect::<Vec<_>>(),
    )?;
    info.set_item(
        "grad_norm",
        records.iter().map(|r| r.grad_norm).collect::<Vec<_>>(),
    )?;
    info.set_item("psnr", records.iter().map(|r| r.psnr).collect::<Vec<_>>())?;
    info.set_item("iters_run", result.iters_run)?;
    info.set_item("wall_ms", result.wall_ms)?;
    info.set_item(
        "status",
        match result.status {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIters => "max_iters",
            SolveStatus::InfeasibleDirection => "infeasible_direction",
        },
    )?;
    Ok((signal_to_py(py, &result.x)?, info))
}

#[allow(clippy::too_many_arguments)]
fn build_config(
    w: f64,
    step_rule: &str,
    step_value: f64,
    step_exponent: f64,
    lam: f64,
    max_iters: usize,
    stop_tol: f64,
    trace_every: usize,
    allow_unguarded: bool,
    psnr_peak: f64,
) -> PyResult<SolveConfig> {
    Ok(SolveConfig {
        max_iters,
        lambda: LambdaSchedule::Constant(lam),
        relax_floor: 1e-3,
        w,
        step_rule: parse_step_rule(step_rule, step_value, step_exponent)?,
        stop_tol,
        trace_every,
        record_iterates: false,
        allow_unguarded,
        psnr_peak,
    })
}

/// Run the PnP-PLO iteration; returns (solution, info dict).
#[pyfunction]
#[pyo3(signature = (a, q, denoiser, x0, w = 1.0, step_rule = "tau", step_value = 1.0,
        lam = 1.0, max_iters = 1000, stop_tol = 1e-9,
        trace_every = 1, allow_unguarded = false, psnr_peak = 255.0, ground_truth = None))]
#[allow(clippy::too_many_arguments)]
fn pnp_plo<'py>(
    py: Python<'py>,
    a: &PyOperator,
    q: &PyConvexSet,
    denoiser: &PyDenoiser,
    x0: &Bound<'py, PyAny>,
    w: f64,
    step_rule: &str,
    step_value: f64,
    lam: f64,
    max_iters: usize,
    stop_tol: f64,
    trace_every: usize,
    allow_unguarded: bool,
    psnr_peak: f64,
    ground_truth: Option<&Bound<'py, PyAny>>,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyDict>)> {
    let config = build_config(
        w,
        step_rule,
        step_value,
        0.1,
        lam,
        max_iters,
        stop_tol,
        trace_every,
        allow_unguarded,
        psnr_peak,
    )?;
    let gt = ground_truth.map(signal_from_py).transpose()?;
    let view = ProblemView {
        a: &a.inner,
        q: &q.inner,
        denoiser: &denoiser.inner,
        ground_truth: gt.as_ref(),
    };
    let result =
        scfp_core::solvers::pnp_plo_view(view, &config, &signal_from_py(x0)?).map_err(solve_err)?;
    result_to_py(py, result)
}

/// RED steepest descent baseline.
#[pyfunction]
#[pyo3(signature = (a, q, denoiser, x0, mu, lambda_reg, max_iters = 1000, stop_tol = 1e-9,
        trace_every = 1, psnr_peak = 255.0, ground_truth = None))]
#[allow(clippy::too_many_arguments)]
fn red_sd<'py>(
    py: Python<'py>,
    a: &PyOperator,
    q: &PyConvexSet,
    denoiser: &PyDenoiser,
    x0: &Bound<'py, PyAny>,
    mu: f64,
    lambda_reg: f64,
    max_iters: usize,
    stop_tol: f64,
    trace_every: usize,
    psnr_peak: f64,
    ground_truth: Option<&Bound<'py, PyAny>>,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyDict>)> {
    let config = build_config(
        1.0,
        "tau",
        1.0,
        0.1,
        1.0,
        max_iters,
        stop_tol,
        trace_every,
        true,
        psnr_peak,
    )?;
    let gt = ground_truth.map(signal_from_py).transpose()?;
    let view = ProblemView {
        a: &a.inner,
        q: &q.inner,
        denoiser: &denoiser.inner,
        ground_truth: gt.as_ref(),
    };
    let result =
        scfp_core::solvers::red_sd_view(view, &config, &signal_from_py(x0)?, mu, lambda_reg)
            .map_err(solve_err)?;
    result_to_py(py, result)
}

/// RED-PRO hybrid steepest descent baseline (constant or diminishing mu).
#[pyfunction]
#[pyo3(signature = (a, q, denoiser, x0, mu0, exponent = 0.1, diminishing = true, w = 0.5,
        max_iters = 1000, stop_tol = 1e-9, trace_every = 1, allow_unguarded = false,
        psnr_peak = 255.0, ground_truth = None))]
#[allow(clippy::too_many_arguments)]
fn red_pro<'py>(
    py: Python<'py>,
    a: &PyOperator,
    q: &PyConvexSet,
    denoiser: &PyDenoiser,
    x0: &Bound<'py, PyAny>,
    mu0: f64,
    exponent: f64,
    diminishing: bool,
    w: f64,
    max_iters: usize,
    stop_tol: f64,
    trace_every: usize,
    allow_unguarded: bool,
    psnr_peak: f64,
    ground_truth: Option<&Bound<'py, PyAny>>,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyDict>)> {
    let config = build_config(
        w,
        "tau",
        1.0,
        0.1,
        1.0,
        max_iters,
        stop_tol,
        trace_every,
        allow_unguarded,
        psnr_peak,
    )?;
    let schedule = if diminishing {
        StepRule::Diminishing { mu0, exponent }
    } else {
        StepRule::Constant(mu0)
    };
    let gt = ground_truth.map(signal_from_py).transpose()?;
    let view = ProblemView {
        a: &a.inner,
        q: &q.inner,
        denoiser: &denoiser.inner,
        ground_truth: gt.as_ref(),
    };
    let result = scfp_core::solvers::red_pro_view(view, &config, &signal_from_py(x0)?, schedule)
        .map_err(solve_err)?;
    result_to_py(py, result)
}

/// PnP forward-backward splitting baseline.
#[pyfunction]
#[pyo3(signature = (a, q, denoiser, x0, s, max_iters = 1000, stop_tol = 1e-9,
        trace_every = 1, psnr_peak = 255.0, ground_truth = None))]
#[allow(clippy::too_many_arguments)]
fn pnp_fbs<'py>(
    py: Python<'py>,
    a: &PyOperator,
    q: &PyConvexSet,
    denoiser: &PyDenoiser,
    x0: &Bound<'py, PyAny>,
    s: f64,
    max_iters: usize,
    stop_tol: f64,
    trace_every: usize,
    psnr_peak: f64,
    ground_truth: Option<&Bound<'py, PyAny>>,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyDict>)> {
    let config = build_config(
        1.0,
        "tau",
        1.0,
        0.1,
        1.0,
        max_iters,
        stop_tol,
        trace_every,
        true,
        psnr_peak,
    )?;
    let gt = ground_truth.map(signal_from_py).transpose()?;
    let view = ProblemView {
        a: &a.inner,
        q: &q.inner,
        denoiser: &denoiser.inner,
        ground_truth: gt.as_ref(),
    };
    let result = scfp_core::solvers::pnp_fbs_view(view, &config, &signal_from_py(x0)?, s)
        .map_err(solve_err)?;
    result_to_py(py, result)
}

/// Certified feasible point via the alternating-projection oracle
/// (built-in denoisers only).
#[pyfunction]
#[pyo3(signature = (a, q, denoiser, start, tol = 1e-8))]
fn oracle_feasible_point<'py>(
    py: Python<'py>,
    a: &PyOperator,
    q: &PyConvexSet,
    denoiser: &PyDenoiser,
    start: &Bound<'py, PyAny>,
    tol: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let view = ProblemView {
        a: &a.inner,
        q: &q.inner,
        denoiser: &denoiser.inner,
        ground_truth: None,
    };
    let out = scfp_core::solvers::oracle_feasible_point_view(view, &signal_from_py(start)?, tol)
        .map_err(solve_err)?;
    signal_to_py(py, &out)
}

/// Run a config-file experiment exactly like `scfp solve`; returns the
/// summary as a dict.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config_path: &str) -> PyResult<Bound<'py, PyDict>> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| PyIOError::new_err(format!("cannot read '{config_path}': {e}")))?;
    let config = scfp_core::experiments::parse_config(&text).map_err(value_err)?;
    let report = scfp_core::experiments::run_experiment(&config).map_err(|e| {
        if e.exit_code() == 2 {
            PyIOError::new_err(e.to_string())
        } else {
            PyValueError::new_err(e.to_string())
        }
    })?;
    let d = PyDict::new(py);
    d.set_item("task", &report.summary.task)?;
    d.set_item("solver", &report.summary.solver)?;
    d.set_item("step_rule", &report.summary.step_rule)?;
    d.set_item("w", report.summary.w)?;
    d.set_item("epsilon", report.summary.epsilon)?;
    d.set_item("k", report.summary.max_iters)?;
    d.set_item("iters_run", report.summary.iters_run)?;
    d.set_item("final_f", report.summary.final_f)?;
    d.set_item("final_psnr", report.summary.final_psnr)?;
    d.set_item("degraded_psnr", report.degraded_psnr)?;
    d.set_item("wall_ms", report.wall_ms)?;
    d.set_item("trace_path", report.trace_path.display().to_string())?;
    d.set_item("restored_path", report.restored_path.display().to_string())?;
    Ok(d)
}

#[pymodule]
fn scfp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyOperator>()?;
    m.add_class::<PyConvexSet>()?;
    m.add_class::<PyDenoiser>()?;
    m.add_function(wrap_pyfunction!(radius_from_noise, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(add_noise, m)?)?;
    m.add_function(wrap_pyfunction!(fidelity, m)?)?;
    m.add_function(wrap_pyfunction!(grad_fidelity, m)?)?;
    m.add_function(wrap_pyfunction!(tau, m)?)?;
    m.add_function(wrap_pyfunction!(polyak_step, m)?)?;
    m.add_function(wrap_pyfunction!(landweber_apply, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(pnp_plo, m)?)?;
    m.add_function(wrap_pyfunction!(red_sd, m)?)?;
    m.add_function(wrap_pyfunction!(red_pro, m)?)?;
    m.add_function(wrap_pyfunction!(pnp_fbs, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_feasible_point, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
