//! Python bindings for the scenario-discovery core: sampling, the stress
//! surrogate, PRIM and CART box induction, GP metamodels, and the adaptive
//! sampling loop, all behind one `sdforge` extension module.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use sdforge_core::adaptive::{AdaptiveConfig, AdaptiveMode, AdaptiveRun};
use sdforge_core::cart::{self, CartConfig};
use sdforge_core::error::Error;
use sdforge_core::experiment::{self, ExperimentConfig, UncertaintyDim, UncertaintySpace};
use sdforge_core::metamodel::{self, GPModel, Hyper, KernelParams};
use sdforge_core::metrics;
use sdforge_core::prim::{self, BoxStats, LabeledSamples, PrimConfig, ScenarioBox};
use sdforge_core::{sampling, seed, simulator};

/// Points in native units with per-scenario outcome deltas and labels.
type SimulatedDesign = (Vec<Vec<f64>>, Vec<f64>, Vec<bool>);

fn to_py(e: Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// A space inferred from explicit bounds, or the unit cube when none are
/// given. Python callers rarely care about dim names or baselines.
fn space_from(bounds: Option<Vec<(f64, f64)>>, k: usize) -> PyResult<UncertaintySpace> {
    match bounds {
        None => Ok(UncertaintySpace::unit_cube(k)),
        Some(bounds) => {
            if bounds.len() != k {
                return Err(PyValueError::new_err(format!(
                    "got {} bounds for {k}-dimensional points",
                    bounds.len()
                )));
            }
            let dims = bounds
                .iter()
                .enumerate()
                .map(|(i, &(low, high))| UncertaintyDim {
                    name: format!("x{}", i + 1),
                    low,
                    high,
                    baseline: 0.5 * (low + high),
                })
                .collect();
            Ok(UncertaintySpace { dims })
        }
    }
}

fn dataset_from(
    points: Vec<Vec<f64>>,
    outputs: Vec<f64>,
    labels: Option<Vec<bool>>,
) -> PyResult<LabeledSamples> {
    if points.is_empty() {
        return Err(PyValueError::new_err("no points"));
    }
    let k = points[0].len();
    if k == 0 || points.iter().any(|p| p.len() != k) {
        return Err(PyValueError::new_err("points must share one nonzero width"));
    }
    if outputs.len() != points.len() {
        return Err(PyValueError::new_err("outputs must match points"));
    }
    let labels = match labels {
        Some(l) if l.len() != points.len() => {
            return Err(PyValueError::new_err("labels must match points"));
        }
        Some(l) => l,
        None => outputs.iter().map(|&y| y >= 0.0).collect(),
    };
    Ok(LabeledSamples {
        points,
        outputs,
        labels,
    })
}

/// An axis-aligned scenario box with its quality statistics.
#[pyclass(name = "Box", frozen)]
struct PyBox {
    #[pyo3(get)]
    limits: Vec<Option<(f64, f64)>>,
    #[pyo3(get)]
    coverage: f64,
    #[pyo3(get)]
    density: f64,
    #[pyo3(get)]
    support: f64,
    #[pyo3(get)]
    n_inside: usize,
}

#[pymethods]
impl PyBox {
    fn __repr__(&self) -> String {
        let dims: Vec<String> = self
            .limits
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|(lo, hi)| format!("x{}=[{lo:.3}, {hi:.3}]", i + 1)))
            .collect();
        format!(
            "Box({}, coverage={:.3}, density={:.3})",
            if dims.is_empty() {
                "unrestricted".to_string()
            } else {
                dims.join(", ")
            },
            self.coverage,
            self.density
        )
    }

    /// Closed-interval membership; unrestricted dims always match.
    fn contains(&self, point: Vec<f64>) -> PyResult<bool> {
        if point.len() != self.limits.len() {
            return Err(PyValueError::new_err("point width mismatch"));
        }
        Ok(self
            .limits
            .iter()
            .zip(&point)
            .all(|(l, &x)| l.is_none_or(|(lo, hi)| x >= lo && x <= hi)))
    }
}

fn py_box(b: &ScenarioBox, s: &BoxStats) -> PyBox {
    PyBox {
        limits: b.limits.clone(),
        coverage: s.coverage,
        density: s.density,
        support: s.support,
        n_inside: s.n_inside,
    }
}

/// A fitted Gaussian-process surrogate over the experiment space.
#[pyclass(name = "GpModel", frozen)]
struct PyGpModel {
    inner: GPModel,
}

#[pymethods]
impl PyGpModel {
    /// Fits with multi-start hyperparameter optimization.
    #[staticmethod]
    #[pyo3(signature = (points, outputs, bounds=None, budget=200, seed=0))]
    fn fit(
        points: Vec<Vec<f64>>,
        outputs: Vec<f64>,
        bounds: Option<Vec<(f64, f64)>>,
        budget: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let data = dataset_from(points, outputs, None)?;
        let space = space_from(bounds, data.points[0].len())?;
        let inner = metamodel::fit(&data, &space, &Hyper::Optimize { budget, seed }).map_err(to_py)?;
        Ok(PyGpModel { inner })
    }

    /// Fits at fixed kernel parameters, skipping the optimizer.
    #[staticmethod]
    #[pyo3(signature = (points, outputs, signal_variance, length_scales, noise_variance, bounds=None))]
    fn fit_fixed(
        points: Vec<Vec<f64>>,
        outputs: Vec<f64>,
        signal_variance: f64,
        length_scales: Vec<f64>,
        noise_variance: f64,
        bounds: Option<Vec<(f64, f64)>>,
    ) -> PyResult<Self> {
        let data = dataset_from(points, outputs, None)?;
        let space = space_from(bounds, data.points[0].len())?;
        let hyper = Hyper::Fixed(KernelParams {
            signal_variance,
            length_scales,
            noise_variance,
        });
        let inner = metamodel::fit(&data, &space, &hyper).map_err(to_py)?;
        Ok(PyGpModel { inner })
    }

    /// Posterior means and variances at the query points.
    fn predict(&self, points: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let p = self.inner.predict(&points).map_err(to_py)?;
        Ok((p.mean, p.variance))
    }

    #[getter]
    fn log_marginal_likelihood(&self) -> f64 {
        self.inner.log_marginal_likelihood
    }
}

/// Everything `Experiment.adaptive` produces: the simulated dataset, the
/// final surrogate, and the boxes induced from its pool labels.
#[pyclass(name = "AdaptiveResult", frozen)]
struct PyAdaptiveResult {
    #[pyo3(get)]
    true_calls: usize,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    points: Vec<Vec<f64>>,
    #[pyo3(get)]
    deltas: Vec<f64>,
    #[pyo3(get)]
    labels: Vec<bool>,
    #[pyo3(get)]
    boxes: Vec<Py<PyBox>>,
    #[pyo3(get)]
    model: Py<PyGpModel>,
}

/// A loaded experiment: uncertainty space, policy lever, simulator id,
/// vulnerability rule, and defaults for scenario count and seed.
#[pyclass(name = "Experiment")]
struct PyExperiment {
    cfg: ExperimentConfig,
}

impl PyExperiment {
    fn resolved(&self, n: Option<usize>, seed_value: Option<u64>) -> (usize, u64) {
        (
            n.unwrap_or(self.cfg.n_scenarios as usize),
            seed_value.unwrap_or(self.cfg.seed),
        )
    }

    fn simulated(&self, n: usize, seed_value: u64) -> PyResult<LabeledSamples> {
        // Same stage derivation as the command line, so designs agree.
        let mut rng = seed::rng(seed_value, "sample", 0);
        let m = sampling::lhs_with(&self.cfg.space, n, &mut rng);
        let outcomes = simulator::evaluate_matrix(&self.cfg, &m).map_err(to_py)?;
        let deltas: Vec<f64> = outcomes.iter().map(|o| o.delta).collect();
        let labels = deltas.iter().map(|&d| self.cfg.rule.label(d)).collect();
        Ok(LabeledSamples {
            points: m.points,
            outputs: deltas,
            labels,
        })
    }
}

#[pymethods]
impl PyExperiment {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let cfg = experiment::parse_experiment(text).map_err(to_py)?;
        Ok(PyExperiment { cfg })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let cfg = experiment::load_experiment(path).map_err(to_py)?;
        Ok(PyExperiment { cfg })
    }

    #[getter]
    fn k(&self) -> usize {
        self.cfg.space.k()
    }

    #[getter]
    fn dim_names(&self) -> Vec<String> {
        self.cfg.space.dims.iter().map(|d| d.name.clone()).collect()
    }

    #[getter]
    fn bounds(&self) -> Vec<(f64, f64)> {
        self.cfg.space.bounds()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.cfg.seed
    }

    #[getter]
    fn n_scenarios(&self) -> u64 {
        self.cfg.n_scenarios
    }

    #[getter]
    fn lever_delta(&self) -> f64 {
        self.cfg.lever.delta
    }

    /// Simulates an LHS design; returns (points, deltas, labels) in native
    /// units. Defaults come from the experiment file.
    #[pyo3(signature = (n=None, seed=None))]
    fn simulate(&self, n: Option<usize>, seed: Option<u64>) -> PyResult<SimulatedDesign> {
        let (n, seed_value) = self.resolved(n, seed);
        let data = self.simulated(n, seed_value)?;
        Ok((data.points, data.outputs, data.labels))
    }

    /// Simulates, then runs the peel-select-cover loop.
    #[pyo3(signature = (n=None, seed=None, max_boxes=5, stop_coverage=0.85))]
    fn discover(
        &self,
        n: Option<usize>,
        seed: Option<u64>,
        max_boxes: usize,
        stop_coverage: f64,
    ) -> PyResult<Vec<PyBox>> {
        let (n, seed_value) = self.resolved(n, seed);
        let data = self.simulated(n, seed_value)?;
        let entries = prim::cover(
            &data,
            &PrimConfig::default(),
            &self.cfg.space,
            max_boxes,
            stop_coverage,
        )
        .map_err(to_py)?;
        Ok(entries
            .iter()
            .map(|e| py_box(&e.scenario_box, &e.stats))
            .collect())
    }

    /// Counts vulnerable scenarios at each lever setting over one shared
    /// scenario set; returns (counts, threshold).
    #[pyo3(signature = (deltas, n=None, seed=None, cutoff=2))]
    fn sweep(
        &self,
        deltas: Vec<f64>,
        n: Option<usize>,
        seed: Option<u64>,
        cutoff: usize,
    ) -> PyResult<(Vec<usize>, Option<f64>)> {
        let (n, seed_value) = self.resolved(n, seed);
        let result =
            metrics::policy_sweep(&self.cfg, &deltas, n, seed_value, cutoff).map_err(to_py)?;
        Ok((result.vulnerable_counts, result.threshold))
    }

    /// Runs the adaptive sampling loop to completion.
    #[pyo3(signature = (n_init=100, pool_size=2000, n_iter=50, batch=1, mode="interior_or_border",
                        interior_prob=0.5, seed=None, budget=200))]
    #[allow(clippy::too_many_arguments)]
    fn adaptive(
        &self,
        py: Python<'_>,
        n_init: usize,
        pool_size: usize,
        n_iter: usize,
        batch: usize,
        mode: &str,
        interior_prob: f64,
        seed: Option<u64>,
        budget: usize,
    ) -> PyResult<PyAdaptiveResult> {
        let mode = match mode {
            "interior_or_border" => AdaptiveMode::InteriorOrBorder,
            "border_only" => AdaptiveMode::BorderOnly,
            other => {
                return Err(PyValueError::new_err(format!(
                    "mode must be interior_or_border or border_only, got {other:?}"
                )));
            }
        };
        let cfg = AdaptiveConfig {
            n_init,
            pool_size,
            n_iter,
            batch,
            mode,
            interior_prob,
            hyper: Hyper::Optimize { budget, seed: 0 },
            seed: seed.unwrap_or(self.cfg.seed),
            ..AdaptiveConfig::default()
        };
        let mut run = AdaptiveRun::new(cfg, self.cfg.clone()).map_err(to_py)?;
        while run.remaining() > 0 {
            run.step().map_err(to_py)?;
        }
        run.finalize().map_err(to_py)?;

        let boxes = run
            .state
            .final_boxes
            .iter()
            .map(|e| Py::new(py, py_box(&e.scenario_box, &e.stats)))
            .collect::<PyResult<Vec<_>>>()?;
        let gp = run.state.final_gp.clone().expect("finalized run has a model");
        Ok(PyAdaptiveResult {
            true_calls: run.state.true_calls,
            iterations: run.state.iteration,
            points: run.state.dataset.points.clone(),
            deltas: run.state.dataset.outputs.clone(),
            labels: run.state.dataset.labels.clone(),
            boxes,
            model: Py::new(py, PyGpModel { inner: gp })?,
        })
    }
}

/// The closed-form pedestrian stress response in native units.
#[pyfunction]
fn stress_surrogate(vegetation: f64, building: f64, person: f64, extraversion: f64) -> PyResult<f64> {
    simulator::stress_surrogate(vegetation, building, person, extraversion).map_err(to_py)
}

/// Latin hypercube design; one point per axis bin on every dimension.
#[pyfunction]
#[pyo3(name = "lhs", signature = (n, k, seed, bounds=None))]
fn lhs_py(n: usize, k: usize, seed: u64, bounds: Option<Vec<(f64, f64)>>) -> PyResult<Vec<Vec<f64>>> {
    if n == 0 || k == 0 {
        return Err(PyValueError::new_err("n and k must be positive"));
    }
    let space = space_from(bounds, k)?;
    Ok(sampling::lhs(&space, n, seed).points)
}

/// Sampling density of n points in k dimensions relative to a fixed
/// 200-point, 3-dimension reference design.
#[pyfunction]
fn relative_density(n_samples: u64, k: u64) -> f64 {
    sampling::relative_density(n_samples, k).j
}

/// PRIM peeling with automatic box selection, repeated on the residual
/// until coverage or the box budget is exhausted.
#[pyfunction]
#[pyo3(signature = (points, outputs, labels=None, bounds=None, max_boxes=5, stop_coverage=0.85))]
fn discover(
    points: Vec<Vec<f64>>,
    outputs: Vec<f64>,
    labels: Option<Vec<bool>>,
    bounds: Option<Vec<(f64, f64)>>,
    max_boxes: usize,
    stop_coverage: f64,
) -> PyResult<Vec<PyBox>> {
    let data = dataset_from(points, outputs, labels)?;
    let space = space_from(bounds, data.points[0].len())?;
    let entries = prim::cover(&data, &PrimConfig::default(), &space, max_boxes, stop_coverage)
        .map_err(to_py)?;
    Ok(entries
        .iter()
        .map(|e| py_box(&e.scenario_box, &e.stats))
        .collect())
}

/// Pruned classification tree, reported as disjoint vulnerable-leaf boxes.
#[pyfunction]
#[pyo3(signature = (points, outputs, labels=None, bounds=None, min_split=20, min_leaf=10, max_depth=12))]
fn cart_boxes(
    points: Vec<Vec<f64>>,
    outputs: Vec<f64>,
    labels: Option<Vec<bool>>,
    bounds: Option<Vec<(f64, f64)>>,
    min_split: usize,
    min_leaf: usize,
    max_depth: usize,
) -> PyResult<Vec<PyBox>> {
    let data = dataset_from(points, outputs, labels)?;
    let space = space_from(bounds, data.points[0].len())?;
    let cfg = CartConfig {
        min_split,
        min_leaf,
        max_depth,
    };
    let tree = cart::prune(&cart::grow(&data, &cfg).map_err(to_py)?);
    Ok(cart::leaves_to_boxes(&tree, &space, &data)
        .iter()
        .map(|(b, s)| py_box(b, s))
        .collect())
}

/// Coefficient of determination of predictions against actuals.
#[pyfunction]
fn r_squared(actual: Vec<f64>, predicted: Vec<f64>) -> PyResult<f64> {
    Ok(metrics::r_squared(&actual, &predicted).map_err(to_py)?.r_squared)
}

#[pymodule]
fn sdforge(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(stress_surrogate, m)?)?;
    m.add_function(wrap_pyfunction!(lhs_py, m)?)?;
    m.add_function(wrap_pyfunction!(relative_density, m)?)?;
    m.add_function(wrap_pyfunction!(discover, m)?)?;
    m.add_function(wrap_pyfunction!(cart_boxes, m)?)?;
    m.add_function(wrap_pyfunction!(r_squared, m)?)?;
    m.add_class::<PyExperiment>()?;
    m.add_class::<PyBox>()?;
    m.add_class::<PyGpModel>()?;
    m.add_class::<PyAdaptiveResult>()?;
    Ok(())
}
