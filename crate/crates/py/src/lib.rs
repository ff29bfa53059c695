//! Python bindings: matrices travel as nested lists, structured results as dicts.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::Value;

use winfree_so::analysis::{self, FrameworkParams};
use winfree_so::dynamics::{self, EnsembleState, IntegrationSettings, ModelConfig, Stepper};
use winfree_so::equilibria;
use winfree_so::geometry::{self, Matrix, Rotation, Skew};
use winfree_so::harness::{self, ExperimentSpec};
use winfree_so::influence::{self, InfluenceFunction};

type Rows = Vec<Vec<f64>>;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_matrix(rows: &Rows) -> PyResult<Matrix> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(err("expected a non-empty square matrix"));
    }
    Ok(Matrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn to_rows(m: &Matrix) -> Rows {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rotation(rows: &Rows) -> PyResult<Rotation> {
    Rotation::new(to_matrix(rows)?).map_err(err)
}

fn skew(rows: &Rows) -> PyResult<Skew> {
    Skew::new(to_matrix(rows)?).map_err(err)
}

fn to_py<'py>(py: Python<'py>, value: &Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (value.to_string(),))
}

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Matrix exponential of a skew-symmetric matrix.
#[pyfunction]
fn exp_so(x: Rows) -> PyResult<Rows> {
    Ok(to_rows(geometry::exp_so(&skew(&x)?).matrix()))
}

/// Principal logarithm of a rotation (fails at angle π).
#[pyfunction]
fn log_so(r: Rows) -> PyResult<Rows> {
    Ok(to_rows(geometry::log_so(&rotation(&r)?).map_err(err)?.matrix()))
}

#[pyfunction]
fn geodesic_distance(a: Rows, b: Rows) -> PyResult<f64> {
    geometry::geodesic_distance(&rotation(&a)?, &rotation(&b)?).map_err(err)
}

#[pyfunction]
fn trace_gap(r: Rows) -> PyResult<f64> {
    Ok(geometry::trace_gap(&rotation(&r)?))
}

/// Rotation angles in `[0, π]`, descending.
#[pyfunction]
fn principal_angles(r: Rows) -> PyResult<Vec<f64>> {
    let r = rotation(&r)?;
    let pa = geometry::principal_angles(&r, geometry::Tolerances::default().angle)
        .map_err(err)?;
    Ok(pa.angles().to_vec())
}

/// Half-Frobenius norm `‖A‖_F / √2`.
#[pyfunction]
fn norm(a: Rows) -> PyResult<f64> {
    Ok(geometry::norm(&to_matrix(&a)?))
}

#[pyfunction]
fn sample_haar(n: usize, seed: u64) -> PyResult<Rows> {
    Ok(to_rows(geometry::sample_haar(n, &mut rng(seed)).map_err(err)?.matrix()))
}

#[pyfunction]
fn sample_ball(n: usize, radius: f64, seed: u64) -> PyResult<Rows> {
    Ok(to_rows(
        geometry::sample_ball(n, radius, &mut rng(seed)).map_err(err)?.matrix(),
    ))
}

#[pyclass(name = "Influence", frozen, from_py_object)]
#[derive(Clone)]
struct PyInfluence(InfluenceFunction);

#[pymethods]
impl PyInfluence {
    #[staticmethod]
    fn linear_hat(beta: f64) -> PyResult<Self> {
        influence::make_linear_hat(beta).map(Self).map_err(err)
    }

    #[staticmethod]
    fn cosine_taper(beta: f64) -> PyResult<Self> {
        influence::make_cosine_taper(beta).map(Self).map_err(err)
    }

    #[staticmethod]
    fn continuum(lambda_star: f64, kappa: f64, x0: f64, beta: f64) -> PyResult<Self> {
        influence::make_continuum_influence(lambda_star, kappa, x0, beta)
            .map(Self)
            .map_err(err)
    }

    #[staticmethod]
    fn tabulated(points: Vec<(f64, f64)>) -> PyResult<Self> {
        influence::make_tabulated(points).map(Self).map_err(err)
    }

    fn __call__(&self, r: f64) -> f64 {
        self.0.eval(r)
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.0.beta()
    }

    #[getter]
    fn lip(&self) -> f64 {
        self.0.lip()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind()
    }

    fn lip_star(&self) -> f64 {
        self.0.lip_star_bound()
    }

    fn __repr__(&self) -> String {
        format!("Influence({}, beta={:?})", self.0.kind(), self.0.beta())
    }
}

#[pyclass(name = "Model", frozen)]
struct PyModel(ModelConfig);

fn framework(beta: f64, gamma0: f64, leaders: Vec<usize>) -> PyResult<FrameworkParams> {
    FrameworkParams::new(beta, gamma0, leaders).map_err(err)
}

fn state(rotations: &[Rows]) -> PyResult<EnsembleState> {
    Ok(EnsembleState::new(
        rotations.iter().map(rotation).collect::<PyResult<Vec<_>>>()?,
    ))
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (kappa, frequencies, influence, attraction=None))]
    fn new(
        kappa: f64,
        frequencies: Vec<Rows>,
        influence: PyInfluence,
        attraction: Option<Rows>,
    ) -> PyResult<Self> {
        let freqs = frequencies.iter().map(skew).collect::<PyResult<Vec<_>>>()?;
        let q = attraction.as_ref().map(rotation).transpose()?;
        ModelConfig::new(kappa, freqs, influence.0, q)
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn kappa(&self) -> f64 {
        self.0.kappa
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn count(&self) -> usize {
        self.0.count()
    }

    fn hash(&self) -> String {
        self.0.hash()
    }

    /// Right-hand side `Ṙ_i` at the given ensemble.
    fn rhs(&self, rotations: Vec<Rows>) -> PyResult<Vec<Rows>> {
        let v = dynamics::rhs(&state(&rotations)?, &self.0).map_err(err)?;
        Ok(v.iter().map(to_rows).collect())
    }

    fn mean_influence(&self, rotations: Vec<Rows>) -> PyResult<f64> {
        dynamics::mean_influence(&state(&rotations)?.rotations, &self.0).map_err(err)
    }

    /// Integrates and returns `{times, distances, trace_gaps, mean_influence,
    /// max_orthogonality_defect, final_state}`.
    #[pyo3(signature = (rotations, t_end, h=1e-3, stepper="rkmk4", stride=10))]
    fn integrate<'py>(
        &self,
        py: Python<'py>,
        rotations: Vec<Rows>,
        t_end: f64,
        h: f64,
        stepper: &str,
        stride: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let settings = IntegrationSettings {
            stepper: stepper.parse::<Stepper>().map_err(err)?,
            h,
            t_end,
            stride,
            state_stride: 0,
        };
        let initial = state(&rotations)?;
        let traj = py
            .detach(|| dynamics::integrate(&self.0, &initial, &settings))
            .map_err(err)?;
        let final_state: Vec<Rows> = traj
            .final_state
            .as_ref()
            .map(|s| s.rotations.iter().map(|r| to_rows(r.matrix())).collect())
            .unwrap_or_default();
        let out = serde_json::json!({
            "times": traj.times,
            "distances": traj.distances,
            "trace_gaps": traj.trace_gaps,
            "mean_influence": traj.mean_influence,
            "max_orthogonality_defect": traj.max_orthogonality_defect,
            "final_state": final_state,
        });
        to_py(py, &out)
    }

    /// Thresholds and rates for a framework `(β, γ0, leaders)`.
    #[pyo3(signature = (gamma0, leaders=vec![]))]
    fn thresholds<'py>(
        &self,
        py: Python<'py>,
        gamma0: f64,
        leaders: Vec<usize>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let fw = framework(self.0.influence.beta(), gamma0, leaders)?;
        let report = analysis::threshold_report(&fw, &self.0).map_err(err)?;
        let mut v = serde_json::to_value(report).map_err(err)?;
        v["lambda1"] = analysis::lambda1(&fw, &self.0.influence, self.0.kappa).into();
        v["lambda2"] = analysis::lambda2(&fw, &self.0.influence, self.0.kappa).into();
        v["framework"] = fw.to_json_value();
        to_py(py, &v)
    }

    /// Mean-influence fixed point and the equilibrium built from it.
    #[pyo3(signature = (gamma0, branches=None))]
    fn equilibrium<'py>(
        &self,
        py: Python<'py>,
        gamma0: f64,
        branches: Option<Vec<Vec<bool>>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let fw = framework(self.0.influence.beta(), gamma0, vec![])?;
        let fp = equilibria::solve_fixed_point(&self.0, &fw).map_err(err)?;
        let ens = equilibria::construct_equilibrium(&self.0, fp.x_star, branches.as_deref())
            .map_err(err)?;
        let mut v = ens.to_json_value(&self.0);
        v["fixed_point"] = serde_json::to_value(&fp).map_err(err)?;
        v["rotations"] = serde_json::to_value(
            ens.rotations
                .iter()
                .map(|r| to_rows(r.matrix()))
                .collect::<Vec<_>>(),
        )
        .map_err(err)?;
        to_py(py, &v)
    }
}

/// `sqrt(2 + 2 sqrt(1 − x²))`.
#[pyfunction]
fn big_gamma_of_ratio(x: f64) -> PyResult<f64> {
    analysis::big_gamma_of_ratio(x).map_err(err)
}

/// Itemized hypothesis report for an experiment deck.
#[pyfunction]
fn validate<'py>(py: Python<'py>, config: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let spec = ExperimentSpec::from_path(&config).map_err(err)?;
    let report = harness::validate_framework(&spec).map_err(err)?;
    to_py(py, &report.to_json_value())
}

/// Runs a deck; returns the summary dict (with `exit_code`).
#[pyfunction]
#[pyo3(signature = (config, out=None, seed=None, override_hypotheses=false))]
fn run_experiment<'py>(
    py: Python<'py>,
    config: PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
    override_hypotheses: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let mut spec = ExperimentSpec::from_path(&config).map_err(err)?;
    if out.is_some() {
        spec.output.dir = out;
    }
    if let Some(s) = seed {
        spec.seeds = vec![s];
    }
    spec.override_hypotheses |= override_hypotheses;
    let report = py.detach(|| harness::run(&spec)).map_err(err)?;
    let mut summary = report.summary.clone();
    summary["exit_code"] = report.exit_code.into();
    to_py(py, &summary)
}

#[pymodule]
fn winfree(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyInfluence>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(exp_so, m)?)?;
    m.add_function(wrap_pyfunction!(log_so, m)?)?;
    m.add_function(wrap_pyfunction!(geodesic_distance, m)?)?;
    m.add_function(wrap_pyfunction!(trace_gap, m)?)?;
    m.add_function(wrap_pyfunction!(principal_angles, m)?)?;
    m.add_function(wrap_pyfunction!(norm, m)?)?;
    m.add_function(wrap_pyfunction!(sample_haar, m)?)?;
    m.add_function(wrap_pyfunction!(sample_ball, m)?)?;
    m.add_function(wrap_pyfunction!(big_gamma_of_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
