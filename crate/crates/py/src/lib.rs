//! Python bindings: curves, gains, path generation, the priority solver and
//! scenario runs.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use safepath::geometry::{MatMN, VecN};
use safepath::hierarchy::{solve_two_level, PriorityStack};
use safepath::pathgen::{generate, PathParams};
use safepath::scenario::{run_scenario, RunConfig};
use safepath::tasks::{mu_obs, pf_beta, TaskSignal};
use safepath::{Curve3D, Vec3};

fn err(e: safepath::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn vec3(p: [f64; 3]) -> Vec3 {
    Vec3::new(p[0], p[1], p[2])
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Closest-point query result.
#[pyclass(name = "CurvePoint", get_all, frozen)]
struct PyCurvePoint {
    position: [f64; 3],
    s: f64,
    tangent: [f64; 3],
    curvature: [f64; 3],
    segment_index: usize,
    clamped: bool,
}

#[pyclass(name = "Curve", frozen)]
struct PyCurve(Curve3D);

#[pymethods]
impl PyCurve {
    #[new]
    #[pyo3(signature = (points, closed = false))]
    fn new(points: Vec<[f64; 3]>, closed: bool) -> PyResult<Self> {
        Curve3D::new(points.into_iter().map(vec3).collect(), closed).map(PyCurve).map_err(err)
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Curve3D::parse(text).map(PyCurve).map_err(err)
    }

    #[getter]
    fn length(&self) -> f64 {
        self.0.length()
    }

    #[getter]
    fn closed(&self) -> bool {
        self.0.is_closed()
    }

    fn points(&self) -> Vec<[f64; 3]> {
        self.0.points().iter().map(arr).collect()
    }

    fn point_at(&self, s: f64) -> [f64; 3] {
        arr(&self.0.point_at(s))
    }

    fn tangent_at(&self, s: f64) -> [f64; 3] {
        arr(&self.0.tangent_at(s))
    }

    fn curvature_at(&self, s: f64) -> [f64; 3] {
        arr(&self.0.curvature_at(s))
    }

    fn project(&self, q: [f64; 3]) -> PyCurvePoint {
        let cp = self.0.project(&vec3(q));
        PyCurvePoint {
            position: arr(&cp.position),
            s: cp.s,
            tangent: arr(&cp.tangent),
            curvature: arr(&cp.curvature),
            segment_index: cp.segment_index,
            clamped: cp.clamped,
        }
    }

    fn distance(&self, q: [f64; 3]) -> f64 {
        self.0.distance(&vec3(q))
    }

    fn to_text(&self) -> String {
        self.0.to_text(&[])
    }

    fn __len__(&self) -> usize {
        self.0.points().len()
    }
}

#[pyclass(name = "Gains", get_all, set_all, skip_from_py_object)]
#[derive(Clone)]
struct PyGains {
    lambda_: f64,
    gamma: f64,
    v_tis: f64,
    beta_prime: f64,
    gamma_c: f64,
    sigma_max: f64,
    sigma_min: f64,
    sigma_step: f64,
    d_min: f64,
    d_max: f64,
    t_e: f64,
}

impl From<safepath::tasks::Gains> for PyGains {
    fn from(g: safepath::tasks::Gains) -> Self {
        Self {
            lambda_: g.lambda,
            gamma: g.gamma,
            v_tis: g.v_tis,
            beta_prime: g.beta_prime,
            gamma_c: g.gamma_c,
            sigma_max: g.sigma_max,
            sigma_min: g.sigma_min,
            sigma_step: g.sigma_step,
            d_min: g.d_min,
            d_max: g.d_max,
            t_e: g.t_e,
        }
    }
}

impl PyGains {
    fn inner(&self) -> PyResult<safepath::tasks::Gains> {
        safepath::tasks::Gains {
            lambda: self.lambda_,
            gamma: self.gamma,
            v_tis: self.v_tis,
            beta_prime: self.beta_prime,
            gamma_c: self.gamma_c,
            sigma_max: self.sigma_max,
            sigma_min: self.sigma_min,
            sigma_step: self.sigma_step,
            d_min: self.d_min,
            d_max: self.d_max,
            t_e: self.t_e,
        }
        .validated()
        .map_err(err)
    }
}

#[pymethods]
impl PyGains {
    /// The simulation gain set.
    #[new]
    fn new() -> Self {
        safepath::tasks::Gains::default().into()
    }

    #[staticmethod]
    fn experimental() -> Self {
        safepath::tasks::Gains::experimental().into()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner().map(|_| ())
    }
}

/// Sigmoid weight of the wall-avoidance task at distance `d` (mm).
#[pyfunction]
fn sigmoid_weight(d: f64, gains: &PyGains) -> PyResult<f64> {
    Ok(mu_obs(&Vec3::new(d, 0.0, 0.0), &gains.inner()?))
}

/// Curvature-adapted return gain at the foot of `tip` on `path`.
#[pyfunction]
fn return_gain(path: &PyCurve, tip: [f64; 3], gains: &PyGains) -> PyResult<f64> {
    let tip = vec3(tip);
    let cp = path.0.project(&tip);
    Ok(pf_beta(&(tip - cp.position), &cp, &gains.inner()?))
}

/// Reference path as a list of points.
#[pyfunction]
#[pyo3(signature = (kind, radius = 5.0, pitch = 2.0, turns = 2.0, length = 10.0, lead = 0.0, ramp_turns = 1.0, spacing = 0.1))]
#[allow(clippy::too_many_arguments)]
fn generate_path(
    kind: &str,
    radius: f64,
    pitch: f64,
    turns: f64,
    length: f64,
    lead: f64,
    ramp_turns: f64,
    spacing: f64,
) -> PyResult<PyCurve> {
    let kind = kind.parse().map_err(err)?;
    let (c, _) = generate(kind, &PathParams { radius, pitch, turns, length, lead, ramp_turns, spacing }).map_err(err)?;
    Ok(PyCurve(c))
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<MatMN> {
    let ok = rows.iter().all(|r| r.len() == 6);
    if rows.is_empty() || !ok {
        return Err(PyValueError::new_err("task matrices need rows of 6 values"));
    }
    Ok(MatMN::from_fn(rows.len(), 6, |i, j| rows[i][j]))
}

fn signal(l: &[Vec<f64>], rate: &[f64]) -> PyResult<TaskSignal> {
    let l = matrix(l)?;
    if rate.len() != l.nrows() {
        return Err(PyValueError::new_err("rate length must match the matrix rows"));
    }
    let r = VecN::from_column_slice(rate);
    Ok(TaskSignal::new(r.clone(), l, r))
}

/// Two-level priority solution `(v, ω)` for task matrices given as rows.
#[pyfunction]
#[pyo3(signature = (l1, rate1, l2 = None, rate2 = None))]
fn solve_priority(
    l1: Vec<Vec<f64>>,
    rate1: Vec<f64>,
    l2: Option<Vec<Vec<f64>>>,
    rate2: Option<Vec<f64>>,
) -> PyResult<[f64; 6]> {
    let primary = signal(&l1, &rate1)?;
    let stack = match (l2, rate2) {
        (Some(l), Some(r)) => PriorityStack::two(primary, signal(&l, &r)?),
        (None, None) => PriorityStack::single(primary),
        _ => return Err(PyValueError::new_err("l2 and rate2 go together")),
    };
    let v = solve_two_level(&stack, safepath::geometry::DEFAULT_PINV_TOL).to_vector();
    Ok([v[0], v[1], v[2], v[3], v[4], v[5]])
}

/// Runs a scenario from flat `key=value` config text. Returns the summary as
/// a dict of strings, with per-phase statistics under `phase.channel.stat`.
#[pyfunction]
fn run(config: &str) -> PyResult<BTreeMap<String, String>> {
    let cfg = RunConfig::parse(config).map_err(err)?;
    let out = run_scenario(&cfg).map_err(err)?;
    if let Some(e) = out.failure {
        return Err(err(e));
    }
    Ok(out
        .summary
        .to_kv()
        .lines()
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect())
}

#[pymodule]
fn safepath_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCurve>()?;
    m.add_class::<PyCurvePoint>()?;
    m.add_class::<PyGains>()?;
    m.add_function(wrap_pyfunction!(sigmoid_weight, m)?)?;
    m.add_function(wrap_pyfunction!(return_gain, m)?)?;
    m.add_function(wrap_pyfunction!(generate_path, m)?)?;
    m.add_function(wrap_pyfunction!(solve_priority, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
