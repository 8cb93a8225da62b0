//! Python bindings: systems, polytopes, reachability analysis, synthesis,
//! simulation and verification. Structured results come back as plain
//! Python dicts and lists (via the same JSON the CLI writes).

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyAny, PyDict};

use reachctl::cli::files::{to_json, ControllerFile, Problem as ProblemFile, VertexSet};
use reachctl::geometry::{Face, HalfSpace, Point, Polytope as CorePolytope};
use reachctl::reach;
use reachctl::sim::{self, Arena};
use reachctl::synth::{self, PwaController};
use reachctl::system::{self, AffineSystem};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn point(v: &[f64]) -> Point {
    DVector::from_row_slice(v)
}

fn matrix(rows: &[Vec<f64>], what: &str) -> PyResult<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    if r == 0 || c == 0 || rows.iter().any(|x| x.len() != c) {
        return Err(PyValueError::new_err(format!("{what} must be a nonempty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Parses the library's JSON output into Python objects.
fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn face(n: usize, vertices: &[Vec<f64>]) -> Face {
    let pts: Vec<Point> = vertices.iter().map(|v| point(v)).collect();
    Face::from_vertices(n, &pts)
}

/// `x' = A x + a + B u`.
#[pyclass(name = "System", module = "reachctl", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySystem {
    inner: AffineSystem,
}

#[pymethods]
impl PySystem {
    #[new]
    #[pyo3(signature = (a, c, b))]
    fn new(a: Vec<Vec<f64>>, c: Vec<f64>, b: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = AffineSystem::new(matrix(&a, "A")?, DVector::from_vec(c), matrix(&b, "B")?).map_err(err)?;
        Ok(PySystem { inner })
    }

    /// The double integrator `x1' = x2, x2' = u`.
    #[staticmethod]
    fn double_integrator() -> Self {
        PySystem { inner: AffineSystem::double_integrator() }
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter(A)]
    fn a(&self) -> Vec<Vec<f64>> {
        rows_of(&self.inner.a)
    }

    #[getter(B)]
    fn b(&self) -> Vec<Vec<f64>> {
        rows_of(&self.inner.b)
    }

    fn is_controllable(&self) -> bool {
        self.inner.is_controllable()
    }

    /// Unit normal to the input directions, signed so that it does not
    /// increase along trajectories in `p`.
    fn beta(&self, p: &PyPolytope) -> PyResult<Vec<f64>> {
        let g = system::compute_geometry(&self.inner, &p.inner).map_err(err)?;
        Ok(g.beta.iter().copied().collect())
    }

    /// `(normal, offset)` of the plane where the drift is actuated.
    fn equilibrium_plane(&self) -> PyResult<(Vec<f64>, f64)> {
        let beta = self.inner.input_normal().map_err(err)?;
        let o = self.inner.equilibrium_plane(&beta).map_err(err)?;
        Ok((o.normal.iter().copied().collect(), o.offset))
    }

    /// Velocity at `x` under input `u`.
    fn field(&self, x: Vec<f64>, u: Vec<f64>) -> PyResult<Vec<f64>> {
        if x.len() != self.inner.n() || u.len() != self.inner.m() {
            return Err(PyValueError::new_err("state or input has the wrong length"));
        }
        Ok(self.inner.field(&point(&x), &DVector::from_vec(u)).iter().copied().collect())
    }

    fn __repr__(&self) -> String {
        format!("System(n={}, m={})", self.inner.n(), self.inner.m())
    }
}

/// Bounded convex polytope, kept in both vertex and halfspace form.
#[pyclass(name = "Polytope", module = "reachctl", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPolytope {
    inner: CorePolytope,
}

#[pymethods]
impl PyPolytope {
    /// Convex hull of `vertices`.
    #[new]
    fn new(vertices: Vec<Vec<f64>>) -> PyResult<Self> {
        let n = vertices.first().map_or(0, |v| v.len());
        if n == 0 || vertices.iter().any(|v| v.len() != n) {
            return Err(PyValueError::new_err("vertices must be a nonempty list of equal-length points"));
        }
        let pts: Vec<Point> = vertices.iter().map(|v| point(v)).collect();
        Ok(PyPolytope { inner: CorePolytope::hull(n, &pts) })
    }

    /// `{x : normals[k]·x <= offsets[k]}`.
    #[staticmethod]
    fn from_halfspaces(normals: Vec<Vec<f64>>, offsets: Vec<f64>) -> PyResult<Self> {
        let a = matrix(&normals, "normals")?;
        if offsets.len() != a.nrows() {
            return Err(PyValueError::new_err("one offset per normal is required"));
        }
        let hs: Vec<HalfSpace> =
            (0..a.nrows()).map(|i| HalfSpace::new(a.row(i).transpose(), offsets[i])).collect();
        let inner = CorePolytope::from_halfspaces(a.ncols(), &hs).map_err(err)?;
        Ok(PyPolytope { inner })
    }

    #[getter]
    fn vertices(&self) -> Vec<Vec<f64>> {
        VertexSet::of(&self.inner).vertices
    }

    /// `(normals, offsets)` of the facet halfspaces.
    #[getter]
    fn halfspaces(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        let hs = self.inner.halfspaces();
        (hs.iter().map(|h| h.normal.iter().copied().collect()).collect(), hs.iter().map(|h| h.offset).collect())
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn ambient(&self) -> usize {
        self.inner.ambient()
    }

    fn volume(&self) -> f64 {
        self.inner.volume()
    }

    #[pyo3(signature = (x, tol = 1e-9))]
    fn contains(&self, x: Vec<f64>, tol: f64) -> bool {
        x.len() == self.inner.ambient() && self.inner.contains(&point(&x), tol)
    }

    /// Vertex lists of the facets.
    fn facets(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.facets().iter().map(|f| VertexSet::of(&f.poly).vertices).collect()
    }

    fn __repr__(&self) -> String {
        format!("Polytope(ambient={}, dim={}, vertices={})", self.inner.ambient(), self.inner.dim(), self.inner.vertices().len())
    }
}

/// A synthesized piecewise-affine feedback with its domain and target.
#[pyclass(name = "Controller", module = "reachctl", frozen)]
struct PyController {
    inner: PwaController,
    file: ControllerFile,
    domain: CorePolytope,
    target: Face,
}

impl PyController {
    fn from_file(file: ControllerFile) -> PyResult<Self> {
        let (inner, domain, target) = file.to_controller("<python>").map_err(err)?;
        Ok(PyController { inner, file, domain, target })
    }
}

#[pymethods]
impl PyController {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Self::from_file(ControllerFile::from_json("<python>", text).map_err(err)?)
    }

    fn to_json(&self) -> String {
        to_json(&self.file)
    }

    #[getter]
    fn num_pieces(&self) -> usize {
        self.inner.pieces.len()
    }

    #[getter]
    fn domain(&self) -> PyPolytope {
        PyPolytope { inner: self.domain.clone() }
    }

    #[getter]
    fn target(&self) -> Vec<Vec<f64>> {
        VertexSet::of(&self.target.poly).vertices
    }

    /// `(piece index, u)` at state `x`.
    fn control(&self, x: Vec<f64>) -> PyResult<(usize, Vec<f64>)> {
        if x.len() != self.domain.ambient() {
            return Err(PyValueError::new_err("state has the wrong length"));
        }
        let (k, u) = self.inner.control(&point(&x)).map_err(err)?;
        Ok((k, u.iter().copied().collect()))
    }

    fn __repr__(&self) -> String {
        format!("Controller(pieces={})", self.inner.pieces.len())
    }
}

/// A reachability problem read from the JSON input format.
#[pyclass(name = "Problem", module = "reachctl", frozen)]
struct PyProblem {
    inner: ProblemFile,
}

#[pymethods]
impl PyProblem {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyProblem { inner: ProblemFile::load(std::path::Path::new(path)).map_err(err)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyProblem { inner: ProblemFile::from_json("<python>", text).map_err(err)? })
    }

    #[getter]
    fn system(&self) -> PySystem {
        PySystem { inner: self.inner.sys.clone() }
    }

    #[getter]
    fn polytope(&self) -> PyPolytope {
        PyPolytope { inner: self.inner.p.clone() }
    }

    #[getter]
    fn target(&self) -> Vec<Vec<f64>> {
        VertexSet::of(&self.inner.f.poly).vertices
    }

    #[getter]
    fn eps(&self) -> Option<f64> {
        self.inner.options.eps
    }
}

/// Decides whether every state of `p` can be steered to the target face.
#[pyfunction]
fn analyze<'py>(py: Python<'py>, system: &PySystem, p: &PyPolytope, target: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
    let f = face(p.inner.ambient(), &target);
    let geom = system::compute_geometry(&system.inner, &p.inner).map_err(err)?;
    let ra = reach::analyze(&geom, &p.inner, &f).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("reachable", ra.reachable)?;
    out.set_item("condition_a", ra.condition_a)?;
    out.set_item("condition_b", ra.condition_b)?;
    out.set_item("ambiguous", ra.ambiguous)?;
    out.set_item("v_minus", ra.v_minus.iter().copied().collect::<Vec<f64>>())?;
    out.set_item("v_plus", ra.v_plus.iter().copied().collect::<Vec<f64>>())?;
    out.set_item("a_minus", VertexSet::of(&ra.a_minus).vertices)?;
    out.set_item("a_plus", VertexSet::of(&ra.a_plus).vertices)?;
    Ok(out.into_any())
}

/// Trims the failure sets with margin `eps`; returns the trimmed reach set.
#[pyfunction]
fn epsilon_cut(system: &PySystem, p: &PyPolytope, target: Vec<Vec<f64>>, eps: f64) -> PyResult<PyPolytope> {
    let f = face(p.inner.ambient(), &target);
    let geom = system::compute_geometry(&system.inner, &p.inner).map_err(err)?;
    let cut = reach::epsilon_cut(&geom, &p.inner, &f, eps).map_err(err)?;
    Ok(PyPolytope { inner: cut.reach_eps })
}

/// Piecewise-affine feedback steering `p` (or its trimmed reach set) to the target.
#[pyfunction]
#[pyo3(signature = (system, p, target, eps = None))]
fn synthesize(system: &PySystem, p: &PyPolytope, target: Vec<Vec<f64>>, eps: Option<f64>) -> PyResult<PyController> {
    let f = face(p.inner.ambient(), &target);
    let syn = synth::synth_polytope(&system.inner, &p.inner, &f, eps).map_err(err)?;
    PyController::from_file(ControllerFile::from_synthesis(&syn, &f))
}

/// Closed-loop trajectory from `x0`: dict with times, states, controls, pieces, outcome.
#[pyfunction]
#[pyo3(signature = (system, controller, x0, dt = None, tmax = 100.0))]
fn simulate<'py>(
    py: Python<'py>,
    system: &PySystem,
    controller: &PyController,
    x0: Vec<f64>,
    dt: Option<f64>,
    tmax: f64,
) -> PyResult<Bound<'py, PyAny>> {
    if x0.len() != controller.domain.ambient() {
        return Err(PyValueError::new_err("x0 has the wrong length"));
    }
    let arena = Arena::new(controller.domain.clone(), controller.target.clone());
    let dt = dt.unwrap_or_else(|| sim::default_dt(&system.inner, &controller.inner, &controller.domain));
    let tr = sim::integrate(&system.inner, &controller.inner, &arena, &point(&x0), dt, tmax).map_err(err)?;
    json_to_py(py, &to_json(&tr))
}

/// Closed-loop verification from `nsamples` uniformly sampled initial states.
#[pyfunction]
#[pyo3(signature = (system, controller, nsamples = 100, seed = 1, dt = None, tmax = 100.0))]
fn verify<'py>(
    py: Python<'py>,
    system: &PySystem,
    controller: &PyController,
    nsamples: usize,
    seed: u64,
    dt: Option<f64>,
    tmax: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let arena = Arena::new(controller.domain.clone(), controller.target.clone());
    let dt = dt.unwrap_or_else(|| sim::default_dt(&system.inner, &controller.inner, &controller.domain));
    let rep = py.detach(|| sim::verify(&system.inner, &controller.inner, &arena, nsamples, seed, dt, tmax));
    json_to_py(py, &to_json(&rep))
}

#[pymodule(name = "reachctl")]
fn reachctl_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystem>()?;
    m.add_class::<PyPolytope>()?;
    m.add_class::<PyController>()?;
    m.add_class::<PyProblem>()?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(epsilon_cut, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
