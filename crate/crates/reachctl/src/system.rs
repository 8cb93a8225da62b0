//! Affine hypersurface systems `x' = A x + a + B u` with `rank B = n - 1`.
//!
//! Everything the reachability theory needs from the dynamics lives here: the
//! unit normal β to the input subspace (signed so that `β·x` can only decrease
//! inside the working polytope) and the equilibrium hyperplane
//! `O = {x : βᵀ(Ax + a) = 0}`, the states where some input stops the flow.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{Face, Hyperplane, Point, Polytope};
use crate::tol;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("input matrix has rank {rank}, expected n - 1 = {expected}")]
    RankDeficient { rank: usize, expected: usize },
    #[error("drift along the input normal changes sign over the polytope (equilibrium set crosses its interior)")]
    SignAmbiguous,
    #[error("Aᵀβ vanishes, so the equilibrium set is not a hyperplane")]
    DegenerateO,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffineSystem {
    pub a: DMatrix<f64>,
    pub c: DVector<f64>,
    pub b: DMatrix<f64>,
}

impl AffineSystem {
    /// `a` is the state matrix A, `c` the affine term a, `b` the input matrix B.
    pub fn new(a: DMatrix<f64>, c: DVector<f64>, b: DMatrix<f64>) -> Result<Self, SystemError> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(SystemError::DimensionMismatch(format!("A is {}x{}, must be square", a.nrows(), a.ncols())));
        }
        if c.len() != n {
            return Err(SystemError::DimensionMismatch(format!("a has length {}, expected {n}", c.len())));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(SystemError::DimensionMismatch(format!("B is {}x{}, expected {n} rows", b.nrows(), b.ncols())));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(SystemError::NonFinite("A"));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(SystemError::NonFinite("a"));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(SystemError::NonFinite("B"));
        }
        Ok(AffineSystem { a, c, b })
    }

    /// The double integrator `x1' = x2, x2' = u`.
    pub fn double_integrator() -> Self {
        AffineSystem {
            a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            c: DVector::zeros(2),
            b: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Uncontrolled part `A x + a`.
    pub fn drift(&self, x: &Point) -> Point {
        &self.a * x + &self.c
    }

    pub fn field(&self, x: &Point, u: &DVector<f64>) -> Point {
        self.drift(x) + &self.b * u
    }

    pub fn rank_b(&self) -> usize {
        numeric_rank(&self.b)
    }

    pub fn is_controllable(&self) -> bool {
        let n = self.n();
        let mut blocks = Vec::with_capacity(n);
        let mut cur = self.b.clone();
        for _ in 0..n {
            blocks.push(cur.clone());
            cur = &self.a * cur;
        }
        let m = self.m();
        let ctrb = DMatrix::from_fn(n, n * m, |i, j| blocks[j / m][(i, j % m)]);
        numeric_rank(&ctrb) == n
    }

    /// Unit vector spanning the left null space of B, sign not yet fixed.
    pub fn input_normal(&self) -> Result<Point, SystemError> {
        let n = self.n();
        let rank = self.rank_b();
        if rank + 1 != n {
            return Err(SystemError::RankDeficient { rank, expected: n - 1 });
        }
        let cols = self.m().max(n);
        let padded = DMatrix::from_fn(n, cols, |i, j| if j < self.m() { self.b[(i, j)] } else { 0.0 });
        let svd = padded.svd(true, false);
        let u = svd.u.expect("requested U");
        let k = (0..svd.singular_values.len())
            .min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))
            .expect("nonempty");
        let mut beta: Point = u.column(k).into_owned();
        // round-off below this level would only show up as noise in reports
        beta.iter_mut().filter(|v| v.abs() < 1e-14).for_each(|v| *v = 0.0);
        beta /= beta.norm();
        // deterministic orientation before any polytope-based flip
        if let Some(first) = beta.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                beta = -beta;
            }
        }
        Ok(beta)
    }

    /// The equilibrium hyperplane for a given input normal (either sign).
    pub fn equilibrium_plane(&self, beta: &Point) -> Result<Hyperplane, SystemError> {
        let normal = self.a.transpose() * beta;
        if normal.norm() <= 1e-12 * (1.0 + self.a.norm()) {
            return Err(SystemError::DegenerateO);
        }
        Ok(Hyperplane::new(normal, -beta.dot(&self.c)))
    }
}

fn numeric_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > 1e-9 * smax).count()
}

/// β, a basis of Im B and the equilibrium hyperplane O for a fixed polytope.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemGeometry {
    pub beta: Point,
    pub b_basis: DMatrix<f64>,
    pub o_plane: Hyperplane,
}

impl SystemGeometry {
    pub fn level(&self, x: &Point) -> f64 {
        self.beta.dot(x)
    }

    pub fn in_o(&self, x: &Point, tol: f64) -> bool {
        self.o_plane.eval(x).abs() <= tol
    }

    /// The translate `B_x` of the input subspace through `x`.
    pub fn b_plane_through(&self, x: &Point) -> Hyperplane {
        Hyperplane::through(self.beta.clone(), x)
    }
}

/// Signs β from the drift at the vertices of `p` and builds O.
pub fn compute_geometry(sys: &AffineSystem, p: &Polytope) -> Result<SystemGeometry, SystemError> {
    if p.ambient() != sys.n() {
        return Err(SystemError::DimensionMismatch(format!(
            "polytope lives in R^{}, system in R^{}",
            p.ambient(),
            sys.n()
        )));
    }
    let mut beta = sys.input_normal()?;
    let vals: Vec<f64> = p.vertices().iter().map(|v| beta.dot(&sys.drift(v))).collect();
    let scale = vals.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = tol::geom() * scale;
    let nonpos = vals.iter().all(|&v| v <= tol);
    let nonneg = vals.iter().all(|&v| v >= -tol);
    match (nonpos, nonneg) {
        (true, true) => {
            // drift tangent to B on every vertex: keep the default orientation
        }
        (true, false) => {}
        (false, true) => beta = -beta,
        (false, false) => return Err(SystemError::SignAmbiguous),
    }
    let o_plane = sys.equilibrium_plane(&beta)?;
    Ok(SystemGeometry { beta, b_basis: input_basis(sys), o_plane })
}

/// Orthonormal basis of Im B (n x rank).
pub fn input_basis(sys: &AffineSystem) -> DMatrix<f64> {
    let svd = sys.b.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cols: Vec<DVector<f64>> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > 1e-9 * smax)
        .map(|k| u.column(k).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(sys.n(), 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct AssumptionReport {
    /// rank B = n - 1
    pub a1_rank: bool,
    /// (A, B) controllable
    pub a2_controllable: bool,
    /// O does not pass through the interior of P
    pub a3_o_outside_interior: bool,
    /// F is an (n-1)-dimensional polytope on the boundary of P
    pub a4_target_on_boundary: bool,
    pub notes: Vec<String>,
}

impl AssumptionReport {
    pub fn all_hold(&self) -> bool {
        self.a1_rank && self.a2_controllable && self.a3_o_outside_interior && self.a4_target_on_boundary
    }
}

/// True when vertices of `p` lie strictly on both sides of `o`.
pub fn plane_crosses_interior(o: &Hyperplane, p: &Polytope) -> bool {
    let tol = p.tol();
    let vals: Vec<f64> = p.vertices().iter().map(|v| o.eval(v)).collect();
    vals.iter().any(|&v| v > tol) && vals.iter().any(|&v| v < -tol)
}

/// The facet of `p` containing `f`, if any.
pub fn containing_facet(p: &Polytope, f: &Face) -> Option<Face> {
    let tol = p.tol();
    p.facets().into_iter().find(|fac| {
        let h = fac.supporting.as_ref().expect("facets carry their halfspace");
        f.vertices().iter().all(|v| h.eval(v).abs() <= tol && p.contains(v, tol))
    })
}

pub fn check_assumptions(sys: &AffineSystem, p: &Polytope, f: &Face) -> AssumptionReport {
    let n = sys.n();
    let mut notes = Vec::new();
    let rank = sys.rank_b();
    let a1_rank = rank + 1 == n;
    if !a1_rank {
        notes.push(format!("rank B = {rank}, expected {}", n - 1));
    }
    let a2_controllable = sys.is_controllable();
    if !a2_controllable {
        notes.push("(A, B) is not controllable".into());
    }
    let a3_o_outside_interior = match sys.input_normal().and_then(|b| sys.equilibrium_plane(&b)) {
        Ok(o) => {
            let ok = !plane_crosses_interior(&o, p);
            if !ok {
                notes.push("equilibrium hyperplane crosses the interior of P".into());
            }
            ok
        }
        Err(e) => {
            notes.push(format!("equilibrium set not evaluated: {e}"));
            false
        }
    };
    let a4_target_on_boundary = if f.dim() + 1 != n || f.is_empty() {
        notes.push(format!("target has dimension {}, expected {}", f.dim(), n - 1));
        false
    } else if containing_facet(p, f).is_none() {
        notes.push("target does not lie in a facet of P".into());
        false
    } else {
        true
    };
    AssumptionReport { a1_rank, a2_controllable, a3_o_outside_interior, a4_target_on_boundary, notes }
}
