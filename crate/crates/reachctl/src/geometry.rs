//! Convex polytopes in dimension n <= 4.
//!
//! Hulls and vertex enumeration are brute-force over n-subsets, which is
//! cheap at this size and has no special cases to get wrong. Every polytope
//! keeps both representations; vertices are sorted lexicographically so that
//! everything built on top (triangulations, covers, file output) is
//! deterministic. Lower-dimensional polytopes carry their affine hull as
//! pairs of opposite halfspaces. The empty polytope has no vertices.

use std::cmp::Ordering;
use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::lp;
use crate::tol;

pub type Point = DVector<f64>;

pub const MAX_DIM: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("points span only a {dim}-dimensional affine set")]
    DimensionDeficient { dim: usize },
    #[error("halfspaces describe an unbounded set")]
    Unbounded,
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("ambient dimension {0} outside the supported range 1..=4")]
    UnsupportedDimension(usize),
}

/// `{x : normal·x <= offset}` with a unit normal.
#[derive(Clone, Debug, PartialEq)]
pub struct HalfSpace {
    pub normal: Point,
    pub offset: f64,
}

impl HalfSpace {
    /// Normalizes the normal to unit length. Panics on a zero normal.
    pub fn new(normal: Point, offset: f64) -> Self {
        let norm = normal.norm();
        assert!(norm > 0.0, "halfspace normal must be nonzero");
        HalfSpace { normal: normal / norm, offset: offset / norm }
    }

    /// Signed value `normal·x - offset`; positive means outside.
    pub fn eval(&self, x: &Point) -> f64 {
        self.normal.dot(x) - self.offset
    }

    pub fn contains(&self, x: &Point, tol: f64) -> bool {
        self.eval(x) <= tol
    }

    pub fn flipped(&self) -> HalfSpace {
        HalfSpace { normal: -&self.normal, offset: -self.offset }
    }

    pub fn boundary(&self) -> Hyperplane {
        Hyperplane { normal: self.normal.clone(), offset: self.offset }
    }
}

/// `{x : normal·x = offset}` with a unit normal.
#[derive(Clone, Debug, PartialEq)]
pub struct Hyperplane {
    pub normal: Point,
    pub offset: f64,
}

impl Hyperplane {
    pub fn new(normal: Point, offset: f64) -> Self {
        let norm = normal.norm();
        assert!(norm > 0.0, "hyperplane normal must be nonzero");
        Hyperplane { normal: normal / norm, offset: offset / norm }
    }

    pub fn through(normal: Point, point: &Point) -> Self {
        let off = normal.dot(point);
        Hyperplane::new(normal, off)
    }

    pub fn eval(&self, x: &Point) -> f64 {
        self.normal.dot(x) - self.offset
    }

    /// The side `normal·x <= offset`.
    pub fn below(&self) -> HalfSpace {
        HalfSpace { normal: self.normal.clone(), offset: self.offset }
    }

    /// The side `normal·x >= offset`.
    pub fn above(&self) -> HalfSpace {
        self.below().flipped()
    }
}

// ---------------------------------------------------------------------------
// small linear-algebra helpers
// ---------------------------------------------------------------------------

/// Lexicographic comparison with a tolerance on each coordinate.
pub fn lex_cmp(a: &Point, b: &Point, tol: f64) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        if (x - y).abs() > tol {
            return x.total_cmp(y);
        }
    }
    Ordering::Equal
}

pub fn same_point(a: &Point, b: &Point, tol: f64) -> bool {
    (a - b).amax() <= tol
}

/// Sorts lexicographically and removes near-duplicates.
pub fn canonical_points(mut pts: Vec<Point>, tol: f64) -> Vec<Point> {
    pts.sort_by(|a, b| lex_cmp(a, b, tol));
    let mut out: Vec<Point> = Vec::with_capacity(pts.len());
    for p in pts {
        if !out.iter().any(|q| same_point(q, &p, tol)) {
            out.push(p);
        }
    }
    out
}

/// Unit normal to the span of `n-1` difference vectors in R^n, by cofactor
/// expansion. None when the vectors are (numerically) dependent.
pub fn normal_of(diffs: &[Point], n: usize) -> Option<Point> {
    debug_assert_eq!(diffs.len(), n.saturating_sub(1));
    if n == 1 {
        return Some(DVector::from_element(1, 1.0));
    }
    let m = DMatrix::from_fn(n - 1, n, |i, j| diffs[i][j]);
    let mut normal = DVector::zeros(n);
    for k in 0..n {
        let minor = m.clone().remove_column(k);
        let d = minor.determinant();
        normal[k] = if k % 2 == 0 { d } else { -d };
    }
    let scale: f64 = diffs.iter().map(|d| d.norm()).product();
    let norm = normal.norm();
    if norm <= 1e-10 * scale.max(1e-300) {
        None
    } else {
        Some(normal / norm)
    }
}

/// Orthonormal basis of the affine hull of `pts` (columns) and its base point.
pub fn affine_hull(pts: &[Point], tol: f64) -> (Point, DMatrix<f64>) {
    let n = pts[0].len();
    let p0 = pts[0].clone();
    if pts.len() == 1 {
        return (p0, DMatrix::zeros(n, 0));
    }
    let diffs = DMatrix::from_fn(pts.len() - 1, n, |i, j| pts[i + 1][j] - p0[j]);
    let svd = diffs.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let cols: Vec<Point> =
        idx.into_iter().filter(|&k| svd.singular_values[k] > tol).map(|k| vt.row(k).transpose()).collect();
    let basis = if cols.is_empty() { DMatrix::zeros(n, 0) } else { DMatrix::from_columns(&cols) };
    (p0, basis)
}

/// Unit vectors completing `basis` (orthonormal columns) to a basis of R^n.
fn orthogonal_complement(basis: &DMatrix<f64>, n: usize) -> Vec<Point> {
    let mut all: Vec<Point> = (0..basis.ncols()).map(|k| basis.column(k).into_owned()).collect();
    let mut out = Vec::new();
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        for b in &all {
            let c = b.dot(&e);
            e -= b * c;
        }
        for b in &all {
            let c = b.dot(&e);
            e -= b * c;
        }
        let norm = e.norm();
        if norm > 1e-6 {
            let e = e / norm;
            all.push(e.clone());
            out.push(e);
        }
        if all.len() == n {
            break;
        }
    }
    out
}

fn combinations(m: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > m {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + m - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        if idx[i] == i + m - k {
            return;
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Facets of the full-dimensional hull of `pts` in R^d: (outward normal, offset,
/// indices of points on the facet).
fn hull_facets(pts: &[Point], tol: f64) -> Vec<(Point, f64, Vec<usize>)> {
    let d = pts[0].len();
    let m = pts.len();
    let mut out: Vec<(Point, f64, Vec<usize>)> = Vec::new();
    if d == 1 {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in pts {
            lo = lo.min(p[0]);
            hi = hi.max(p[0]);
        }
        let at = |v: f64| (0..m).filter(|&k| (pts[k][0] - v).abs() <= tol).collect::<Vec<_>>();
        out.push((DVector::from_element(1, -1.0), -lo, at(lo)));
        out.push((DVector::from_element(1, 1.0), hi, at(hi)));
        return out;
    }
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    combinations(m, d, |comb| {
        // skip subsets already lying in a known facet
        if out.iter().any(|(_, _, tight)| comb.iter().all(|c| tight.binary_search(c).is_ok())) {
            return;
        }
        let base = &pts[comb[0]];
        let diffs: Vec<Point> = comb[1..].iter().map(|&c| &pts[c] - base).collect();
        let Some(mut normal) = normal_of(&diffs, d) else { return };
        let mut off = normal.dot(base);
        let mut pos = false;
        let mut neg = false;
        for p in pts {
            let s = normal.dot(p) - off;
            if s > tol {
                pos = true;
            } else if s < -tol {
                neg = true;
            }
            if pos && neg {
                return;
            }
        }
        if pos {
            normal = -normal;
            off = -off;
        }
        let tight: Vec<usize> = (0..m).filter(|&k| (normal.dot(&pts[k]) - off).abs() <= tol).collect();
        if seen.insert(tight.clone()) {
            out.push((normal, off, tight));
        }
    });
    out
}

fn rank_of(vectors: &[&Point], tol: f64) -> usize {
    if vectors.is_empty() {
        return 0;
    }
    let n = vectors[0].len();
    let m = DMatrix::from_fn(vectors.len(), n, |i, j| vectors[i][j]);
    m.svd(false, false).singular_values.iter().filter(|&&s| s > tol).count()
}

// ---------------------------------------------------------------------------
// Polytope
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct Polytope {
    ambient: usize,
    vertices: Vec<Point>,
    halfspaces: Vec<HalfSpace>,
    dim: usize,
}

/// Scale-aware absolute tolerance for a point set.
fn tol_for(pts: &[Point]) -> f64 {
    let mut diam: f64 = 0.0;
    if let Some(p0) = pts.first() {
        for p in pts {
            diam = diam.max((p - p0).amax());
        }
    }
    tol::geom() * diam.max(1.0)
}

impl Polytope {
    pub fn empty(ambient: usize) -> Self {
        Polytope { ambient, vertices: Vec::new(), halfspaces: Vec::new(), dim: 0 }
    }

    pub fn ambient(&self) -> usize {
        self.ambient
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn halfspaces(&self) -> &[HalfSpace] {
        &self.halfspaces
    }

    /// Affine dimension (0 for a point and for the empty set).
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn is_full(&self) -> bool {
        !self.is_empty() && self.dim == self.ambient
    }

    pub fn tol(&self) -> f64 {
        tol_for(&self.vertices)
    }

    /// Convex hull of any finite point set (any affine dimension).
    pub fn hull(ambient: usize, points: &[Point]) -> Self {
        if points.is_empty() {
            return Polytope::empty(ambient);
        }
        let tol = tol_for(points);
        let pts = canonical_points(points.to_vec(), tol);
        let (p0, basis) = affine_hull(&pts, tol);
        let d = basis.ncols();
        let mut halfspaces = Vec::new();
        let vertices: Vec<Point>;
        if d == 0 {
            vertices = vec![p0.clone()];
        } else {
            let local: Vec<Point> = pts.iter().map(|p| basis.transpose() * (p - &p0)).collect();
            let facets = hull_facets(&local, tol);
            let mut keep = Vec::new();
            for (k, _) in pts.iter().enumerate() {
                let normals: Vec<&Point> =
                    facets.iter().filter(|(_, _, t)| t.binary_search(&k).is_ok()).map(|(nrm, _, _)| nrm).collect();
                if rank_of(&normals, 1e-9) == d {
                    keep.push(k);
                }
            }
            vertices = keep.iter().map(|&k| pts[k].clone()).collect();
            for (nrm, off, _) in &facets {
                let normal = &basis * nrm;
                let offset = off + normal.dot(&p0);
                halfspaces.push(HalfSpace::new(normal, offset));
            }
        }
        for q in orthogonal_complement(&basis, ambient) {
            let c = q.dot(&p0);
            halfspaces.push(HalfSpace { normal: q.clone(), offset: c });
            halfspaces.push(HalfSpace { normal: -q, offset: -c });
        }
        Polytope { ambient, vertices, halfspaces, dim: d }
    }

    /// Vertex enumeration of `{x : h_k·x <= c_k}`; any dimension, possibly empty.
    pub fn from_halfspaces(ambient: usize, hs: &[HalfSpace]) -> Result<Self, GeomError> {
        if !(1..=MAX_DIM).contains(&ambient) {
            return Err(GeomError::UnsupportedDimension(ambient));
        }
        if hs.is_empty() {
            return Err(GeomError::Unbounded);
        }
        let tol = tol::geom();
        let mut cands: Vec<Point> = Vec::new();
        combinations(hs.len(), ambient, |comb| {
            let a = DMatrix::from_fn(ambient, ambient, |i, j| hs[comb[i]].normal[j]);
            let b = DVector::from_fn(ambient, |i, _| hs[comb[i]].offset);
            let Some(x) = a.clone().lu().solve(&b) else { return };
            if (&a * &x - &b).amax() > 1e-9 * (1.0 + b.amax()) {
                return;
            }
            let scale = 1.0 + x.amax();
            if hs.iter().all(|h| h.eval(&x) <= tol * scale) {
                cands.push(x);
            }
        });
        if cands.is_empty() {
            // either empty or unbounded without vertices; bounded nonempty sets always have one
            let ineq: Vec<(Vec<f64>, f64)> = hs.iter().map(|h| (h.normal.iter().copied().collect(), h.offset)).collect();
            return match lp::feasible_point(ambient, &ineq, &[]) {
                Ok(Some(_)) => Err(GeomError::Unbounded),
                _ => Ok(Polytope::empty(ambient)),
            };
        }
        // boundedness: the recession cone must be trivial
        let ineq: Vec<(Vec<f64>, f64)> = hs.iter().map(|h| (h.normal.iter().copied().collect(), h.offset)).collect();
        for k in 0..ambient {
            for sign in [1.0, -1.0] {
                let mut c = vec![0.0; ambient];
                c[k] = -sign;
                let lp = lp::LinearProgram { objective: c, ineq: ineq.clone(), eq: vec![], nvars: ambient };
                if let Ok(out) = lp::solve(&lp) {
                    if out.status == lp::Status::Unbounded {
                        return Err(GeomError::Unbounded);
                    }
                }
            }
        }
        Ok(Polytope::hull(ambient, &cands))
    }

    pub fn contains(&self, x: &Point, tol: f64) -> bool {
        !self.is_empty() && self.halfspaces.iter().all(|h| h.eval(x) <= tol)
    }

    /// Largest halfspace violation at `x` (<= 0 inside).
    pub fn violation(&self, x: &Point) -> f64 {
        self.halfspaces.iter().map(|h| h.eval(x)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn centroid(&self) -> Point {
        let mut c = DVector::zeros(self.ambient);
        for v in &self.vertices {
            c += v;
        }
        c / self.vertices.len().max(1) as f64
    }

    /// Vertex-average is not the volume centroid; this one is, for full polytopes.
    pub fn interior_point(&self) -> Point {
        if !self.is_full() {
            return self.centroid();
        }
        let mut c = DVector::zeros(self.ambient);
        let mut w = 0.0;
        for s in pulling_triangulation(&self.vertices, None) {
            let v = simplex_volume(&s);
            let mut sc = DVector::zeros(self.ambient);
            for p in &s {
                sc += p;
            }
            c += sc / s.len() as f64 * v;
            w += v;
        }
        if w > 0.0 {
            c / w
        } else {
            self.centroid()
        }
    }

    /// Intersection with one halfspace.
    pub fn clip(&self, h: &HalfSpace) -> Polytope {
        if self.is_empty() {
            return self.clone();
        }
        let tol = self.tol();
        let vals: Vec<f64> = self.vertices.iter().map(|v| h.eval(v)).collect();
        let mut pts: Vec<Point> = Vec::new();
        for (v, &s) in self.vertices.iter().zip(&vals) {
            if s <= tol {
                pts.push(v.clone());
            }
        }
        if pts.len() == self.vertices.len() {
            return self.clone();
        }
        for i in 0..self.vertices.len() {
            for j in 0..self.vertices.len() {
                if vals[i] < -tol && vals[j] > tol {
                    let lam = vals[i] / (vals[i] - vals[j]);
                    pts.push(&self.vertices[i] + (&self.vertices[j] - &self.vertices[i]) * lam);
                }
            }
        }
        Polytope::hull(self.ambient, &pts)
    }

    pub fn clip_all(&self, hs: &[HalfSpace]) -> Polytope {
        let mut p = self.clone();
        for h in hs {
            p = p.clip(h);
            if p.is_empty() {
                break;
            }
        }
        p
    }

    /// Section by a hyperplane (lower-dimensional, possibly empty).
    pub fn section(&self, h: &Hyperplane) -> Polytope {
        self.clip(&h.below()).clip(&h.above())
    }

    pub fn intersect(&self, other: &Polytope) -> Polytope {
        if other.is_empty() {
            return Polytope::empty(self.ambient);
        }
        self.clip_all(&other.halfspaces)
    }

    pub fn volume(&self) -> f64 {
        volume(self)
    }

    /// Facets as faces, in the order of the stored halfspaces.
    pub fn facets(&self) -> Vec<Face> {
        if self.is_empty() || self.dim == 0 {
            return Vec::new();
        }
        let tol = self.tol();
        let mut out = Vec::new();
        for h in self.halfspaces.iter() {
            let vs: Vec<Point> = self.vertices.iter().filter(|v| h.eval(v).abs() <= tol).cloned().collect();
            if vs.len() == self.vertices.len() {
                continue; // an affine-hull equality, not a facet
            }
            let poly = Polytope::hull(self.ambient, &vs);
            if poly.dim + 1 == self.dim {
                out.push(Face { poly, supporting: Some(h.clone()) });
            }
        }
        out
    }

    /// Minimum and maximum of a linear functional over the polytope.
    pub fn min_max(&self, c: &Point) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in &self.vertices {
            let s = c.dot(v);
            lo = lo.min(s);
            hi = hi.max(s);
        }
        (lo, hi)
    }

    /// Vertices attaining the minimum (or maximum) of `c·x`, and the face they span.
    pub fn argmin_face(&self, c: &Point) -> Polytope {
        let (lo, _) = self.min_max(c);
        let tol = self.tol();
        let vs: Vec<Point> = self.vertices.iter().filter(|v| c.dot(v) <= lo + tol).cloned().collect();
        Polytope::hull(self.ambient, &vs)
    }

    pub fn argmax_face(&self, c: &Point) -> Polytope {
        self.argmin_face(&-c)
    }

    /// Every vertex of `self` lies in `other`.
    pub fn subset_of(&self, other: &Polytope, tol: f64) -> bool {
        self.vertices.iter().all(|v| other.contains(v, tol))
    }

    /// Axis-aligned bounding box.
    pub fn bbox(&self) -> (Point, Point) {
        let mut lo = DVector::from_element(self.ambient, f64::INFINITY);
        let mut hi = DVector::from_element(self.ambient, f64::NEG_INFINITY);
        for v in &self.vertices {
            for k in 0..self.ambient {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    pub fn has_vertex(&self, x: &Point, tol: f64) -> bool {
        self.vertices.iter().any(|v| same_point(v, x, tol))
    }
}

/// Convex hull of a full-dimensional point set; lower-dimensional input is
/// reported with its affine dimension so callers can branch on it.
pub fn convex_hull(points: &[Point]) -> Result<Polytope, GeomError> {
    let Some(first) = points.first() else { return Err(GeomError::DimensionDeficient { dim: 0 }) };
    let n = first.len();
    if !(1..=MAX_DIM).contains(&n) {
        return Err(GeomError::UnsupportedDimension(n));
    }
    let p = Polytope::hull(n, points);
    if p.dim < n {
        return Err(GeomError::DimensionDeficient { dim: p.dim });
    }
    Ok(p)
}

pub fn vrep_to_hrep(p: &Polytope) -> Result<Vec<HalfSpace>, GeomError> {
    if !p.is_full() {
        return Err(GeomError::Degenerate(format!("polytope has dimension {} in R^{}", p.dim, p.ambient)));
    }
    Ok(p.halfspaces.clone())
}

pub fn hrep_to_vrep(ambient: usize, hs: &[HalfSpace]) -> Result<Vec<Point>, GeomError> {
    let p = Polytope::from_halfspaces(ambient, hs)?;
    if !p.is_full() {
        return Err(GeomError::Degenerate(format!(
            "halfspaces describe a set of dimension {} in R^{}",
            if p.is_empty() { 0 } else { p.dim },
            ambient
        )));
    }
    Ok(p.vertices)
}

/// Splits along a hyperplane into the `normal·x <= offset` and `>=` parts.
/// A side that is empty or has no interior comes back as the empty polytope.
pub fn split_by_hyperplane(p: &Polytope, h: &Hyperplane) -> (Polytope, Polytope) {
    let solid = |q: Polytope| if q.is_full() { q } else { Polytope::empty(p.ambient) };
    (solid(p.clip(&h.below())), solid(p.clip(&h.above())))
}

pub fn simplex_volume(pts: &[Point]) -> f64 {
    let n = pts[0].len();
    if pts.len() != n + 1 {
        return 0.0;
    }
    let m = DMatrix::from_fn(n, n, |i, j| pts[j + 1][i] - pts[0][i]);
    let fact: f64 = (1..=n).map(|k| k as f64).product();
    m.determinant().abs() / fact
}

pub fn volume(p: &Polytope) -> f64 {
    if !p.is_full() {
        return 0.0;
    }
    pulling_triangulation(&p.vertices, None).iter().map(|s| simplex_volume(s)).sum()
}

/// Pulling triangulation of `conv(vertices)` (any affine dimension): cone from
/// the anchor (default: lexicographically smallest vertex) over recursively
/// triangulated faces that miss it. Using the same global order everywhere
/// makes triangulations of neighbouring faces agree on shared faces.
/// `vertices` must be the extreme points.
pub fn pulling_triangulation(vertices: &[Point], anchor: Option<&Point>) -> Vec<Vec<Point>> {
    if vertices.is_empty() {
        return Vec::new();
    }
    let tol = tol_for(vertices);
    let pts = canonical_points(vertices.to_vec(), tol);
    let (p0, basis) = affine_hull(&pts, tol);
    let d = basis.ncols();
    let apex_idx = match anchor {
        Some(a) => pts.iter().position(|p| same_point(p, a, tol)).unwrap_or(0),
        None => 0,
    };
    if d == 0 {
        return vec![vec![pts[0].clone()]];
    }
    let local: Vec<Point> = pts.iter().map(|p| basis.transpose() * (p - &p0)).collect();
    let facets = hull_facets(&local, tol);
    let mut out = Vec::new();
    for (_, _, tight) in facets {
        if tight.binary_search(&apex_idx).is_ok() {
            continue;
        }
        let fverts: Vec<Point> = tight.iter().map(|&k| pts[k].clone()).collect();
        for mut s in pulling_triangulation(&fverts, None) {
            s.insert(0, pts[apex_idx].clone());
            out.push(s);
        }
    }
    out
}

/// A face of a parent polytope: a lower-dimensional polytope with an
/// optional supporting halfspace of the parent.
#[derive(Clone, Debug, PartialEq)]
pub struct Face {
    pub poly: Polytope,
    pub supporting: Option<HalfSpace>,
}

impl Face {
    pub fn from_vertices(ambient: usize, vs: &[Point]) -> Face {
        Face { poly: Polytope::hull(ambient, vs), supporting: None }
    }

    pub fn vertices(&self) -> &[Point] {
        self.poly.vertices()
    }

    pub fn dim(&self) -> usize {
        self.poly.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.poly.is_empty()
    }

    pub fn contains(&self, x: &Point, tol: f64) -> bool {
        self.poly.contains(x, tol)
    }
}

/// All faces of dimension `d`.
pub fn faces_of(p: &Polytope, d: usize) -> Vec<Face> {
    if p.is_empty() || d > p.dim() {
        return Vec::new();
    }
    if d == p.dim() {
        return vec![Face { poly: p.clone(), supporting: None }];
    }
    let tol = p.tol();
    let facet_sets: Vec<(HalfSpace, Vec<usize>)> = p
        .facets()
        .into_iter()
        .map(|f| {
            let idx = (0..p.vertices.len()).filter(|&k| f.poly.has_vertex(&p.vertices[k], tol)).collect();
            (f.supporting.expect("facets carry their halfspace"), idx)
        })
        .collect();
    // closure of facet vertex sets under intersection
    let mut sets: Vec<(Vec<usize>, HalfSpace)> = facet_sets.iter().map(|(h, s)| (s.clone(), h.clone())).collect();
    let mut seen: HashSet<Vec<usize>> = sets.iter().map(|(s, _)| s.clone()).collect();
    let mut i = 0;
    while i < sets.len() {
        for (h, fs) in &facet_sets {
            let inter: Vec<usize> = sets[i].0.iter().copied().filter(|k| fs.contains(k)).collect();
            if !inter.is_empty() && seen.insert(inter.clone()) {
                let hs = if inter.len() < sets[i].0.len() { h.clone() } else { sets[i].1.clone() };
                sets.push((inter, hs));
            }
        }
        i += 1;
    }
    let mut out = Vec::new();
    for (s, h) in sets {
        let vs: Vec<Point> = s.iter().map(|&k| p.vertices[k].clone()).collect();
        let poly = Polytope::hull(p.ambient, &vs);
        if poly.dim() == d {
            out.push(Face { poly, supporting: Some(h) });
        }
    }
    out.sort_by(|a, b| cmp_vertex_lists(a.vertices(), b.vertices()));
    out
}

pub fn cmp_vertex_lists(a: &[Point], b: &[Point]) -> Ordering {
    let tol = tol::geom();
    for (x, y) in a.iter().zip(b) {
        let c = lex_cmp(x, y, tol);
        if c != Ordering::Equal {
            return c;
        }
    }
    a.len().cmp(&b.len())
}

/// Intersection of two polytopes as a face (possibly empty or lower-dimensional).
pub fn common_face(p: &Polytope, q: &Polytope) -> Face {
    let inter = p.intersect(q);
    let tol = inter.tol().max(p.tol());
    let supporting = p
        .halfspaces()
        .iter()
        .find(|h| !inter.is_empty() && inter.vertices().iter().all(|v| h.eval(v).abs() <= tol))
        .cloned();
    Face { poly: inter, supporting }
}

/// Triangulation of an (n-1)-dimensional face into (n-1)-simplices, each
/// given by its n vertices. Anchor defaults to the smallest vertex.
pub fn triangulate_face(f: &Face, anchor: Option<&Point>) -> Vec<Vec<Point>> {
    pulling_triangulation(f.vertices(), anchor)
}

// ---------------------------------------------------------------------------
// Simplex
// ---------------------------------------------------------------------------

/// Full-dimensional simplex. Facet j omits vertex j; `normals[j]` is its unit
/// outward normal and `offsets[j]` its offset, so `normals[j]·v_i = offsets[j]`
/// for i != j and `normals[j]·v_j < offsets[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Simplex {
    pub vertices: Vec<Point>,
    pub normals: Vec<Point>,
    pub offsets: Vec<f64>,
}

impl Simplex {
    pub fn new(vertices: Vec<Point>) -> Result<Simplex, GeomError> {
        let n = vertices.first().map(|v| v.len()).unwrap_or(0);
        if vertices.len() != n + 1 || n == 0 {
            return Err(GeomError::Degenerate(format!("{} points do not form a simplex in R^{n}", vertices.len())));
        }
        if simplex_volume(&vertices) <= tol::geom() * tol_for(&vertices).max(1e-300) {
            return Err(GeomError::Degenerate("simplex vertices are affinely dependent".into()));
        }
        let mut normals = Vec::with_capacity(n + 1);
        let mut offsets = Vec::with_capacity(n + 1);
        for j in 0..=n {
            let others: Vec<&Point> = vertices.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, v)| v).collect();
            let diffs: Vec<Point> = others[1..].iter().map(|v| *v - others[0]).collect();
            let mut nrm = normal_of(&diffs, n)
                .ok_or_else(|| GeomError::Degenerate("simplex facet is degenerate".into()))?;
            let mut off = nrm.dot(others[0]);
            if nrm.dot(&vertices[j]) > off {
                nrm = -nrm;
                off = -off;
            }
            normals.push(nrm);
            offsets.push(off);
        }
        Ok(Simplex { vertices, normals, offsets })
    }

    pub fn n(&self) -> usize {
        self.vertices.len() - 1
    }

    pub fn contains(&self, x: &Point, tol: f64) -> bool {
        self.normals.iter().zip(&self.offsets).all(|(h, c)| h.dot(x) - c <= tol)
    }

    pub fn violation(&self, x: &Point) -> f64 {
        self.normals.iter().zip(&self.offsets).map(|(h, c)| h.dot(x) - c).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn facet_vertices(&self, j: usize) -> Vec<Point> {
        self.vertices.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, v)| v.clone()).collect()
    }

    pub fn volume(&self) -> f64 {
        simplex_volume(&self.vertices)
    }

    pub fn centroid(&self) -> Point {
        let mut c = DVector::zeros(self.n());
        for v in &self.vertices {
            c += v;
        }
        c / self.vertices.len() as f64
    }

    pub fn to_polytope(&self) -> Polytope {
        Polytope::hull(self.n(), &self.vertices)
    }

    pub fn facet_halfspace(&self, j: usize) -> HalfSpace {
        HalfSpace { normal: self.normals[j].clone(), offset: self.offsets[j] }
    }

    /// Index of the vertex equal to `x`, if any.
    pub fn vertex_index(&self, x: &Point, tol: f64) -> Option<usize> {
        self.vertices.iter().position(|v| same_point(v, x, tol))
    }
}

/// Checks that `simplices` form a triangulation of `p`: volumes add up and any
/// two simplices meet in a common face (their intersection is the hull of the
/// vertices they share).
pub fn is_triangulation_of(p: &Polytope, simplices: &[Simplex], rel_tol: f64) -> bool {
    let vp = p.volume();
    let vs: f64 = simplices.iter().map(|s| s.volume()).sum();
    if (vp - vs).abs() > rel_tol * vp.max(1e-300) {
        return false;
    }
    let tol = p.tol() * 10.0;
    for i in 0..simplices.len() {
        for j in i + 1..simplices.len() {
            let a = simplices[i].to_polytope();
            let b = simplices[j].to_polytope();
            let inter = a.intersect(&b);
            let shared: Vec<Point> =
                simplices[i].vertices.iter().filter(|v| simplices[j].vertex_index(v, tol).is_some()).cloned().collect();
            if inter.is_empty() {
                if !shared.is_empty() {
                    return false;
                }
                continue;
            }
            if inter.dim() == p.ambient() {
                return false;
            }
            if !inter.vertices().iter().all(|v| shared.iter().any(|s| same_point(s, v, tol))) {
                return false;
            }
        }
    }
    true
}
