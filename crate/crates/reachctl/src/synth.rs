//! Piecewise-affine feedback synthesis.
//!
//! On a simplex with exit facet `F_e` (the facet opposite vertex `v_e`) an
//! affine feedback steers every state out through `F_e` when, at each
//! vertex `v_i`, the closed-loop field points into the simplex across every
//! facet through `v_i` except the exit facet, and the closed loop has no
//! equilibrium in the simplex. Vertex controls come from small LPs, with the
//! constructive case analysis as a fallback. Simplices whose exit facet lies
//! in O and sits strictly below the opposite vertex are split in two first.
//!
//! Polytopes are triangulated, simplices are ordered by a greedy sweep in β,
//! and the pieces are assembled into one controller whose lookup prefers
//! the piece closest to the target.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{same_point, Face, Point, Polytope, Simplex};
use crate::lp::{self, LinearProgram, LpError, Status};
use crate::reach::{analyze, epsilon_cut, ReachError};
use crate::system::{compute_geometry, containing_facet, plane_crosses_interior, AffineSystem, SystemError, SystemGeometry};
use crate::tol;
use crate::triangulate::{
    basic_triangulation, cover_wrt_f, cover_wrt_o, is_facet, qualifying_vertices, shared_facet, split_far_case,
    triangulation_wrt_f, TriError, Triangulation,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("target is not reachable from any full-dimensional part of P")]
    NotReachable,
    #[error("synthesis failed on simplex {simplex:?}: {reason}")]
    SynthesisFailed { simplex: Vec<Vec<f64>>, reason: String },
    #[error("no vertex case applies at vertex {0}; the simplex cannot reach its exit facet")]
    CaseViolation(usize),
    #[error("invariance conditions infeasible at vertex {0}")]
    Infeasible(usize),
    #[error("vertex matrix is singular")]
    SingularVertexMatrix,
    #[error("greedy ordering stuck with {} unfinished simplices", frontier.len())]
    Stuck { frontier: Vec<usize> },
    #[error(transparent)]
    Tri(#[from] TriError),
    #[error(transparent)]
    Reach(#[from] ReachError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Lp(#[from] LpError),
}

fn simplex_coords(s: &Simplex) -> Vec<Vec<f64>> {
    s.vertices.iter().map(|v| v.iter().copied().collect()).collect()
}

/// Controls at the simplex vertices with their certified margins.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexControls {
    pub u: Vec<DVector<f64>>,
    /// Smallest margin `-h_j·f(v_i)` over the blocked (i, j) pairs.
    pub slack: f64,
    /// Smallest outward component `h_e·f(v_i)` at the exit-facet vertices.
    pub exit_margin: f64,
}

/// Pairs (i, j) that must satisfy `h_j·f(v_i) <= 0`: every facet through
/// `v_i` except the exit facet.
pub fn blocked_pairs(n: usize, exit: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..=n {
        for j in 0..=n {
            if j != i && j != exit {
                out.push((i, j));
            }
        }
    }
    out
}

/// Largest `h_j·(A v_i + a + B u_i)` over the blocked pairs (<= 0 when the
/// invariance conditions hold).
pub fn invariance_residual(sys: &AffineSystem, s: &Simplex, exit: usize, u: &[DVector<f64>]) -> f64 {
    blocked_pairs(s.n(), exit)
        .into_iter()
        .map(|(i, j)| s.normals[j].dot(&sys.field(&s.vertices[i], &u[i])))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn exit_margin(sys: &AffineSystem, s: &Simplex, exit: usize, u: &[DVector<f64>]) -> f64 {
    (0..=s.n())
        .filter(|&i| i != exit)
        .map(|i| s.normals[exit].dot(&sys.field(&s.vertices[i], &u[i])))
        .fold(f64::INFINITY, f64::min)
}

/// Vertex controls by staged LPs: maximize the blocking margin, then the
/// outward push through the exit facet, then shrink the controls while
/// keeping half of both margins.
pub fn vertex_controls_lp(sys: &AffineSystem, s: &Simplex, exit: usize) -> Result<VertexControls, SynthError> {
    let n = s.n();
    let m = sys.m();
    let tol_lp = tol::lp();
    let mut us = Vec::with_capacity(n + 1);
    let mut slack = f64::INFINITY;
    for i in 0..=n {
        let d = sys.drift(&s.vertices[i]);
        // variables: u (m), t_block, t_push
        let nv = m + 2;
        let mut ineq: Vec<(Vec<f64>, f64)> = Vec::new();
        let hb = |h: &Point| -> Vec<f64> { (0..m).map(|k| h.dot(&sys.b.column(k))).collect() };
        let blocked: Vec<usize> = (0..=n).filter(|&j| j != i && j != exit).collect();
        for &j in &blocked {
            let mut r = hb(&s.normals[j]);
            r.push(1.0);
            r.push(0.0);
            ineq.push((r, -s.normals[j].dot(&d)));
        }
        let push = i != exit;
        if push {
            let mut r: Vec<f64> = hb(&s.normals[exit]).into_iter().map(|x| -x).collect();
            r.push(0.0);
            r.push(1.0);
            ineq.push((r, s.normals[exit].dot(&d)));
        }
        let mut cap_b = vec![0.0; nv];
        cap_b[m] = 1.0;
        ineq.push((cap_b, 1.0));
        let mut cap_p = vec![0.0; nv];
        cap_p[m + 1] = 1.0;
        ineq.push((cap_p, 1.0));
        if blocked.is_empty() {
            // no blocking constraint: pin t_block at its cap
            let mut r = vec![0.0; nv];
            r[m] = -1.0;
            ineq.push((r, -1.0));
        }
        if !push {
            let mut r = vec![0.0; nv];
            r[m + 1] = -1.0;
            ineq.push((r, -1.0));
        }
        let stage = |obj: Vec<f64>, extra: &[(Vec<f64>, f64)]| -> Result<Vec<f64>, SynthError> {
            let mut rows = ineq.clone();
            rows.extend_from_slice(extra);
            let out = lp::solve(&LinearProgram { objective: obj, ineq: rows, eq: vec![], nvars: nv })?;
            match out.status {
                Status::Optimal => Ok(out.x_opt.expect("optimal point")),
                _ => Err(SynthError::Infeasible(i)),
            }
        };
        let mut obj = vec![0.0; nv];
        obj[m] = -1.0;
        let x1 = stage(obj, &[])?;
        let tb = x1[m];
        if tb < -tol_lp {
            return Err(SynthError::Infeasible(i));
        }
        let keep = |t: f64| if t > 0.0 { 0.5 * t } else { t - 1e-12 };
        let mut floor_b = vec![0.0; nv];
        floor_b[m] = -1.0;
        let mut obj = vec![0.0; nv];
        obj[m + 1] = -1.0;
        let x2 = stage(obj, &[(floor_b.clone(), -(tb - 1e-12))])?;
        let tp = x2[m + 1];
        // stage 3: small controls, via split variables appended as extra rows
        let mut floor_p = vec![0.0; nv];
        floor_p[m + 1] = -1.0;
        let fixed = [(floor_b, -keep(tb)), (floor_p, -keep(tp))];
        let big = 2 * m + 2;
        let widen = |r: &Vec<f64>| -> Vec<f64> {
            let mut w = vec![0.0; big];
            for k in 0..m {
                w[k] = r[k];
                w[m + k] = -r[k];
            }
            w[2 * m] = r[m];
            w[2 * m + 1] = r[m + 1];
            w
        };
        let rows: Vec<(Vec<f64>, f64)> = ineq.iter().chain(fixed.iter()).map(|(r, h)| (widen(r), *h)).collect();
        let mut obj = vec![0.0; big];
        for k in 0..2 * m {
            obj[k] = 1.0;
        }
        // free variables are split internally by the solver; add |u| via u = u⁺ - u⁻ with u± >= 0
        let mut rows = rows;
        for k in 0..2 * m {
            let mut r = vec![0.0; big];
            r[k] = -1.0;
            rows.push((r, 0.0));
        }
        let out = lp::solve(&LinearProgram { objective: obj, ineq: rows, eq: vec![], nvars: big })?;
        let u = match (out.status, out.x_opt) {
            (Status::Optimal, Some(x)) => DVector::from_fn(m, |k, _| x[k] - x[m + k]),
            _ => DVector::from_fn(m, |k, _| x2[k]),
        };
        us.push(u);
        slack = slack.min(keep(tb).max(tb.min(0.0)));
    }
    let res = invariance_residual(sys, s, exit, &us);
    if res > tol_lp {
        return Err(SynthError::Infeasible(usize::MAX));
    }
    let em = exit_margin(sys, s, exit, &us);
    Ok(VertexControls { slack: slack.min(-res), exit_margin: em, u: us })
}

fn lstsq(m: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    m.clone().svd(true, true).solve(b, 1e-12).expect("SVD computed with U and V")
}

/// Point of the simplex strictly below `level` in β, as close to the
/// centroid as possible: the centroid when it already qualifies, otherwise
/// a point on the segment from `w_lo` toward the centroid.
fn aim_point(s: &Simplex, beta: &Point, w_lo: &Point, level: f64) -> Point {
    let c = s.centroid();
    if beta.dot(&c) < level {
        return c;
    }
    let target = 0.5 * (beta.dot(w_lo) + level);
    let denom = beta.dot(&c) - beta.dot(w_lo);
    let theta = if denom > 0.0 { ((target - beta.dot(w_lo)) / denom).clamp(1e-6, 1.0) } else { 0.5 };
    w_lo + (c - w_lo) * theta
}

/// Vertex controls from the constructive case analysis.
pub fn vertex_controls_constructive(
    sys: &AffineSystem,
    geom: &SystemGeometry,
    s: &Simplex,
    exit: usize,
) -> Result<VertexControls, SynthError> {
    let n = s.n();
    let m = sys.m();
    let tol = s.to_polytope().tol();
    let beta = &geom.beta;
    let lvl = |x: &Point| beta.dot(x);
    let fv = s.facet_vertices(exit);
    let w_lo = fv.iter().min_by(|a, b| lvl(a).total_cmp(&lvl(b))).expect("facet nonempty").clone();
    let w_hi = fv.iter().max_by(|a, b| lvl(a).total_cmp(&lvl(b))).expect("facet nonempty").clone();
    let v0 = &s.vertices[exit];
    let mut us = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let vi = &s.vertices[i];
        let d = sys.drift(vi);
        let in_o = geom.in_o(vi, tol);
        let u = if !in_o {
            let (from, level) = if lvl(vi) > lvl(&w_lo) + tol {
                (vi.clone(), lvl(vi))
            } else if i != exit && lvl(v0) > lvl(&w_lo) + tol {
                (v0.clone(), lvl(v0))
            } else {
                return Err(SynthError::CaseViolation(i));
            };
            // A v_i + a + B u = λ (p - from), solved for (u, λ)
            let p = aim_point(s, beta, &w_lo, level);
            let dir = &p - &from;
            let mat = DMatrix::from_fn(n, m + 1, |r, c| if c < m { -sys.b[(r, c)] } else { dir[r] });
            let sol = lstsq(&mat, &d);
            if sol[m] <= 0.0 {
                return Err(SynthError::CaseViolation(i));
            }
            DVector::from_fn(m, |k, _| sol[k])
        } else if lvl(&w_hi) >= lvl(v0) - tol && lvl(v0) >= lvl(&w_lo) - tol {
            // aim along B from v0 toward the point of [w_lo, w_hi] at v0's level
            let span = lvl(&w_hi) - lvl(&w_lo);
            let t = if span > tol { ((lvl(v0) - lvl(&w_lo)) / span).clamp(0.0, 1.0) } else { 0.0 };
            let p2 = &w_lo + (&w_hi - &w_lo) * t;
            let rhs = (&p2 - v0) - &d;
            lstsq(&sys.b, &rhs)
        } else if lvl(v0) > lvl(&w_hi) + tol && i != exit {
            // β·y = 0, h_j·y = -1 on every other non-exit facet
            let mut rows: Vec<Point> = vec![beta.clone()];
            let mut rhs = vec![0.0];
            for j in 0..=n {
                if j != exit && j != i {
                    rows.push(s.normals[j].clone());
                    rhs.push(-1.0);
                }
            }
            let mat = DMatrix::from_fn(rows.len(), n, |r, c| rows[r][c]);
            let y = lstsq(&mat, &DVector::from_vec(rhs));
            lstsq(&sys.b, &(y - &d))
        } else {
            return Err(SynthError::CaseViolation(i));
        };
        us.push(u);
    }
    let res = invariance_residual(sys, s, exit, &us);
    let em = exit_margin(sys, s, exit, &us);
    Ok(VertexControls { slack: -res, exit_margin: em, u: us })
}

/// `[F g]` with `F v_i + g = u_i` at every vertex.
pub fn affine_from_vertex_controls(s: &Simplex, u: &[DVector<f64>]) -> Result<(DMatrix<f64>, DVector<f64>), SynthError> {
    let n = s.n();
    let m = u[0].len();
    // M^T [F g]^T = U^T with M = [v_0 .. v_n; 1 .. 1]
    let mt = DMatrix::from_fn(n + 1, n + 1, |r, c| if c < n { s.vertices[r][c] } else { 1.0 });
    let ut = DMatrix::from_fn(n + 1, m, |r, c| u[r][c]);
    let lu = mt.lu();
    let sol = lu.solve(&ut).ok_or(SynthError::SingularVertexMatrix)?;
    let f = DMatrix::from_fn(m, n, |r, c| sol[(c, r)]);
    let g = DVector::from_fn(m, |r, _| sol[(n, r)]);
    Ok((f, g))
}

/// True when the closed loop `x' = (A + B F) x + a + B g` has no equilibrium in `s`.
pub fn check_no_equilibrium(sys: &AffineSystem, s: &Simplex, f: &DMatrix<f64>, g: &DVector<f64>) -> bool {
    let n = s.n();
    let a_cl = &sys.a + &sys.b * f;
    let b_cl = &sys.c + &sys.b * g;
    let tol = s.to_polytope().tol();
    let svd = a_cl.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let smin = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
    if smin > 1e-10 * smax.max(1.0) {
        if let Some(x) = a_cl.clone().lu().solve(&(-&b_cl)) {
            return !s.contains(&x, tol);
        }
    }
    let eq: Vec<(Vec<f64>, f64)> = (0..n).map(|r| (a_cl.row(r).iter().copied().collect(), -b_cl[r])).collect();
    let ineq: Vec<(Vec<f64>, f64)> =
        (0..=n).map(|j| (s.normals[j].iter().copied().collect(), s.offsets[j] + tol)).collect();
    !matches!(lp::feasible_point(n, &ineq, &eq), Ok(Some(_)))
}

/// One affine law on one simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinePiece {
    pub region: Simplex,
    pub gain: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub exit_facet: usize,
    /// Greedy path length from this simplex to its target.
    pub path_len: usize,
    /// 0 for pieces reaching the original target; feeders get higher tiers.
    pub tier: usize,
    /// Position within a split simplex (0 is the part touching the exit facet).
    pub sub: usize,
    pub slack: f64,
    pub exit_margin: f64,
    pub vertex_controls: Vec<DVector<f64>>,
}

impl AffinePiece {
    pub fn control(&self, x: &Point) -> DVector<f64> {
        &self.gain * x + &self.offset
    }
}

fn piece_from_controls(
    sys: &AffineSystem,
    s: &Simplex,
    exit: usize,
    vc: VertexControls,
) -> Result<Option<AffinePiece>, SynthError> {
    if invariance_residual(sys, s, exit, &vc.u) > tol::lp() {
        return Ok(None);
    }
    let (f, g) = affine_from_vertex_controls(s, &vc.u)?;
    if !check_no_equilibrium(sys, s, &f, &g) {
        return Ok(None);
    }
    Ok(Some(AffinePiece {
        region: s.clone(),
        gain: f,
        offset: g,
        exit_facet: exit,
        path_len: 0,
        tier: 0,
        sub: 0,
        slack: vc.slack,
        exit_margin: vc.exit_margin,
        vertex_controls: vc.u,
    }))
}

fn single_piece(sys: &AffineSystem, geom: &SystemGeometry, s: &Simplex, exit: usize) -> Result<AffinePiece, SynthError> {
    let mut reasons = Vec::new();
    match vertex_controls_lp(sys, s, exit) {
        Ok(vc) => match piece_from_controls(sys, s, exit, vc)? {
            Some(p) => return Ok(p),
            None => reasons.push("LP controls leave an equilibrium in the simplex".to_string()),
        },
        Err(e) => reasons.push(format!("LP: {e}")),
    }
    match vertex_controls_constructive(sys, geom, s, exit) {
        Ok(vc) => match piece_from_controls(sys, s, exit, vc)? {
            Some(p) => return Ok(p),
            None => reasons.push("constructive controls violate invariance or flow".to_string()),
        },
        Err(e) => reasons.push(format!("constructive: {e}")),
    }
    Err(SynthError::SynthesisFailed { simplex: simplex_coords(s), reason: reasons.join("; ") })
}

/// Whether the simplex needs the two-piece split: the exit facet lies in O
/// and the opposite vertex is strictly above it in β.
pub fn needs_split(geom: &SystemGeometry, s: &Simplex, exit: usize) -> bool {
    let tol = s.to_polytope().tol();
    let fv = s.facet_vertices(exit);
    let hi = fv.iter().map(|v| geom.level(v)).fold(f64::NEG_INFINITY, f64::max);
    geom.level(&s.vertices[exit]) > hi + tol && fv.iter().all(|v| geom.in_o(v, tol))
}

/// The split simplices: `(S2, exit of S2)` touching the exit facet, then `(S1, exit of S1)`.
pub fn split_simplex(geom: &SystemGeometry, s: &Simplex, exit: usize) -> Result<[(Simplex, usize); 2], SynthError> {
    let fv = s.facet_vertices(exit);
    let lvl = |x: &Point| geom.level(x);
    let w_lo = fv.iter().min_by(|a, b| lvl(a).total_cmp(&lvl(b))).expect("facet nonempty").clone();
    let w_hi = fv.iter().max_by(|a, b| lvl(a).total_cmp(&lvl(b))).expect("facet nonempty").clone();
    let v0 = s.vertices[exit].clone();
    let mid = 0.5 * (lvl(&w_lo) + lvl(&w_hi));
    let lam = (mid - lvl(&w_lo)) / (lvl(&v0) - lvl(&w_lo));
    let vp = &w_lo + (&v0 - &w_lo) * lam;
    let tol = s.to_polytope().tol();
    let mut s2v = vec![vp.clone()];
    s2v.extend(fv.iter().cloned());
    let mut s1v = vec![v0.clone(), vp.clone()];
    s1v.extend(fv.iter().filter(|v| !same_point(v, &w_lo, tol)).cloned());
    let s2 = Simplex::new(s2v)?;
    let s1 = Simplex::new(s1v)?;
    let e2 = s2.vertex_index(&vp, tol).expect("v' is a vertex");
    let e1 = s1.vertex_index(&v0, tol).expect("v0 is a vertex");
    Ok([(s2, e2), (s1, e1)])
}

impl From<crate::geometry::GeomError> for SynthError {
    fn from(e: crate::geometry::GeomError) -> Self {
        SynthError::Tri(TriError::Geometry(e))
    }
}

/// Affine pieces steering `s` out through facet `exit` (one, or two after a split).
pub fn synth_simplex(
    sys: &AffineSystem,
    geom: &SystemGeometry,
    s: &Simplex,
    exit: usize,
) -> Result<Vec<AffinePiece>, SynthError> {
    if needs_split(geom, s, exit) {
        let parts = split_simplex(geom, s, exit)?;
        let mut out = Vec::with_capacity(2);
        for (sub, (sj, ej)) in parts.into_iter().enumerate() {
            let mut p = single_piece(sys, geom, &sj, ej)?;
            p.sub = sub;
            out.push(p);
        }
        return Ok(out);
    }
    Ok(vec![single_piece(sys, geom, s, exit)?])
}

// ---------------------------------------------------------------------------
// greedy ordering
// ---------------------------------------------------------------------------

/// Where each simplex exits to, in the order simplices were finished.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyPaths {
    /// Simplex indices in the order they were moved to the finished set.
    pub order: Vec<usize>,
    /// Exit facet index per simplex.
    pub exit: Vec<usize>,
    /// Next simplex on the path (None: the target).
    pub next: Vec<Option<usize>>,
    pub path_len: Vec<usize>,
    /// Minimal β over the chosen exit facet, per iteration.
    pub levels: Vec<f64>,
}

pub fn greedy_paths(t: &Triangulation, geom: &SystemGeometry) -> Result<GreedyPaths, SynthError> {
    let q = t.simplices.len();
    let tol = t.target.poly.tol().max(tol::geom()) * 10.0;
    let mut done = vec![false; q];
    let mut exit = vec![usize::MAX; q];
    let mut next: Vec<Option<usize>> = vec![None; q];
    let mut path_len = vec![0usize; q];
    let mut order = Vec::new();
    let mut levels = Vec::new();
    let polys: Vec<Polytope> = t.simplices.iter().map(|s| s.to_polytope()).collect();
    while order.len() < q {
        // candidate (level, -count, i, next, facet)
        let mut cands: Vec<(f64, i64, usize, Option<usize>, usize)> = Vec::new();
        let mut push_cand = |i: usize, nx: Option<usize>, fi: usize| {
            let fv = t.simplices[i].facet_vertices(fi);
            let lo = fv.iter().map(|v| geom.level(v)).fold(f64::INFINITY, f64::min);
            let cnt = fv.iter().filter(|v| geom.level(v) <= lo + tol).count() as i64;
            cands.push((lo, -cnt, i, nx, fi));
        };
        for i in 0..q {
            if done[i] {
                continue;
            }
            for &(si, fi) in &t.target_facets {
                if si == i {
                    push_cand(i, None, fi);
                }
            }
            for j in t.neighbours(i) {
                if done[j] {
                    let (fi, _) = shared_facet(&t.simplices[i], &t.simplices[j], tol).expect("adjacent");
                    push_cand(i, Some(j), fi);
                }
            }
        }
        cands.sort_by(|a, b| {
            let da = a.0 - b.0;
            if da.abs() > tol {
                return a.0.total_cmp(&b.0);
            }
            a.1.cmp(&b.1).then(a.2.cmp(&b.2)).then(a.3.map_or(0, |x| x + 1).cmp(&b.3.map_or(0, |x| x + 1)))
        });
        let mut chosen = None;
        for c in &cands {
            let (_, _, i, _, fi) = *c;
            let face = Face::from_vertices(t.simplices[i].n(), &t.simplices[i].facet_vertices(fi));
            if analyze(geom, &polys[i], &face).map(|r| r.reachable).unwrap_or(false) {
                chosen = Some(*c);
                break;
            }
        }
        let Some((lo, _, i, nx, fi)) = chosen else {
            return Err(SynthError::Stuck { frontier: (0..q).filter(|&k| !done[k]).collect() });
        };
        done[i] = true;
        exit[i] = fi;
        next[i] = nx;
        path_len[i] = 1 + nx.map_or(0, |j| path_len[j]);
        order.push(i);
        levels.push(lo);
    }
    Ok(GreedyPaths { order, exit, next, path_len, levels })
}

// ---------------------------------------------------------------------------
// controller
// ---------------------------------------------------------------------------

fn diameter(s: &Simplex) -> f64 {
    let v0 = &s.vertices[0];
    s.vertices.iter().map(|v| (v - v0).amax()).fold(0.0, f64::max)
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("no controller piece contains the state {0:?}")]
pub struct ControllerGap(pub Vec<f64>);

#[derive(Clone, Debug, PartialEq)]
pub struct PwaController {
    pub pieces: Vec<AffinePiece>,
}

impl PwaController {
    fn rank(&self, k: usize) -> (usize, usize, usize, usize) {
        let p = &self.pieces[k];
        (p.tier, p.path_len, p.sub, k)
    }

    /// Piece index for `x`: among pieces containing it, lowest tier, then
    /// shortest path, then split position, then index.
    pub fn lookup(&self, x: &Point) -> Result<usize, ControllerGap> {
        for tol in [tol::geom(), tol::SIM] {
            let best = (0..self.pieces.len())
                .filter(|&k| {
                    let r = &self.pieces[k].region;
                    r.contains(x, tol * diameter(r).max(1.0))
                })
                .min_by_key(|&k| self.rank(k));
            if let Some(k) = best {
                return Ok(k);
            }
        }
        Err(ControllerGap(x.iter().copied().collect()))
    }

    pub fn control(&self, x: &Point) -> Result<(usize, DVector<f64>), ControllerGap> {
        let k = self.lookup(x)?;
        Ok((k, self.pieces[k].control(x)))
    }

    pub fn contains(&self, x: &Point, tol: f64) -> bool {
        self.pieces.iter().any(|p| p.region.contains(x, tol))
    }

    /// Bounding box of all pieces.
    pub fn bbox(&self) -> (Point, Point) {
        let n = self.pieces[0].region.n();
        let mut lo = DVector::from_element(n, f64::INFINITY);
        let mut hi = DVector::from_element(n, f64::NEG_INFINITY);
        for p in &self.pieces {
            for v in &p.region.vertices {
                for k in 0..n {
                    lo[k] = lo[k].min(v[k]);
                    hi[k] = hi[k].max(v[k]);
                }
            }
        }
        (lo, hi)
    }
}

/// One triangulated region of the synthesis with its target.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthPart {
    pub label: String,
    pub region: Polytope,
    pub target: Face,
    pub tier: usize,
    pub triangulation: Triangulation,
    pub greedy: GreedyPaths,
}

/// Everything produced by [`synth_polytope`].
#[derive(Clone, Debug, PartialEq)]
pub struct Synthesis {
    pub controller: PwaController,
    pub parts: Vec<SynthPart>,
    /// The controlled set: P itself, or its trimmed reach set.
    pub domain: Polytope,
}

struct Builder<'a> {
    sys: &'a AffineSystem,
    eps: Option<f64>,
    parts: Vec<SynthPart>,
    pieces: Vec<AffinePiece>,
    depth: usize,
}

impl<'a> Builder<'a> {
    /// Synthesizes on a region already known to reach its target; returns the highest tier used.
    fn region(&mut self, p: &Polytope, f: &Face, tier: usize, label: &str) -> Result<usize, SynthError> {
        self.depth += 1;
        if self.depth > 16 {
            return Err(SynthError::SynthesisFailed { simplex: vec![], reason: "case dispatch did not terminate".into() });
        }
        let geom = compute_geometry(self.sys, p)?;
        let tol = p.tol();
        let out = if is_facet(p, f) {
            let vstar = crate::triangulate::select_vstar(p, f, &geom)?;
            let t = basic_triangulation(p, f, &vstar)?;
            self.triangulated(&geom, p, f, t, tier, label)?;
            tier
        } else {
            let fbar = containing_facet(p, f).ok_or(TriError::NotAFacet)?;
            let off = qualifying_vertices(p, f, &geom).into_iter().find(|v| !fbar.contains(v, tol));
            let top = p.argmax_face(&geom.beta);
            if let (Some(vstar), true) = (off, p.ambient() <= 3) {
                let t = triangulation_wrt_f(p, f, &vstar)?;
                self.triangulated(&geom, p, f, t, tier, label)?;
                tier
            } else if f.vertices().iter().any(|v| top.contains(v, tol)) {
                let cover = cover_wrt_f(p, f, &geom)?;
                let mut hi = tier;
                for piece in cover.pieces.iter().filter(|c| c.tier == 0) {
                    hi = hi.max(self.region(&piece.poly, &piece.target, tier, &format!("{label}/{}", piece.label))?);
                }
                let feeder = hi + 1;
                let mut top_tier = hi;
                for piece in cover.pieces.iter().filter(|c| c.tier > 0) {
                    top_tier = top_tier.max(self.region(&piece.poly, &piece.target, feeder, &format!("{label}/{}", piece.label))?);
                }
                top_tier
            } else {
                let (lower, upper, interface) = split_far_case(p, f, &geom)?;
                let hi = self.region(&lower, f, tier, &format!("{label}/lower"))?;
                self.region(&upper, &interface, hi + 1, &format!("{label}/upper"))?
            }
        };
        self.depth -= 1;
        Ok(out)
    }

    fn triangulated(
        &mut self,
        geom: &SystemGeometry,
        p: &Polytope,
        f: &Face,
        t: Triangulation,
        tier: usize,
        label: &str,
    ) -> Result<(), SynthError> {
        let gp = greedy_paths(&t, geom)?;
        for &i in &gp.order {
            for mut piece in synth_simplex(self.sys, geom, &t.simplices[i], gp.exit[i])? {
                piece.path_len = gp.path_len[i];
                piece.tier = tier;
                self.pieces.push(piece);
            }
        }
        self.parts.push(SynthPart {
            label: label.to_string(),
            region: p.clone(),
            target: f.clone(),
            tier,
            triangulation: t,
            greedy: gp,
        });
        Ok(())
    }

    /// Full dispatch for an arbitrary (P, F): O-cover, ε-cut, then region synthesis.
    fn top(&mut self, p: &Polytope, f: &Face) -> Result<Polytope, SynthError> {
        let beta0 = self.sys.input_normal()?;
        let o = self.sys.equilibrium_plane(&beta0)?;
        if plane_crosses_interior(&o, p) {
            let eps = self.eps.unwrap_or_else(|| {
                let (lo, hi) = p.min_max(&beta0);
                1e-2 * (hi - lo)
            });
            let cover = cover_wrt_o(self.sys, p, f, eps)?;
            let mut hi = 0;
            for piece in cover.pieces.iter().filter(|c| c.tier == 0) {
                hi = hi.max(self.region(&piece.poly, &piece.target, 0, &piece.label)?);
            }
            for piece in cover.pieces.iter().filter(|c| c.tier > 0) {
                self.region(&piece.poly, &piece.target, hi + 1, &piece.label)?;
            }
            return Ok(p.clone());
        }
        let geom = compute_geometry(self.sys, p)?;
        let ra = analyze(&geom, p, f)?;
        let region = if ra.reachable {
            p.clone()
        } else {
            let eps = self.eps.unwrap_or_else(|| crate::reach::default_eps(&geom, p));
            let cut = epsilon_cut(&geom, p, f, eps)?;
            if !cut.reach_eps.is_full() {
                return Err(SynthError::NotReachable);
            }
            cut.reach_eps
        };
        self.region(&region, f, 0, "P")?;
        Ok(region)
    }
}

/// Synthesizes a piecewise-affine feedback driving the reachable part of P
/// (all of P, or its trimmed reach set when failure sets exist) to F.
pub fn synth_polytope(sys: &AffineSystem, p: &Polytope, f: &Face, eps: Option<f64>) -> Result<Synthesis, SynthError> {
    let mut b = Builder { sys, eps, parts: Vec::new(), pieces: Vec::new(), depth: 0 };
    let region = b.top(p, f)?;
    // rebuilt from its vertices so a controller reloaded from V-rep sees the same set
    let domain = Polytope::hull(region.ambient(), region.vertices());
    Ok(Synthesis { controller: PwaController { pieces: b.pieces }, parts: b.parts, domain })
}
