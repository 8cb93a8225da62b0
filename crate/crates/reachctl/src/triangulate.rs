//! Triangulations and covers that turn a polytope reachability problem into
//! a family of simplex problems.
//!
//! * [`basic_triangulation`]: fan from an anchor vertex v* over the facets
//!   that miss it (F must be a facet).
//! * [`triangulation_wrt_f`]: the same fan, with the facet holding F
//!   triangulated so that F is a union of simplex facets (v* off that facet).
//! * [`cover_wrt_f`] / [`split_far_case`]: overlapping pieces for targets
//!   that are not facets and whose facet holds every usable anchor.
//! * [`cover_wrt_o`]: pieces on both sides of the equilibrium hyperplane
//!   when it crosses the interior of P.

use std::cmp::Ordering;

use nalgebra::DVector;
use thiserror::Error;

use crate::geometry::{
    affine_hull, canonical_points, cmp_vertex_lists, lex_cmp, normal_of, pulling_triangulation, same_point,
    split_by_hyperplane, Face, GeomError, Hyperplane, Point, Polytope, Simplex,
};
use crate::reach::{analyze, epsilon_cut, ReachError};
use crate::system::{compute_geometry, containing_facet, plane_crosses_interior, AffineSystem, SystemError, SystemGeometry};
use crate::tol;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TriError {
    #[error("no vertex of the β-top face is off O or in the target")]
    NoQualifyingVertex,
    #[error("every usable anchor vertex lies on the facet holding the target")]
    VStarInFbar,
    #[error("target is not a facet of the polytope")]
    NotAFacet,
    #[error("a target vertex lies on the β-top face; use the cover with respect to the target")]
    NotFarCase,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("could not split the polytope: {0}")]
    SplitFailed(String),
    #[error("cover pieces fill {covered} of volume {total}; retry with a smaller eps")]
    CoverIncomplete { covered: f64, total: f64 },
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error(transparent)]
    Reach(#[from] ReachError),
    #[error(transparent)]
    System(#[from] SystemError),
}

/// Simplices with their facet adjacency and the facets lying in the target.
#[derive(Clone, Debug, PartialEq)]
pub struct Triangulation {
    pub simplices: Vec<Simplex>,
    /// Pairs `(i, j)`, `i < j`, sharing a facet.
    pub adjacency: Vec<(usize, usize)>,
    /// `(simplex, facet index)` pairs whose facet lies in the target.
    pub target_facets: Vec<(usize, usize)>,
    pub target: Face,
}

impl Triangulation {
    /// Builds from vertex lists; simplices and their vertices are put in
    /// lexicographic order.
    pub fn from_vertex_lists(lists: Vec<Vec<Point>>, target: Face) -> Result<Self, TriError> {
        let t = tol::geom();
        let mut lists: Vec<Vec<Point>> = lists
            .into_iter()
            .map(|mut l| {
                l.sort_by(|a, b| lex_cmp(a, b, t));
                l
            })
            .collect();
        lists.sort_by(|a, b| cmp_vertex_lists(a, b));
        let simplices = lists.into_iter().map(Simplex::new).collect::<Result<Vec<_>, _>>()?;
        let tol = target.poly.tol().max(t) * 10.0;
        let mut adjacency = Vec::new();
        for i in 0..simplices.len() {
            for j in i + 1..simplices.len() {
                if shared_facet(&simplices[i], &simplices[j], tol).is_some() {
                    adjacency.push((i, j));
                }
            }
        }
        let mut target_facets = Vec::new();
        for (i, s) in simplices.iter().enumerate() {
            for j in 0..s.vertices.len() {
                if s.facet_vertices(j).iter().all(|v| target.contains(v, tol)) {
                    target_facets.push((i, j));
                }
            }
        }
        Ok(Triangulation { simplices, adjacency, target_facets, target })
    }

    pub fn neighbours(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency.iter().filter_map(move |&(a, b)| {
            if a == i {
                Some(b)
            } else if b == i {
                Some(a)
            } else {
                None
            }
        })
    }
}

/// Facet indices `(in a, in b)` of the common facet, if the simplices share one.
pub fn shared_facet(a: &Simplex, b: &Simplex, tol: f64) -> Option<(usize, usize)> {
    let n = a.n();
    let shared: Vec<usize> = (0..=n).filter(|&i| b.vertex_index(&a.vertices[i], tol).is_some()).collect();
    if shared.len() != n {
        return None;
    }
    let fa = (0..=n).find(|i| !shared.contains(i))?;
    let fb = (0..=n).find(|&j| a.vertex_index(&b.vertices[j], tol).is_none())?;
    Some((fa, fb))
}

/// Vertices of P on the β-top face that are off O or in F, in canonical order.
pub fn qualifying_vertices(p: &Polytope, f: &Face, geom: &SystemGeometry) -> Vec<Point> {
    let tol = p.tol();
    let top = p.argmax_face(&geom.beta);
    let mut off_o: Vec<Point> = Vec::new();
    let mut in_f: Vec<Point> = Vec::new();
    for v in top.vertices() {
        if !geom.in_o(v, tol) {
            off_o.push(v.clone());
        } else if f.contains(v, tol) {
            in_f.push(v.clone());
        }
    }
    off_o.extend(in_f);
    off_o
}

/// Anchor vertex: on the β-top face, preferably off O, else in F.
pub fn select_vstar(p: &Polytope, f: &Face, geom: &SystemGeometry) -> Result<Point, TriError> {
    qualifying_vertices(p, f, geom).into_iter().next().ok_or(TriError::NoQualifyingVertex)
}

/// Whether `f` is a whole facet of `p`.
pub fn is_facet(p: &Polytope, f: &Face) -> bool {
    let tol = p.tol();
    match containing_facet(p, f) {
        Some(fbar) => fbar.vertices().iter().all(|v| f.contains(v, tol)),
        None => false,
    }
}

/// Fan triangulation from `vstar` (a vertex of `p`) over the facets missing it.
pub fn basic_triangulation(p: &Polytope, f: &Face, vstar: &Point) -> Result<Triangulation, TriError> {
    let lists = pulling_triangulation(p.vertices(), Some(vstar));
    Triangulation::from_vertex_lists(lists, f.clone())
}

// ---------------------------------------------------------------------------
// planar point-set triangulation with forced edges
// ---------------------------------------------------------------------------

fn orient(a: &[f64; 2], b: &[f64; 2], c: &[f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn strictly_inside_segment(p: &[f64; 2], a: &[f64; 2], b: &[f64; 2], tol: f64) -> bool {
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    if orient(a, b, p).abs() > tol * len.max(1.0) {
        return false;
    }
    let t = ((p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1])) / (len * len);
    t > tol && t < 1.0 - tol
}

fn properly_cross(a: &[f64; 2], b: &[f64; 2], c: &[f64; 2], d: &[f64; 2], tol: f64) -> bool {
    let s = |x: f64| if x > tol { 1 } else if x < -tol { -1 } else { 0 };
    let o1 = s(orient(a, b, c));
    let o2 = s(orient(a, b, d));
    let o3 = s(orient(c, d, a));
    let o4 = s(orient(c, d, b));
    o1 * o2 < 0 && o3 * o4 < 0
}

/// Triangulates a planar point set (all points used as vertices), keeping
/// the `forced` segments as edges. Greedy: shortest non-crossing segments.
fn triangulate_planar(pts: &[[f64; 2]], forced: &[(usize, usize)], tol: f64) -> Vec<[usize; 3]> {
    let k = pts.len();
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            if (0..k).any(|m| m != i && m != j && strictly_inside_segment(&pts[m], &pts[i], &pts[j], tol)) {
                continue;
            }
            let d = (pts[i][0] - pts[j][0]).hypot(pts[i][1] - pts[j][1]);
            cands.push((d, i, j));
        }
    }
    cands.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let try_add = |edges: &mut Vec<(usize, usize)>, i: usize, j: usize| {
        let (i, j) = (i.min(j), i.max(j));
        if edges.contains(&(i, j)) {
            return;
        }
        if edges.iter().any(|&(a, b)| properly_cross(&pts[i], &pts[j], &pts[a], &pts[b], tol)) {
            return;
        }
        edges.push((i, j));
    };
    for &(i, j) in forced {
        try_add(&mut edges, i, j);
    }
    for &(_, i, j) in &cands {
        try_add(&mut edges, i, j);
    }
    let has = |i: usize, j: usize| edges.contains(&(i.min(j), i.max(j)));
    let mut tris = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            if !has(a, b) {
                continue;
            }
            for c in b + 1..k {
                if !has(a, c) || !has(b, c) {
                    continue;
                }
                let area = orient(&pts[a], &pts[b], &pts[c]);
                if area.abs() <= tol {
                    continue;
                }
                let sgn = area.signum();
                let empty = (0..k).filter(|&m| m != a && m != b && m != c).all(|m| {
                    let p = &pts[m];
                    !(sgn * orient(&pts[a], &pts[b], p) >= -tol
                        && sgn * orient(&pts[b], &pts[c], p) >= -tol
                        && sgn * orient(&pts[c], &pts[a], p) >= -tol)
                });
                if empty {
                    tris.push([a, b, c]);
                }
            }
        }
    }
    tris
}

/// Triangulates an (n-1)-dimensional facet using every point of `extra` that
/// lies on it, so neighbouring facets agree. `forced` lists segments that
/// must be edges (only meaningful for 2-dimensional facets).
fn triangulate_facet_points(facet: &Face, extra: &[Point], forced_faces: Option<&Face>) -> Result<Vec<Vec<Point>>, TriError> {
    let tol = facet.poly.tol();
    let mut pts: Vec<Point> = facet.vertices().to_vec();
    for e in extra {
        if facet.contains(e, tol) {
            pts.push(e.clone());
        }
    }
    let pts = canonical_points(pts, tol);
    match facet.dim() {
        0 => Ok(vec![pts]),
        1 => {
            let dir = &pts[pts.len() - 1] - &pts[0];
            let mut sorted = pts.clone();
            sorted.sort_by(|a, b| dir.dot(a).total_cmp(&dir.dot(b)));
            Ok(sorted.windows(2).map(|w| w.to_vec()).collect())
        }
        2 => {
            let (p0, basis) = affine_hull(&pts, tol);
            let local: Vec<[f64; 2]> = pts
                .iter()
                .map(|p| {
                    let c = basis.transpose() * (p - &p0);
                    [c[0], c[1]]
                })
                .collect();
            let mut forced = Vec::new();
            if let Some(fc) = forced_faces {
                for edge in fc.poly.facets() {
                    let mut on: Vec<usize> = (0..pts.len()).filter(|&i| edge.contains(&pts[i], tol)).collect();
                    let a = &edge.vertices()[0];
                    on.sort_by(|&i, &j| (&pts[i] - a).norm().total_cmp(&(&pts[j] - a).norm()));
                    for w in on.windows(2) {
                        forced.push((w[0], w[1]));
                    }
                }
            }
            let tris = triangulate_planar(&local, &forced, tol);
            Ok(tris.into_iter().map(|t| t.iter().map(|&i| pts[i].clone()).collect()).collect())
        }
        d => Err(TriError::Unsupported(format!("refined facet triangulation in dimension {d}"))),
    }
}

/// Fan from v* (off the facet F̄ holding F) in which F is a union of simplex facets.
pub fn triangulation_wrt_f(p: &Polytope, f: &Face, vstar: &Point) -> Result<Triangulation, TriError> {
    let n = p.ambient();
    if n > 3 {
        return Err(TriError::Unsupported(format!("triangulation with respect to a non-facet target in R^{n}")));
    }
    let tol = p.tol();
    let fbar = containing_facet(p, f).ok_or(TriError::NotAFacet)?;
    if fbar.contains(vstar, tol) {
        return Err(TriError::VStarInFbar);
    }
    let extra: Vec<Point> = f.vertices().to_vec();
    let mut lists = Vec::new();
    for facet in p.facets() {
        if facet.contains(vstar, tol) {
            continue;
        }
        let is_fbar = facet.vertices().len() == fbar.vertices().len()
            && facet.vertices().iter().zip(fbar.vertices()).all(|(a, b)| same_point(a, b, tol));
        let pieces = triangulate_facet_points(&facet, &extra, if is_fbar { Some(f) } else { None })?;
        for mut s in pieces {
            s.insert(0, vstar.clone());
            lists.push(s);
        }
    }
    Triangulation::from_vertex_lists(lists, f.clone())
}

// ---------------------------------------------------------------------------
// covers
// ---------------------------------------------------------------------------

/// One piece of a cover: a polytope, the face it must reach, and its tier
/// (0 reaches the original target; tier k feeds a tier below it).
#[derive(Clone, Debug, PartialEq)]
pub struct CoverPiece {
    pub label: String,
    pub poly: Polytope,
    pub target: Face,
    pub tier: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cover {
    pub pieces: Vec<CoverPiece>,
}

impl Cover {
    /// Volume of the union of the pieces (inclusion-exclusion; up to 4 pieces exact).
    pub fn union_volume(&self) -> f64 {
        let polys: Vec<&Polytope> = self.pieces.iter().map(|p| &p.poly).filter(|p| p.is_full()).collect();
        let m = polys.len();
        let mut total = 0.0;
        for mask in 1u32..(1 << m) {
            let mut inter: Option<Polytope> = None;
            for (k, p) in polys.iter().enumerate() {
                if mask & (1 << k) != 0 {
                    inter = Some(match inter {
                        None => (*p).clone(),
                        Some(q) => q.intersect(p),
                    });
                }
            }
            let v = inter.map(|q| q.volume()).unwrap_or(0.0);
            if mask.count_ones() % 2 == 1 {
                total += v;
            } else {
                total -= v;
            }
        }
        total
    }
}

/// Candidate covers from splitting `p` by a hyperplane through `v⁻`, `v*`:
/// the two halves feeding their common section with `conv(F ∪ section)`
/// reaching F, and, when one half already has F as a facet, that half
/// reaching F with the other half feeding it.
fn covers_from_plane(p: &Polytope, f: &Face, h: &Hyperplane) -> Vec<Cover> {
    let n = p.ambient();
    let (p2, p3) = split_by_hyperplane(p, h);
    if !p2.is_full() || !p3.is_full() {
        return Vec::new();
    }
    let sec = p.section(h);
    if sec.dim() + 1 != n {
        return Vec::new();
    }
    let f23 = Face { poly: sec.clone(), supporting: None };
    let mut out = Vec::new();
    for (with_f, other) in [(&p2, &p3), (&p3, &p2)] {
        if is_facet(with_f, f) {
            out.push(Cover {
                pieces: vec![
                    CoverPiece { label: "P1".into(), poly: with_f.clone(), target: f.clone(), tier: 0 },
                    CoverPiece { label: "P2".into(), poly: other.clone(), target: f23.clone(), tier: 1 },
                ],
            });
        }
    }
    let mut pts: Vec<Point> = f.vertices().to_vec();
    pts.extend(sec.vertices().iter().cloned());
    let p1 = Polytope::hull(n, &pts);
    if p1.is_full() && is_facet(&p1, f) {
        out.push(Cover {
            pieces: vec![
                CoverPiece { label: "P1".into(), poly: p1, target: f.clone(), tier: 0 },
                CoverPiece { label: "P2".into(), poly: p2, target: f23.clone(), tier: 1 },
                CoverPiece { label: "P3".into(), poly: p3, target: f23, tier: 1 },
            ],
        });
    }
    out
}

/// Cover for a target holding a β-top vertex v*: `{P1 -> F, P2 -> F23, P3 -> F23}`
/// or `{P1 -> F, P2 -> F23}`, preferring covers whose pieces all reach their targets.
pub fn cover_wrt_f(p: &Polytope, f: &Face, geom: &SystemGeometry) -> Result<Cover, TriError> {
    let n = p.ambient();
    let tol = p.tol();
    if is_facet(p, f) {
        return Ok(Cover {
            pieces: vec![CoverPiece { label: "P1".into(), poly: p.clone(), target: f.clone(), tier: 0 }],
        });
    }
    let top = p.argmax_face(&geom.beta);
    let vstar = f
        .vertices()
        .iter()
        .find(|v| top.contains(v, tol))
        .cloned()
        .ok_or(TriError::NoQualifyingVertex)?;
    let ra = analyze(geom, p, f)?;
    let vminus = ra.v_minus.clone();
    // direction vectors the plane must contain besides v* - v⁻
    let mut base: Vec<Point> = Vec::new();
    if !same_point(&vstar, &vminus, tol) {
        base.push(&vstar - &vminus);
    }
    let anchor = vminus.clone();
    let need = n - 1 - base.len();
    let mut extras: Vec<Point> = p
        .vertices()
        .iter()
        .filter(|v| !same_point(v, &vminus, tol) && !same_point(v, &vstar, tol))
        .map(|v| v - &anchor)
        .collect();
    for k in 0..n {
        let mut e = DVector::zeros(n);
        e[k] = 1.0;
        extras.push(e);
    }
    let mut best: Option<(bool, f64, Cover)> = None;
    let mut consider = |dirs: &[Point]| {
        let mut all = base.clone();
        all.extend(dirs.iter().cloned());
        let Some(normal) = normal_of(&all, n) else { return };
        let h = Hyperplane::through(normal, &anchor);
        for cover in covers_from_plane(p, f, &h) {
            let score = cover.pieces.iter().map(|c| c.poly.volume()).fold(f64::INFINITY, f64::min);
            let ok = cover
                .pieces
                .iter()
                .all(|c| analyze(geom, &c.poly, &c.target).map(|r| r.reachable).unwrap_or(false));
            let better = match &best {
                None => true,
                Some((bok, bscore, _)) => (ok && !bok) || (ok == *bok && score > bscore + tol),
            };
            if better {
                best = Some((ok, score, cover));
            }
        }
    };
    match need {
        0 => consider(&[]),
        1 => {
            for e in &extras {
                consider(std::slice::from_ref(e));
            }
        }
        2 => {
            for i in 0..extras.len() {
                for j in i + 1..extras.len() {
                    consider(&[extras[i].clone(), extras[j].clone()]);
                }
            }
        }
        _ => return Err(TriError::Unsupported(format!("cover with respect to a non-facet target in R^{n}"))),
    }
    best.map(|(_, _, c)| c).ok_or_else(|| TriError::SplitFailed("no hyperplane through v⁻ and v* splits P usefully".into()))
}

/// Split along `B_{v⁺}` when no vertex of F is on the β-top face: the lower
/// part holds F, the upper part must reach the interface.
pub fn split_far_case(p: &Polytope, f: &Face, geom: &SystemGeometry) -> Result<(Polytope, Polytope, Face), TriError> {
    let tol = p.tol();
    let top = p.argmax_face(&geom.beta);
    if f.vertices().iter().any(|v| top.contains(v, tol)) {
        return Err(TriError::NotFarCase);
    }
    let ra = analyze(geom, p, f)?;
    let plane = geom.b_plane_through(&ra.v_plus);
    let (lower, upper) = split_by_hyperplane(p, &plane);
    if !lower.is_full() || !upper.is_full() {
        return Err(TriError::SplitFailed("the plane through v⁺ parallel to B misses the interior".into()));
    }
    let interface = Face { poly: p.section(&plane), supporting: Some(plane.above()) };
    Ok((lower, upper, interface))
}

/// Cover of an O-crossing polytope: each side reaches its share of F (tier 0)
/// or the part of the other side's reach set lying on O (tier 1).
pub fn cover_wrt_o(sys: &AffineSystem, p: &Polytope, f: &Face, eps: f64) -> Result<Cover, TriError> {
    let n = p.ambient();
    let beta0 = sys.input_normal()?;
    let o = sys.equilibrium_plane(&beta0)?;
    if !plane_crosses_interior(&o, p) {
        return Ok(Cover {
            pieces: vec![CoverPiece { label: "P".into(), poly: p.clone(), target: f.clone(), tier: 0 }],
        });
    }
    let (s1, s2) = split_by_hyperplane(p, &o);
    // side 1 is the one holding a full-dimensional share of F
    let share = |s: &Polytope| f.poly.intersect(s).dim() + 1 == n;
    let sides = if !share(&s1) && share(&s2) { [s2, s1] } else { [s1, s2] };
    let geoms = [compute_geometry(sys, &sides[0])?, compute_geometry(sys, &sides[1])?];
    let mut q1: Vec<Option<(Polytope, Face)>> = vec![None, None];
    for i in 0..2 {
        let fi = f.poly.intersect(&sides[i]);
        if fi.dim() + 1 == n && !fi.is_empty() {
            let face = Face { poly: fi, supporting: None };
            let cut = epsilon_cut(&geoms[i], &sides[i], &face, eps)?;
            if cut.reach_eps.is_full() {
                q1[i] = Some((cut.reach_eps, face));
            }
        }
    }
    let mut pieces = Vec::new();
    for i in 0..2 {
        if let Some((q, face)) = &q1[i] {
            pieces.push(CoverPiece { label: format!("Q{}1", i + 1), poly: q.clone(), target: face.clone(), tier: 0 });
        }
    }
    for i in 0..2 {
        let j = 1 - i;
        let Some((qj, _)) = &q1[j] else { continue };
        let ti = sides[i].intersect(qj);
        if ti.dim() + 1 != n || ti.is_empty() {
            continue;
        }
        let face = Face { poly: ti, supporting: None };
        let cut = epsilon_cut(&geoms[i], &sides[i], &face, eps)?;
        if cut.reach_eps.is_full() {
            pieces.push(CoverPiece { label: format!("Q{}2", i + 1), poly: cut.reach_eps, target: face, tier: 1 });
        }
    }
    pieces.sort_by(|a, b| a.label.cmp(&b.label));
    let cover = Cover { pieces };
    let covered = cover.union_volume();
    let total = p.volume();
    if (covered - total).abs() > 1e-8 * total {
        return Err(TriError::CoverIncomplete { covered, total });
    }
    Ok(cover)
}

/// Orders faces by their vertex lists (helper for deterministic output).
pub fn cmp_faces(a: &Face, b: &Face) -> Ordering {
    cmp_vertex_lists(a.vertices(), b.vertices())
}
