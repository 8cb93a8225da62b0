//! Open-loop reachability of a target face on a polytope.
//!
//! With β signed so that `β·x` never increases inside P, reachability of F is
//! decided by two checks on the β-extremes of F:
//!
//! * (a) nothing below the β-floor of F except F itself (or a slab lying in O),
//! * (b) the β-top face of P is not a dead end sitting in O above F.
//!
//! When either check fails the offending region is a failure set, and
//! [`epsilon_cut`] trims it off with a margin `eps`, leaving a closed polytope
//! that can reach F.

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{same_point, Face, HalfSpace, Hyperplane, Point, Polytope};
use crate::lp::{self, LinearProgram, LpError, Status};
use crate::system::{containing_facet, SystemGeometry};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReachError {
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("eps = {eps} is too large: {reason}")]
    EpsTooLarge { eps: f64, reason: String },
    #[error("eps must be positive and finite, got {0}")]
    BadEps(f64),
    #[error("no affine cut separates the failure set from the target")]
    CutInfeasible,
    #[error("the trimmed polytope still cannot reach the target")]
    ResidualFailure,
    #[error("the two targets lie on a common hyperplane")]
    CommonHyperplane,
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// Landmark sets and the verdict for one (P, F) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ReachAnalysis {
    /// β-minimal vertex of F (lexicographically first on ties).
    pub v_minus: Point,
    /// β-maximal vertex of F.
    pub v_plus: Point,
    /// `{x ∈ P : β·x <= β·v⁻}`
    pub h_minus: Polytope,
    /// `{x ∈ P : β·x >= β·v⁺}`
    pub h_plus: Polytope,
    /// β-maximal face of P.
    pub p_plus: Polytope,
    /// `B_{v⁻} ∩ O ∩ P` when that slab meets F, else empty.
    pub b_minus: Polytope,
    /// Closure of the lower failure set (empty when (a) holds).
    pub a_minus: Polytope,
    /// Upper failure set (empty when (b) holds).
    pub a_plus: Polytope,
    pub condition_a: bool,
    pub condition_b: bool,
    pub reachable: bool,
    /// Some decision was within a few tolerances of its threshold.
    pub ambiguous: bool,
}

fn check_target(p: &Polytope, f: &Face) -> Result<(), ReachError> {
    let n = p.ambient();
    if !p.is_full() {
        return Err(ReachError::AssumptionViolated(format!("P has dimension {} in R^{n}", p.dim())));
    }
    if f.is_empty() || f.dim() + 1 != n {
        return Err(ReachError::AssumptionViolated(format!("target has dimension {}, expected {}", f.dim(), n - 1)));
    }
    if containing_facet(p, f).is_none() {
        return Err(ReachError::AssumptionViolated("target does not lie in a facet of P".into()));
    }
    Ok(())
}

/// First vertex (canonical order) minimizing `c·x`.
fn argmin_vertex(vs: &[Point], c: &Point, tol: f64) -> Point {
    let lo = vs.iter().map(|v| c.dot(v)).fold(f64::INFINITY, f64::min);
    vs.iter().find(|v| c.dot(v) <= lo + tol).expect("nonempty vertex list").clone()
}

pub fn analyze(geom: &SystemGeometry, p: &Polytope, f: &Face) -> Result<ReachAnalysis, ReachError> {
    check_target(p, f)?;
    let n = p.ambient();
    let tol = p.tol();
    let beta = &geom.beta;
    let fv = f.vertices();
    let v_minus = argmin_vertex(fv, beta, tol);
    let v_plus = argmin_vertex(fv, &-beta, tol);
    let lo = beta.dot(&v_minus);
    let hi = beta.dot(&v_plus);
    let (pmin, pmax) = p.min_max(beta);
    let mut ambiguous = false;
    let near = |a: f64, b: f64| (a - b).abs() > tol && (a - b).abs() <= 100.0 * tol;

    let h_minus = p.clip(&HalfSpace { normal: beta.clone(), offset: lo });
    let h_plus = p.clip(&HalfSpace { normal: -beta, offset: -hi });
    let p_plus = p.argmax_face(beta);
    let in_o = |x: &Point| geom.in_o(x, tol);

    let level_slab = p.section(&Hyperplane { normal: beta.clone(), offset: lo });
    let slab_o = level_slab.section(&geom.o_plane);
    let b_minus = if !slab_o.is_empty() && !slab_o.intersect(&f.poly).is_empty() {
        slab_o
    } else {
        Polytope::empty(n)
    };

    // (a): H⁻ ⊂ F ∪ B⁻. A full-dimensional H⁻ never fits; a lower-dimensional
    // one is a convex set covered by two convex pieces, which forces it into
    // one of them.
    if near(pmin, lo) {
        ambiguous = true;
    }
    let condition_a = pmin >= lo - tol
        && (h_minus.vertices().iter().all(|v| f.contains(v, tol)) || h_minus.vertices().iter().all(in_o));

    // (b): fails iff P⁺ ⊂ O and P⁺ lies strictly above β·v⁺.
    if near(pmax, hi) {
        ambiguous = true;
    }
    let top_in_o = p_plus.vertices().iter().all(in_o);
    let condition_b = !(top_in_o && pmax > hi + tol);
    for v in p_plus.vertices().iter().chain(h_minus.vertices()) {
        let d = geom.o_plane.eval(v).abs();
        if d > tol && d <= 100.0 * tol {
            ambiguous = true;
        }
    }

    let a_minus = if condition_a { Polytope::empty(n) } else { h_minus.clone() };
    let a_plus = if condition_b { Polytope::empty(n) } else { p_plus.clone() };
    Ok(ReachAnalysis {
        v_minus,
        v_plus,
        h_minus,
        h_plus,
        p_plus,
        b_minus,
        a_minus,
        a_plus,
        condition_a,
        condition_b,
        reachable: condition_a && condition_b,
        ambiguous,
    })
}

/// Result of trimming failure sets off P.
#[derive(Clone, Debug, PartialEq)]
pub struct EpsilonCut {
    pub eps: f64,
    pub a_eps_minus: Polytope,
    pub a_eps_plus: Polytope,
    pub reach_eps: Polytope,
    /// Halfspace removed by the lower cut (its complement is kept).
    pub lower_cut: Option<HalfSpace>,
    /// β-level of the upper cut.
    pub upper_level: Option<f64>,
}

/// Default margin: 1% of the β-extent of P.
pub fn default_eps(geom: &SystemGeometry, p: &Polytope) -> f64 {
    let (lo, hi) = p.min_max(&geom.beta);
    1e-2 * (hi - lo).max(f64::MIN_POSITIVE)
}

fn row(x: &Point, sign: f64) -> Vec<f64> {
    // coefficients of sign * (w·x + w0) over variables (w⁺, w⁻, w0)
    let n = x.len();
    let mut r = vec![0.0; 2 * n + 1];
    for k in 0..n {
        r[k] = sign * x[k];
        r[n + k] = -sign * x[k];
    }
    r[2 * n] = sign;
    r
}

/// Affine function ℓ with ℓ <= 0 on F, ℓ >= 1 on the vertices of H⁻ outside F,
/// and ℓ as close to zero as possible on H⁻ ∩ F. Returns (w, w0).
fn lower_cut_function(f: &Face, h_minus: &Polytope, tol: f64) -> Result<(Point, f64), ReachError> {
    let n = h_minus.ambient();
    let nv = 2 * n + 1;
    let mut ineq: Vec<(Vec<f64>, f64)> = Vec::new();
    for v in f.vertices() {
        ineq.push((row(v, 1.0), 0.0));
    }
    for v in h_minus.vertices() {
        if !f.contains(v, tol) {
            ineq.push((row(v, -1.0), -1.0));
        }
    }
    let contact = h_minus.intersect(&f.poly);
    let mut touch = vec![0.0; nv];
    for v in contact.vertices() {
        for (t, r) in touch.iter_mut().zip(row(v, 1.0)) {
            *t += r;
        }
    }
    // 1) push ℓ up to zero on the contact face
    let lp1 = LinearProgram { objective: touch.iter().map(|t| -t).collect(), ineq: ineq.clone(), eq: vec![], nvars: nv };
    let out1 = lp::solve(&lp1)?;
    if out1.status != Status::Optimal {
        return Err(ReachError::CutInfeasible);
    }
    let best = -out1.value.expect("optimal value");
    // 2) smallest tilt among optimal choices
    let mut ineq2 = ineq;
    ineq2.push((touch.iter().map(|t| -t).collect(), -best + 1e-9 * (1.0 + best.abs())));
    let mut obj = vec![1.0; nv];
    obj[2 * n] = 0.0;
    let out2 = lp::solve(&LinearProgram { objective: obj, ineq: ineq2, eq: vec![], nvars: nv })?;
    let x = match out2.status {
        Status::Optimal => out2.x_opt.expect("optimal point"),
        _ => out1.x_opt.expect("optimal point"),
    };
    let w = DVector::from_fn(n, |k, _| x[k] - x[n + k]);
    Ok((w, x[2 * n]))
}

/// Trims failure sets off P with margin `eps` and returns the three pieces.
pub fn epsilon_cut(geom: &SystemGeometry, p: &Polytope, f: &Face, eps: f64) -> Result<EpsilonCut, ReachError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(ReachError::BadEps(eps));
    }
    let ra = analyze(geom, p, f)?;
    let n = p.ambient();
    if ra.reachable {
        return Ok(EpsilonCut {
            eps,
            a_eps_minus: Polytope::empty(n),
            a_eps_plus: Polytope::empty(n),
            reach_eps: p.clone(),
            lower_cut: None,
            upper_level: None,
        });
    }
    let tol = p.tol();
    let beta = &geom.beta;
    let level = beta.dot(&ra.v_minus);
    let (_, pmax) = p.min_max(beta);
    let mut reach = p.clone();
    let mut a_eps_minus = Polytope::empty(n);
    let mut a_eps_plus = Polytope::empty(n);
    let mut lower_cut = None;
    let mut upper_level = None;

    if !ra.condition_a {
        if pmax <= level + tol {
            // every point of P sits at or below the floor of F: nothing can be kept
            return Ok(EpsilonCut {
                eps,
                a_eps_minus: p.clone(),
                a_eps_plus: Polytope::empty(n),
                reach_eps: Polytope::empty(n),
                lower_cut: None,
                upper_level: None,
            });
        }
        let (w, w0) = lower_cut_function(f, &ra.h_minus, tol)?;
        // removed side: β·x - level <= s ℓ(x), i.e. (β - s w)·x <= level + s w0
        let removed = |s: f64| HalfSpace::new(beta - &w * s, level + s * w0);
        let spread = |s: f64| -> f64 {
            let h = removed(s);
            let sec = p.section(&h.boundary());
            sec.vertices().iter().map(|x| (beta.dot(x) - level).abs()).fold(0.0, f64::max)
        };
        let mut lo_s = 0.0;
        let mut hi_s = eps.max(1e-12);
        let mut bracketed = false;
        for _ in 0..200 {
            if spread(hi_s) >= eps {
                bracketed = true;
                break;
            }
            lo_s = hi_s;
            hi_s *= 2.0;
            if hi_s > 1e12 {
                break;
            }
        }
        if !bracketed {
            return Err(ReachError::EpsTooLarge { eps, reason: "the lower cut cannot reach that far into P".into() });
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo_s + hi_s);
            if spread(mid) >= eps {
                hi_s = mid;
            } else {
                lo_s = mid;
            }
            if hi_s - lo_s <= 1e-15 * hi_s.max(1.0) {
                break;
            }
        }
        let s = 0.5 * (lo_s + hi_s);
        let h = removed(s);
        if f.vertices().iter().any(|v| h.eval(v) < -tol) {
            return Err(ReachError::EpsTooLarge { eps, reason: "the lower cut would remove part of the target".into() });
        }
        a_eps_minus = p.clip(&h);
        reach = reach.clip(&h.flipped());
        lower_cut = Some(h);
    }

    if !ra.condition_b {
        let cut = pmax - eps;
        if beta.dot(&ra.v_plus) > cut + tol {
            return Err(ReachError::EpsTooLarge { eps, reason: "the upper cut would remove part of the target".into() });
        }
        a_eps_plus = p.clip(&HalfSpace { normal: -beta, offset: -cut });
        reach = reach.clip(&HalfSpace { normal: beta.clone(), offset: cut });
        upper_level = Some(cut);
    }

    if !reach.is_full() {
        return Err(ReachError::EpsTooLarge { eps, reason: "nothing of P survives the cuts".into() });
    }
    let check = analyze(geom, &reach, f)?;
    if !check.reachable {
        return Err(ReachError::ResidualFailure);
    }
    Ok(EpsilonCut { eps, a_eps_minus, a_eps_plus, reach_eps: reach, lower_cut, upper_level })
}

/// Whether two faces lie on one hyperplane.
pub fn share_hyperplane(f1: &Face, f2: &Face) -> bool {
    let mut pts: Vec<Point> = f1.vertices().to_vec();
    pts.extend(f2.vertices().iter().cloned());
    let n = pts[0].len();
    Polytope::hull(n, &pts).dim() < n
}

/// Cuts for two targets and whether their trimmed reach sets cover P.
pub fn reach_eps_pair(
    geom: &SystemGeometry,
    p: &Polytope,
    f1: &Face,
    f2: &Face,
    eps: f64,
) -> Result<(EpsilonCut, EpsilonCut, bool), ReachError> {
    if share_hyperplane(f1, f2) {
        return Err(ReachError::CommonHyperplane);
    }
    let c1 = epsilon_cut(geom, p, f1, eps)?;
    let c2 = epsilon_cut(geom, p, f2, eps)?;
    let covers = union_covers(p, &c1.reach_eps, &c2.reach_eps);
    Ok((c1, c2, covers))
}

/// `r1 ∪ r2 = p`, by inclusion-exclusion on volumes plus vertex membership.
pub fn union_covers(p: &Polytope, r1: &Polytope, r2: &Polytope) -> bool {
    let vp = p.volume();
    let v = r1.volume() + r2.volume() - r1.intersect(r2).volume();
    let tol = p.tol();
    (v - vp).abs() <= 1e-8 * vp && p.vertices().iter().all(|x| r1.contains(x, tol) || r2.contains(x, tol))
}

/// Serializable digest of an analysis.
#[derive(Clone, Debug, Serialize)]
pub struct VerdictSummary {
    pub reachable: bool,
    pub condition_a: bool,
    pub condition_b: bool,
    pub ambiguous: bool,
}

impl From<&ReachAnalysis> for VerdictSummary {
    fn from(r: &ReachAnalysis) -> Self {
        VerdictSummary {
            reachable: r.reachable,
            condition_a: r.condition_a,
            condition_b: r.condition_b,
            ambiguous: r.ambiguous,
        }
    }
}

/// Convenience: is `x` one of the listed points.
pub fn among(x: &Point, pts: &[Point], tol: f64) -> bool {
    pts.iter().any(|p| same_point(p, x, tol))
}
