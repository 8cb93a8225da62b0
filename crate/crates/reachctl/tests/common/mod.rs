//! Helpers shared by the integration suites: seeded random instances and an
//! open-loop reachability oracle for the double integrator.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reachctl::geometry::{Face, Point, Polytope};
use reachctl::system::AffineSystem;

pub fn pt(v: &[f64]) -> Point {
    DVector::from_row_slice(v)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `x' = (x2, u1, u2)`: a double integrator with an extra directly actuated
/// coordinate; β = -e1 and O = {x2 = 0}.
pub fn integrator3() -> AffineSystem {
    let mut a = DMatrix::zeros(3, 3);
    a[(0, 1)] = 1.0;
    let b = DMatrix::from_row_slice(3, 2, &[0., 0., 1., 0., 0., 1.]);
    AffineSystem::new(a, DVector::zeros(3), b).unwrap()
}

pub fn fixture(name: &str) -> reachctl::cli::files::Problem {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(format!("{name}.json"));
    reachctl::cli::files::Problem::load(&path).unwrap()
}

/// Hull of `k` random points in the box `[0, w] x [lo, 1] x [0, 1]^(n-2)`,
/// with the second coordinate clamped at 0 (so O never cuts the interior).
pub fn random_polytope(r: &mut ChaCha8Rng, n: usize, k: usize, w: f64, lo: f64) -> Polytope {
    loop {
        let pts: Vec<Point> = (0..k)
            .map(|_| {
                DVector::from_fn(n, |i, _| match i {
                    0 => r.gen_range(0.0..w),
                    1 => r.gen_range(lo..1.0f64).max(0.0),
                    _ => r.gen_range(0.0..1.0),
                })
            })
            .collect();
        let p = Polytope::hull(n, &pts);
        if p.is_full() && p.volume() > 0.05 * w {
            return p;
        }
    }
}

/// Uniform point of a full-dimensional polytope (rejection in the bounding box).
pub fn sample_in(r: &mut ChaCha8Rng, p: &Polytope) -> Point {
    let (lo, hi) = p.bbox();
    loop {
        let x = DVector::from_fn(lo.len(), |k, _| if hi[k] > lo[k] { r.gen_range(lo[k]..hi[k]) } else { lo[k] });
        if p.contains(&x, 0.0) {
            return x;
        }
    }
}

/// Random point in the relative interior of any nonempty polytope.
pub fn sample_rel_interior(r: &mut ChaCha8Rng, p: &Polytope) -> Point {
    if p.is_full() {
        return sample_in(r, p);
    }
    let vs = p.vertices();
    let w: Vec<f64> = vs.iter().map(|_| r.gen_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    vs.iter().zip(&w).fold(DVector::zeros(vs[0].len()), |acc, (v, wi)| acc + v * (wi / s))
}

// ---------------------------------------------------------------------------
// open-loop oracle for x1' = x2, x2' = u
// ---------------------------------------------------------------------------

/// Depth-first search over piecewise-constant inputs: up to `segments`
/// constant pieces (`segments - 1` switch times) with values from `inputs`
/// and durations from `durations`; the last piece, with its value from the
/// denser `final_inputs`, runs until the state leaves P or `horizon`
/// elapses. Arcs are integrated in closed form.
pub struct OpenLoopOracle<'a> {
    pub p: &'a Polytope,
    pub f: &'a Face,
    /// Allowed constraint violation along the arc.
    pub slack: f64,
    pub inputs: Vec<f64>,
    pub final_inputs: Vec<f64>,
    pub durations: Vec<f64>,
    pub segments: usize,
    pub horizon: f64,
    rows: Vec<([f64; 2], f64)>,
}

impl<'a> OpenLoopOracle<'a> {
    pub fn new(p: &'a Polytope, f: &'a Face) -> Self {
        let rows = p.halfspaces().iter().map(|h| ([h.normal[0], h.normal[1]], h.offset)).collect();
        OpenLoopOracle {
            p,
            f,
            slack: 1e-6,
            inputs: vec![-50.0, -2.0, 0.0, 2.0, 50.0],
            // 0 and ±0.01·1.25^k up to 50
            final_inputs: std::iter::once(0.0)
                .chain((0..39).flat_map(|k| {
                    let u = 0.01 * 1.25f64.powi(k);
                    [u, -u]
                }))
                .chain([50.0, -50.0])
                .collect(),
            durations: vec![0.02, 0.1, 0.5, 2.0],
            segments: 4,
            horizon: 50.0,
            rows,
        }
    }

    fn state(x: [f64; 2], u: f64, t: f64) -> [f64; 2] {
        [x[0] + x[1] * t + 0.5 * u * t * t, x[1] + u * t]
    }

    /// First time in [0, tmax] at which the arc leaves P (by more than the slack).
    fn exit_time(&self, x: [f64; 2], u: f64, tmax: f64) -> Option<f64> {
        let mut best: Option<f64> = None;
        for (h, c) in &self.rows {
            // g(t) = g0 + g1 t + g2 t^2, inside while g <= 0
            let g0 = h[0] * x[0] + h[1] * x[1] - c - self.slack;
            let g1 = h[0] * x[1] + h[1] * u;
            let g2 = 0.5 * h[0] * u;
            let t = if g0 > 0.0 {
                Some(0.0)
            } else {
                first_upcrossing(g0, g1, g2)
            };
            if let Some(t) = t {
                if t <= tmax && best.map_or(true, |b| t < b) {
                    best = Some(t);
                }
            }
        }
        best
    }

    fn in_f(&self, x: [f64; 2]) -> bool {
        self.f.contains(&pt(&x), 10.0 * self.slack)
    }

    /// Whether some input sequence in the grid steers `x0` to F inside P.
    pub fn reaches(&self, x0: &Point) -> bool {
        let x = [x0[0], x0[1]];
        self.in_f(x) || self.search(x, self.segments)
    }

    fn search(&self, x: [f64; 2], left: usize) -> bool {
        for &u in &self.final_inputs {
            // run this input until the state leaves P
            if let Some(te) = self.exit_time(x, u, self.horizon) {
                if self.in_f(Self::state(x, u, te)) {
                    return true;
                }
            }
        }
        if left <= 1 {
            return false;
        }
        for &u in &self.inputs {
            for &tau in &self.durations {
                match self.exit_time(x, u, tau) {
                    Some(te) => {
                        if self.in_f(Self::state(x, u, te)) {
                            return true;
                        }
                    }
                    None => {
                        if self.search(Self::state(x, u, tau), left - 1) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// Smallest t > 0 at which `g0 + g1 t + g2 t²` (with g0 <= 0) crosses zero upward.
fn first_upcrossing(g0: f64, g1: f64, g2: f64) -> Option<f64> {
    let mut roots: Vec<f64> = Vec::new();
    if g2.abs() < 1e-300 {
        if g1 > 0.0 {
            roots.push(-g0 / g1);
        }
    } else {
        let disc = g1 * g1 - 4.0 * g2 * g0;
        if disc < 0.0 {
            return None;
        }
        let s = disc.sqrt();
        let q = -0.5 * (g1 + g1.signum() * s);
        let (r1, r2) = if q != 0.0 { (q / g2, g0 / q) } else { (0.0, -g1 / g2) };
        roots.push(r1.min(r2));
        roots.push(r1.max(r2));
    }
    roots.into_iter().filter(|&t| t >= 0.0 && 2.0 * g2 * t + g1 > 0.0).reduce(f64::min)
}

// ---------------------------------------------------------------------------
// plain 2D polygon arithmetic, independent of the library's geometry code
// ---------------------------------------------------------------------------

/// Vertices sorted counter-clockwise around their mean.
pub fn ccw(pts: &[[f64; 2]]) -> Vec<[f64; 2]> {
    if pts.is_empty() {
        return Vec::new();
    }
    let k = pts.len() as f64;
    let cx = pts.iter().map(|p| p[0]).sum::<f64>() / k;
    let cy = pts.iter().map(|p| p[1]).sum::<f64>() / k;
    let mut out = pts.to_vec();
    out.sort_by(|a, b| (a[1] - cy).atan2(a[0] - cx).total_cmp(&(b[1] - cy).atan2(b[0] - cx)));
    out
}

pub fn polygon_of(p: &Polytope) -> Vec<[f64; 2]> {
    ccw(&p.vertices().iter().map(|v| [v[0], v[1]]).collect::<Vec<_>>())
}

/// Shoelace area of a counter-clockwise polygon.
pub fn area(poly: &[[f64; 2]]) -> f64 {
    let k = poly.len();
    if k < 3 {
        return 0.0;
    }
    0.5 * (0..k).map(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % k]);
        a[0] * b[1] - b[0] * a[1]
    }).sum::<f64>()
}

/// Sutherland-Hodgman clip of a convex polygon to `n·x <= c`.
pub fn clip_half(poly: &[[f64; 2]], n: [f64; 2], c: f64) -> Vec<[f64; 2]> {
    let k = poly.len();
    let g = |p: [f64; 2]| n[0] * p[0] + n[1] * p[1] - c;
    let mut out = Vec::new();
    for i in 0..k {
        let (a, b) = (poly[i], poly[(i + 1) % k]);
        let (ga, gb) = (g(a), g(b));
        if ga <= 0.0 {
            out.push(a);
        }
        if (ga < 0.0 && gb > 0.0) || (ga > 0.0 && gb < 0.0) {
            let t = ga / (ga - gb);
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    out
}

/// Intersection of two counter-clockwise convex polygons.
pub fn intersect(a: &[[f64; 2]], b: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let k = b.len();
    let mut out = a.to_vec();
    for i in 0..k {
        let (p, q) = (b[i], b[(i + 1) % k]);
        // left of p->q is inside for a counter-clockwise polygon
        let n = [q[1] - p[1], p[0] - q[0]];
        out = clip_half(&out, n, n[0] * p[0] + n[1] * p[1]);
        if out.is_empty() {
            break;
        }
    }
    out
}

/// Area of a union of convex polygons by inclusion-exclusion.
pub fn union_area(polys: &[Vec<[f64; 2]>]) -> f64 {
    let k = polys.len();
    let mut total = 0.0;
    for mask in 1u32..(1 << k) {
        let mut cur: Option<Vec<[f64; 2]>> = None;
        for (i, p) in polys.iter().enumerate() {
            if mask & (1 << i) != 0 {
                cur = Some(match cur {
                    None => p.clone(),
                    Some(c) => intersect(&c, p),
                });
            }
        }
        let sign = if mask.count_ones() % 2 == 1 { 1.0 } else { -1.0 };
        total += sign * area(&cur.unwrap_or_default());
    }
    total
}
