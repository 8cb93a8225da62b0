//! Closed-loop integration with facet events, and sampled verification.

use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::geometry::{Face, Point, Polytope};
use crate::synth::{ControllerGap, PwaController};
use crate::system::{containing_facet, AffineSystem};
use crate::tol;

/// How a trajectory ended.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum Outcome {
    ReachedF { t: f64 },
    /// Crossed facet `facet` (index into the polytope's halfspaces) away from F.
    LeftP { t: f64, facet: usize },
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub pieces: Vec<usize>,
    pub outcome: Outcome,
    /// Largest constraint violation of any recorded state.
    pub max_violation: f64,
    /// Set when the active piece switched more than 10 times within 10 steps.
    pub chattering: bool,
}

impl Trajectory {
    pub fn reached(&self) -> Option<f64> {
        match self.outcome {
            Outcome::ReachedF { t } => Some(t),
            _ => None,
        }
    }

    /// CSV with columns t, x1..xn, u1..um, piece.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        let n = self.states.first().map_or(0, |s| s.len());
        let m = self.controls.first().map_or(0, |u| u.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|k| format!("x{k}")));
        header.extend((1..=m).map(|k| format!("u{k}")));
        header.push("piece".into());
        out.write_record(&header)?;
        for k in 0..self.times.len() {
            let mut rec = vec![fmt17(self.times[k])];
            rec.extend(self.states[k].iter().map(|&x| fmt17(x)));
            match self.controls.get(k) {
                Some(u) => rec.extend(u.iter().map(|&x| fmt17(x))),
                None => rec.extend((0..m).map(|_| String::new())),
            }
            rec.push(self.pieces.get(k).map_or(String::new(), |p| p.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Decimal with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{:.16e}", x)
}

/// Integration domain: the polytope, the target face and the facet holding it.
#[derive(Clone, Debug)]
pub struct Arena {
    pub p: Polytope,
    pub f: Face,
    target_facet: Option<usize>,
    scale: f64,
}

impl Arena {
    pub fn new(p: Polytope, f: Face) -> Self {
        let tol = p.tol();
        let target_facet = containing_facet(&p, &f).and_then(|fb| {
            p.halfspaces().iter().position(|h| fb.vertices().iter().all(|v| h.eval(v).abs() <= 10.0 * tol))
        });
        let scale = (tol / tol::geom()).max(1.0);
        Arena { p, f, target_facet, scale }
    }

    fn in_f(&self, x: &Point) -> bool {
        self.f.contains(x, tol::SIM * self.scale)
    }
}

fn rk4(sys: &AffineSystem, ctrl: &PwaController, piece: usize, x: &Point, h: f64) -> Point {
    let pc = &ctrl.pieces[piece];
    let f = |y: &Point| sys.field(y, &pc.control(y));
    let k1 = f(x);
    let k2 = f(&(x + &k1 * (h / 2.0)));
    let k3 = f(&(x + &k2 * (h / 2.0)));
    let k4 = f(&(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Default step: 1e-3 of the time needed to sweep P's β-extent at the
/// fastest closed-loop vertex speed.
pub fn default_dt(sys: &AffineSystem, ctrl: &PwaController, p: &Polytope) -> f64 {
    let speed = ctrl
        .pieces
        .iter()
        .flat_map(|pc| pc.region.vertices.iter().zip(&pc.vertex_controls).map(|(v, u)| sys.field(v, u).norm()))
        .fold(0.0, f64::max);
    let extent = match sys.input_normal() {
        Ok(beta) => {
            let (lo, hi) = p.min_max(&beta);
            hi - lo
        }
        Err(_) => 1.0,
    };
    if speed > 0.0 && extent > 0.0 {
        1e-3 * extent / speed
    } else {
        1e-3
    }
}

/// First crossing time in (0, h] of `g(x(τ)) = level` for a function that
/// is below the level at τ = 0 and above it at τ = h.
fn bisect_event(
    sys: &AffineSystem,
    ctrl: &PwaController,
    piece: usize,
    x: &Point,
    h: f64,
    g: impl Fn(&Point) -> f64,
) -> (f64, Point) {
    let (mut lo, mut hi) = (0.0, h);
    while hi - lo > tol::EVENT_TIME {
        let mid = 0.5 * (lo + hi);
        if g(&rk4(sys, ctrl, piece, x, mid)) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (hi, rk4(sys, ctrl, piece, x, hi))
}

/// Fixed-step RK4 on the closed loop, looking up the piece at every step.
pub fn integrate(
    sys: &AffineSystem,
    ctrl: &PwaController,
    arena: &Arena,
    x0: &Point,
    dt: f64,
    tmax: f64,
) -> Result<Trajectory, ControllerGap> {
    let p = &arena.p;
    let allow = tol::SIM * arena.scale;
    let mut times = vec![0.0];
    let mut states = vec![x0.iter().copied().collect::<Vec<f64>>()];
    let mut controls = Vec::new();
    let mut pieces = Vec::new();
    let mut max_violation = p.violation(x0).max(0.0);
    let mut chattering = false;
    let finish = |times, states, controls, pieces, outcome, max_violation, chattering| Trajectory {
        times,
        states,
        controls,
        pieces,
        outcome,
        max_violation,
        chattering,
    };
    if arena.in_f(x0) {
        return Ok(finish(times, states, controls, pieces, Outcome::ReachedF { t: 0.0 }, max_violation, false));
    }
    let mut x = x0.clone();
    let mut t = 0.0;
    let mut switches: Vec<usize> = Vec::new();
    while t < tmax {
        let k = ctrl.lookup(&x)?;
        controls.push(ctrl.pieces[k].control(&x).iter().copied().collect());
        if let Some(&last) = pieces.last() {
            if last != k {
                switches.push(times.len());
            }
        }
        pieces.push(k);
        let step = dt.min(tmax - t);
        let y = rk4(sys, ctrl, k, &x, step);
        // earliest event among the facets crossed in this step
        let mut first: Option<(f64, Point, usize)> = None;
        for (j, h) in p.halfspaces().iter().enumerate() {
            let is_target = arena.target_facet == Some(j);
            let level = if is_target { 0.0 } else { allow };
            if h.eval(&y) > level && h.eval(&x) <= level {
                let (tau, xe) = bisect_event(sys, ctrl, k, &x, step, |z| h.eval(z) - level);
                if first.as_ref().map_or(true, |(t0, _, _)| tau < *t0) {
                    first = Some((tau, xe, j));
                }
            }
        }
        if let Some((tau, xe, j)) = first {
            let te = t + tau;
            let outcome = if arena.target_facet == Some(j) && arena.in_f(&xe) {
                Outcome::ReachedF { t: te }
            } else {
                Outcome::LeftP { t: te, facet: j }
            };
            times.push(te);
            states.push(xe.iter().copied().collect());
            if matches!(outcome, Outcome::ReachedF { .. }) {
                max_violation = max_violation.max(p.violation(&xe).max(0.0));
            }
            return Ok(finish(times, states, controls, pieces, outcome, max_violation, chattering));
        }
        t += step;
        x = y;
        max_violation = max_violation.max(p.violation(&x).max(0.0));
        times.push(t);
        states.push(x.iter().copied().collect());
        let recent = switches.iter().filter(|&&s| s + 10 > times.len()).count();
        if recent > 10 {
            chattering = true;
        }
    }
    Ok(finish(times, states, controls, pieces, Outcome::Timeout, max_violation, chattering))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Failure {
    pub x0: Vec<f64>,
    pub outcome: Option<Outcome>,
    pub error: Option<String>,
    pub trajectory: Option<Trajectory>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub nsamples: usize,
    pub successes: usize,
    pub success_fraction: Option<f64>,
    pub max_time: Option<f64>,
    pub mean_time: Option<f64>,
    pub max_violation: f64,
    pub chattering: usize,
    pub dt: f64,
    pub tmax: f64,
    pub seed: u64,
    pub failures: Vec<Failure>,
}

/// Uniform sample of `p` by rejection in its bounding box, from stream `i` of `seed`.
pub fn sample_point(p: &Polytope, seed: u64, i: u64) -> Point {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i);
    let (lo, hi) = p.bbox();
    loop {
        let x = DVector::from_fn(lo.len(), |k, _| if hi[k] > lo[k] { rng.gen_range(lo[k]..hi[k]) } else { lo[k] });
        if p.contains(&x, 0.0) {
            return x;
        }
    }
}

/// Thread cap from `REACHCTL_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("REACHCTL_THREADS").ok().and_then(|v| v.trim().parse().ok()).filter(|&n: &usize| n > 0)
}

/// Samples `nsamples` initial states in `arena.p` and integrates each one.
pub fn verify(
    sys: &AffineSystem,
    ctrl: &PwaController,
    arena: &Arena,
    nsamples: usize,
    seed: u64,
    dt: f64,
    tmax: f64,
) -> Report {
    let run = || -> Vec<(Point, Result<Trajectory, ControllerGap>)> {
        (0..nsamples as u64)
            .into_par_iter()
            .map(|i| {
                let x0 = sample_point(&arena.p, seed, i);
                let tr = integrate(sys, ctrl, arena, &x0, dt, tmax);
                (x0, tr)
            })
            .collect()
    };
    let results = match thread_cap().and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(run),
        None => run(),
    };
    let mut report = Report {
        nsamples,
        successes: 0,
        success_fraction: None,
        max_time: None,
        mean_time: None,
        max_violation: 0.0,
        chattering: 0,
        dt,
        tmax,
        seed,
        failures: Vec::new(),
    };
    let mut total_time = 0.0;
    for (x0, res) in results {
        let x0v: Vec<f64> = x0.iter().copied().collect();
        match res {
            Ok(tr) => {
                report.max_violation = report.max_violation.max(tr.max_violation);
                report.chattering += tr.chattering as usize;
                match tr.reached() {
                    Some(t) => {
                        report.successes += 1;
                        total_time += t;
                        report.max_time = Some(report.max_time.map_or(t, |m: f64| m.max(t)));
                    }
                    None => report.failures.push(Failure {
                        x0: x0v,
                        outcome: Some(tr.outcome.clone()),
                        error: None,
                        trajectory: Some(tr),
                    }),
                }
            }
            Err(e) => report.failures.push(Failure { x0: x0v, outcome: None, error: Some(e.to_string()), trajectory: None }),
        }
    }
    if nsamples > 0 {
        report.success_fraction = Some(report.successes as f64 / nsamples as f64);
    }
    if report.successes > 0 {
        report.mean_time = Some(total_time / report.successes as f64);
    }
    report
}
