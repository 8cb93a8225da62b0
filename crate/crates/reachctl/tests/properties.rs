//! Property tests for invariants that hold across modules. Each case draws a
//! seed and builds its instance from it, so failures shrink to a seed.

mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use reachctl::geometry::*;
use reachctl::lp::{self, LinearProgram, Status};
use reachctl::reach::analyze;
use reachctl::sim::{default_dt, integrate, Arena, Outcome};
use reachctl::synth::*;
use reachctl::system::{compute_geometry, AffineSystem};
use reachctl::triangulate::*;

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

fn random_system(r: &mut ChaCha8Rng, n: usize) -> Option<AffineSystem> {
    let a = DMatrix::from_fn(n, n, |_, _| r.gen_range(-1.0..1.0));
    let c = DVector::from_fn(n, |_, _| r.gen_range(-1.0..1.0));
    let b = DMatrix::from_fn(n, n - 1, |_, _| r.gen_range(-1.0..1.0));
    let sys = AffineSystem::new(a, c, b).ok()?;
    (sys.rank_b() == n - 1 && sys.is_controllable()).then_some(sys)
}

fn random_orthogonal(r: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| r.gen_range(-1.0..1.0));
    m.qr().q()
}

fn field_rk4(sys: &AffineSystem, x: &Point, u: &DVector<f64>, h: f64) -> Point {
    let f = |y: &Point| sys.field(y, u);
    let k1 = f(x);
    let k2 = f(&(x + &k1 * (h / 2.0)));
    let k3 = f(&(x + &k2 * (h / 2.0)));
    let k4 = f(&(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Synthesized controller on a random reachable polytope with F a facet.
fn random_synthesis(r: &mut ChaCha8Rng, n: usize) -> Option<(AffineSystem, Polytope, Face, Synthesis)> {
    let sys = if n == 2 { AffineSystem::double_integrator() } else { integrator3() };
    let p = random_polytope(r, n, n + 3, 2.0, -0.3);
    let far = p.vertices().iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
    let fs: Vec<Face> = p.facets().into_iter().filter(|f| f.vertices().iter().any(|v| v[0] >= far - 1e-12)).collect();
    let f = fs[r.gen_range(0..fs.len())].clone();
    let geom = compute_geometry(&sys, &p).ok()?;
    let ra = analyze(&geom, &p, &f).ok()?;
    if !ra.reachable || ra.ambiguous {
        return None;
    }
    let syn = synth_polytope(&sys, &p, &f, None).ok()?;
    Some((sys, p, f, syn))
}

// ---------------------------------------------------------------------------
// geometry
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(cfg(100))]

    #[test]
    fn vertex_halfspace_round_trip(seed in any::<u64>(), n in 2usize..=3, extra in 1usize..6) {
        let mut r = rng(seed);
        let pts: Vec<Point> = (0..n + 1 + extra).map(|_| DVector::from_fn(n, |_, _| r.gen_range(-1.0..1.0))).collect();
        let p = Polytope::hull(n, &pts);
        prop_assume!(p.is_full());
        let hs = vrep_to_hrep(&p).unwrap();
        let back = hrep_to_vrep(n, &hs).unwrap();
        prop_assert_eq!(back.len(), p.vertices().len());
        for v in &back {
            prop_assert!(p.vertices().iter().any(|w| same_point(v, w, 1e-9)));
        }
        for h in &hs {
            prop_assert!((h.normal.norm() - 1.0).abs() < 1e-12);
            let tight: Vec<Point> = p.vertices().iter().filter(|v| h.eval(v).abs() <= 1e-9).cloned().collect();
            prop_assert!(Polytope::hull(n, &tight).dim() == n - 1);
        }
    }

    #[test]
    fn split_conserves_volume(seed in any::<u64>(), n in 2usize..=3) {
        let mut r = rng(seed);
        let pts: Vec<Point> = (0..n + 4).map(|_| DVector::from_fn(n, |_, _| r.gen_range(-1.0..1.0))).collect();
        let p = Polytope::hull(n, &pts);
        prop_assume!(p.is_full());
        let through = sample_in(&mut r, &p);
        let h = Hyperplane::through(DVector::from_fn(n, |_, _| r.gen_range(-1.0..1.0)), &through);
        let (a, b) = split_by_hyperplane(&p, &h);
        prop_assert!((a.volume() + b.volume() - p.volume()).abs() <= 1e-8 * p.volume());
    }

    #[test]
    fn simplex_normals_follow_the_facet_convention(seed in any::<u64>(), n in 2usize..=4) {
        let mut r = rng(seed);
        let vs: Vec<Point> = (0..=n).map(|_| DVector::from_fn(n, |_, _| r.gen_range(-1.0..1.0))).collect();
        let Ok(s) = Simplex::new(vs) else { return Ok(()) };
        for j in 0..=n {
            for i in 0..=n {
                let d = s.normals[j].dot(&s.vertices[i]) - s.offsets[j];
                if i == j {
                    prop_assert!(d < 0.0);
                } else {
                    prop_assert!(d.abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn basic_triangulation_is_valid_and_fans_from_vstar(seed in any::<u64>(), n in 2usize..=3) {
        let mut r = rng(seed);
        let sys = if n == 2 { AffineSystem::double_integrator() } else { integrator3() };
        let p = random_polytope(&mut r, n, n + 4, 2.0, -0.3);
        let fs = p.facets();
        let f = fs[r.gen_range(0..fs.len())].clone();
        let geom = compute_geometry(&sys, &p).unwrap();
        let Ok(vstar) = select_vstar(&p, &f, &geom) else { return Ok(()) };
        let t = basic_triangulation(&p, &f, &vstar).unwrap();
        prop_assert!(is_triangulation_of(&p, &t.simplices, 1e-8));
        for s in &t.simplices {
            prop_assert!(s.vertex_index(&vstar, 1e-9).is_some());
        }
    }
}

// ---------------------------------------------------------------------------
// lp
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(cfg(100))]

    #[test]
    fn lp_optimum_is_below_every_feasible_point(seed in any::<u64>(), n in 1usize..=4) {
        let mut r = rng(seed);
        let mut prog = LinearProgram::new(n).minimize((0..n).map(|_| r.gen_range(-1.0..1.0)).collect());
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            prog = prog.le(e.clone(), 3.0);
            e[i] = -1.0;
            prog = prog.le(e, 3.0);
        }
        for _ in 0..4 {
            let g: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
            prog = prog.le(g, r.gen_range(0.2..2.0));
        }
        let out = lp::solve(&prog).unwrap();
        prop_assert_eq!(out.status, Status::Optimal);
        let best = out.value.unwrap();
        prop_assert!(prog.violation(out.x_opt.as_ref().unwrap()) <= 1e-8);
        for _ in 0..200 {
            let x: Vec<f64> = (0..n).map(|_| r.gen_range(-3.0..3.0)).collect();
            if prog.violation(&x) <= 0.0 {
                let obj: f64 = prog.objective.iter().zip(&x).map(|(c, xi)| c * xi).sum();
                prop_assert!(best <= obj + 1e-9);
            }
        }
        // bit-for-bit deterministic
        prop_assert_eq!(lp::solve(&prog).unwrap(), out);
    }
}

// ---------------------------------------------------------------------------
// system
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(cfg(100))]

    #[test]
    fn equilibrium_plane_is_where_the_drift_is_actuated(seed in any::<u64>(), n in 2usize..=4) {
        let mut r = rng(seed);
        let Some(sys) = random_system(&mut r, n) else { return Ok(()) };
        let beta = sys.input_normal().unwrap();
        prop_assert!((beta.transpose() * &sys.b).amax() <= 1e-12);
        let o = sys.equilibrium_plane(&beta).unwrap();
        let proj = &sys.b * (sys.b.transpose() * &sys.b).try_inverse().unwrap() * sys.b.transpose();
        let resid = |x: &Point| {
            let d = sys.drift(x);
            (&d - &proj * &d).norm()
        };
        for _ in 0..10 {
            let y = DVector::from_fn(n, |_, _| r.gen_range(-2.0..2.0));
            let on = &y - &o.normal * o.eval(&y);
            prop_assert!(resid(&on) < 1e-9);
            let off = &on + &o.normal * r.gen_range(0.01..1.0);
            prop_assert!(resid(&off) > 1e-9);
        }
    }

    #[test]
    fn equilibrium_plane_moves_with_the_coordinates(seed in any::<u64>(), n in 2usize..=3) {
        let mut r = rng(seed);
        let Some(sys) = random_system(&mut r, n) else { return Ok(()) };
        let q = random_orthogonal(&mut r, n);
        let shift = DVector::from_fn(n, |_, _| r.gen_range(-1.0..1.0));
        // y = Q x + shift
        let a2 = &q * &sys.a * q.transpose();
        let c2 = &q * &sys.c - &a2 * &shift;
        let moved = AffineSystem::new(a2, c2, &q * &sys.b).unwrap();
        let o1 = sys.equilibrium_plane(&sys.input_normal().unwrap()).unwrap();
        let o2 = moved.equilibrium_plane(&moved.input_normal().unwrap()).unwrap();
        // the image of O has normal Q n and offset n·x + (Q n)·shift
        let n_img = &q * &o1.normal;
        let off_img = o1.offset + n_img.dot(&shift);
        let sign = n_img.dot(&o2.normal).signum();
        prop_assert!((&n_img * sign - &o2.normal).amax() < 1e-9);
        prop_assert!((off_img * sign - o2.offset).abs() < 1e-9);
    }
}

// ---------------------------------------------------------------------------
// reach
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(cfg(40))]

    /// Below-level sets `{x ∈ P : β·x <= β·z}` cannot be left upward.
    #[test]
    fn lower_sets_are_invariant_under_any_input(seed in any::<u64>(), n in 2usize..=3) {
        let mut r = rng(seed);
        let Some(sys) = random_system(&mut r, n) else { return Ok(()) };
        let pts: Vec<Point> = (0..n + 3).map(|_| DVector::from_fn(n, |_, _| r.gen_range(-0.5..0.5))).collect();
        let p = Polytope::hull(n, &pts);
        prop_assume!(p.is_full());
        let Ok(geom) = compute_geometry(&sys, &p) else { return Ok(()) };
        let z = sample_in(&mut r, &p);
        let cap = geom.level(&z);
        let h_minus = p.clip(&HalfSpace::new(geom.beta.clone(), cap));
        prop_assume!(h_minus.is_full());
        for _ in 0..5 {
            let mut x = sample_in(&mut r, &h_minus);
            'traj: for _ in 0..4 {
                let u = DVector::from_fn(n - 1, |_, _| r.gen_range(-20.0..20.0));
                for _ in 0..50 {
                    x = field_rk4(&sys, &x, &u, 2e-3);
                    if p.violation(&x) > 1e-6 {
                        break 'traj;
                    }
                    prop_assert!(geom.level(&x) <= cap + 1e-6, "β·x rose to {} above {cap}", geom.level(&x));
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(cfg(60))]

    #[test]
    fn affine_law_interpolates_vertex_controls(seed in any::<u64>(), n in 2usize..=4, m in 1usize..=3) {
        let mut r = rng(seed);
        let vs: Vec<Point> = (0..=n).map(|_| DVector::from_fn(n, |_, _| r.gen_range(-1.0..1.0))).collect();
        let Ok(s) = Simplex::new(vs) else { return Ok(()) };
        let us: Vec<DVector<f64>> = (0..=n).map(|_| DVector::from_fn(m, |_, _| r.gen_range(-5.0..5.0))).collect();
        let (f, g) = affine_from_vertex_controls(&s, &us).unwrap();
        for (v, u) in s.vertices.iter().zip(&us) {
            prop_assert!((&f * v + &g - u).amax() < 1e-9);
        }
    }

    #[test]
    fn lp_and_constructive_controls_agree_on_feasibility(seed in any::<u64>()) {
        let mut r = rng(seed);
        let sys = AffineSystem::double_integrator();
        let vs: Vec<Point> = (0..3).map(|_| pt(&[r.gen_range(0.0..2.0), r.gen_range(-0.3..1.0f64).max(0.0)])).collect();
        let Ok(s) = Simplex::new(vs) else { return Ok(()) };
        prop_assume!(s.volume() > 0.02);
        let poly = s.to_polytope();
        let geom = compute_geometry(&sys, &poly).unwrap();
        let exit = r.gen_range(0..3);
        let face = Face::from_vertices(2, &s.facet_vertices(exit));
        let ra = analyze(&geom, &poly, &face).unwrap();
        prop_assume!(!ra.ambiguous && !needs_split(&geom, &s, exit));
        let lp_ok = vertex_controls_lp(&sys, &s, exit);
        if ra.reachable {
            let vc = lp_ok.unwrap();
            prop_assert!(invariance_residual(&sys, &s, exit, &vc.u) <= 1e-8);
            let vc = vertex_controls_constructive(&sys, &geom, &s, exit).unwrap();
            prop_assert!(invariance_residual(&sys, &s, exit, &vc.u) <= 1e-8);
        } else {
            prop_assert!(synth_simplex(&sys, &geom, &s, exit).is_err());
        }
    }

    #[test]
    fn greedy_levels_never_decrease(seed in any::<u64>(), n in 2usize..=3) {
        let mut r = rng(seed);
        let Some((_, _, _, syn)) = random_synthesis(&mut r, n) else { return Ok(()) };
        for part in &syn.parts {
            let lv = &part.greedy.levels;
            prop_assert!(lv.windows(2).all(|w| w[1] >= w[0] - 1e-9), "levels {lv:?}");
        }
    }

    #[test]
    fn lookup_is_total_on_the_domain(seed in any::<u64>(), n in 2usize..=3) {
        let mut r = rng(seed);
        let Some((_, _, _, syn)) = random_synthesis(&mut r, n) else { return Ok(()) };
        for _ in 0..100 {
            let x = sample_in(&mut r, &syn.domain);
            let k = syn.controller.lookup(&x).unwrap();
            prop_assert!(syn.controller.pieces[k].region.contains(&x, 1e-8));
            prop_assert_eq!(syn.controller.lookup(&x).unwrap(), k);
        }
    }
}

// ---------------------------------------------------------------------------
// sim
// ---------------------------------------------------------------------------

/// One affine piece on a large triangle: the damped oscillator x'' = -x - 0.5 x'.
fn oscillator() -> (AffineSystem, PwaController, Arena) {
    let sys = AffineSystem::double_integrator();
    let region = Simplex::new(vec![pt(&[-100.0, -100.0]), pt(&[100.0, -100.0]), pt(&[0.0, 100.0])]).unwrap();
    let gain = DMatrix::from_row_slice(1, 2, &[-1.0, -0.5]);
    let offset = DVector::zeros(1);
    let vertex_controls = region.vertices.iter().map(|v| &gain * v + &offset).collect();
    let piece = AffinePiece {
        region: region.clone(),
        gain,
        offset,
        exit_facet: 0,
        path_len: 1,
        tier: 0,
        sub: 0,
        slack: 0.0,
        exit_margin: 0.0,
        vertex_controls,
    };
    let p = region.to_polytope();
    let f = Face::from_vertices(2, &region.facet_vertices(0));
    (sys, PwaController { pieces: vec![piece] }, Arena::new(p, f))
}

proptest! {
    #![proptest_config(cfg(30))]

    #[test]
    fn rk4_error_shrinks_at_fourth_order(x1 in -1.0f64..1.0, x2 in -1.0f64..1.0, k in 3u32..6) {
        prop_assume!(x1.abs() + x2.abs() > 0.2);
        let (sys, ctrl, arena) = oscillator();
        let x0 = pt(&[x1, x2]);
        let dt = 0.4 / 2f64.powi(k as i32 - 3);
        let end = |h: f64| {
            let tr = integrate(&sys, &ctrl, &arena, &x0, h, 4.0).unwrap();
            assert_eq!(tr.outcome, Outcome::Timeout);
            pt(tr.states.last().unwrap())
        };
        let (a, b, c) = (end(dt), end(dt / 2.0), end(dt / 4.0));
        let ratio = (&a - &b).norm() / (&b - &c).norm();
        prop_assert!((8.0..=32.0).contains(&ratio), "ratio {ratio} at dt {dt}");
    }

    #[test]
    fn closed_loop_is_beta_monotone_and_events_land_on_f(seed in any::<u64>(), n in 2usize..=3) {
        let mut r = rng(seed);
        let Some((sys, _, f, syn)) = random_synthesis(&mut r, n) else { return Ok(()) };
        let geom = compute_geometry(&sys, &syn.domain).unwrap();
        let arena = Arena::new(syn.domain.clone(), f.clone());
        let fbar = reachctl::system::containing_facet(&syn.domain, &f).unwrap();
        let plane = syn.domain.halfspaces().iter().find(|h| fbar.vertices().iter().all(|v| h.eval(v).abs() <= 1e-8)).unwrap().clone();
        let dt = default_dt(&sys, &syn.controller, &syn.domain);
        for _ in 0..5 {
            let x0 = sample_in(&mut r, &syn.domain);
            let tr = integrate(&sys, &syn.controller, &arena, &x0, dt, 100.0).unwrap();
            prop_assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
            let lv: Vec<f64> = tr.states.iter().map(|s| geom.level(&DVector::from_row_slice(s))).collect();
            prop_assert!(lv.windows(2).all(|w| w[1] <= w[0] + 1e-8));
            if let Outcome::ReachedF { t } = tr.outcome {
                if t > 0.0 {
                    let xe = DVector::from_row_slice(tr.states.last().unwrap());
                    prop_assert!(plane.eval(&xe).abs() <= 1e-8, "event state off F by {:e}", plane.eval(&xe));
                }
            } else {
                prop_assert!(false, "{:?} from {:?}", tr.outcome, x0.as_slice());
            }
        }
    }
}
