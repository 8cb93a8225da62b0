//! Batch front end: `reachctl <command> ...`.

pub mod files;

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;

use crate::geometry::{split_by_hyperplane, Face, Point, Polytope};
use crate::reach::{analyze, default_eps, epsilon_cut, ReachAnalysis, VerdictSummary};
use crate::sim::{default_dt, integrate, verify, Arena, Trajectory};
use crate::synth::synth_polytope;
use crate::system::{check_assumptions, compute_geometry, plane_crosses_interior, AssumptionReport};
use crate::tol;
use crate::triangulate::cover_wrt_o;
use files::{point_vec, to_json, ControllerFile, Problem, VertexSet, FORMAT_VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_REACHABLE: i32 = 2;
pub const EXIT_ERROR: i32 = 1;

const DEFAULT_TMAX: f64 = 100.0;
const DEFAULT_SAMPLES: usize = 1000;

#[derive(Parser, Debug)]
#[command(name = "reachctl", version, about = "Reachability analysis and piecewise-affine control synthesis on polytopes")]
pub struct Args {
    /// Geometric tolerance (relative to the polytope diameter)
    #[arg(long, global = true)]
    pub tol_geom: Option<f64>,
    /// LP feasibility tolerance
    #[arg(long, global = true)]
    pub tol_lp: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check the standing assumptions and decide whether F is reachable from all of P
    Analyze {
        file: PathBuf,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trim the failure sets: A_eps^-, A_eps^+ and Reach_eps
    Cut {
        file: PathBuf,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize a piecewise-affine feedback
    Synthesize {
        file: PathBuf,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate the closed loop from given initial states
    Simulate {
        file: PathBuf,
        controller: PathBuf,
        /// Initial state as comma-separated coordinates (repeatable)
        #[arg(long = "x0", allow_hyphen_values = true)]
        x0: Vec<String>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        tmax: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-loop verification from uniformly sampled initial states
    Verify {
        file: PathBuf,
        controller: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        tmax: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Polygons and trajectories for external plotting tools
    PlotData {
        file: PathBuf,
        controller: Option<PathBuf>,
        #[arg(long = "x0", allow_hyphen_values = true)]
        x0: Vec<String>,
        #[arg(long, value_enum, default_value_t = PlotFormat::Json)]
        format: PlotFormat,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        tmax: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlotFormat {
    Json,
    Csv,
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code. Artifacts go to `stdout` and, with `--out`, to files.
pub fn run<I, S>(args: I, stdout: &mut dyn Write) -> Result<i32>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let args = Args::try_parse_from(args)?;
    execute(args, stdout)
}

fn load_problem(path: &Path, args_geom: Option<f64>, args_lp: Option<f64>) -> Result<Problem> {
    let pb = Problem::load(path)?;
    if let Some(t) = args_geom.or(pb.options.tol_geom) {
        tol::set_geom(t);
    }
    if let Some(t) = args_lp.or(pb.options.tol_lp) {
        tol::set_lp(t);
    }
    Ok(pb)
}

fn emit(stdout: &mut dyn Write, out: &Option<PathBuf>, name: &str, text: &str) -> Result<()> {
    stdout.write_all(text.as_bytes())?;
    if let Some(dir) = out {
        write_file(dir, name, text)?;
    }
    Ok(())
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn parse_point(s: &str, n: usize) -> Result<Point> {
    let xs: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("--x0 {s:?}: bad number {t:?}")))
        .collect::<Result<_>>()?;
    if xs.len() != n {
        bail!("--x0 {s:?}: expected {n} coordinates, found {}", xs.len());
    }
    Ok(DVector::from_vec(xs))
}

fn execute(args: Args, stdout: &mut dyn Write) -> Result<i32> {
    let (tg, tl) = (args.tol_geom, args.tol_lp);
    match args.command {
        Command::Analyze { file, eps, out } => {
            let pb = load_problem(&file, tg, tl)?;
            let (report, reachable) = analysis_report(&pb, eps.or(pb.options.eps))?;
            emit(stdout, &out, "analysis.json", &to_json(&report))?;
            Ok(if reachable { EXIT_OK } else { EXIT_NOT_REACHABLE })
        }
        Command::Cut { file, eps, out } => {
            let pb = load_problem(&file, tg, tl)?;
            let geom = compute_geometry(&pb.sys, &pb.p)?;
            let eps = eps.or(pb.options.eps).unwrap_or_else(|| default_eps(&geom, &pb.p));
            let cut = epsilon_cut(&geom, &pb.p, &pb.f, eps)?;
            let report = CutReport {
                version: FORMAT_VERSION,
                kind: "cut",
                eps,
                a_eps_minus: VertexSet::of(&cut.a_eps_minus),
                a_eps_plus: VertexSet::of(&cut.a_eps_plus),
                reach_eps: VertexSet::of(&cut.reach_eps),
                lower_cut: cut.lower_cut.as_ref().map(|h| HalfSpaceRecord { normal: point_vec(&h.normal), offset: h.offset }),
                upper_level: cut.upper_level,
            };
            emit(stdout, &out, "cut.json", &to_json(&report))?;
            Ok(EXIT_OK)
        }
        Command::Synthesize { file, eps, out } => {
            let pb = load_problem(&file, tg, tl)?;
            let syn = synth_polytope(&pb.sys, &pb.p, &pb.f, eps.or(pb.options.eps))?;
            let cf = ControllerFile::from_synthesis(&syn, &pb.f);
            emit(stdout, &out, "controller.json", &to_json(&cf))?;
            if let Some(dir) = &out {
                write_file(dir, "triangulation.json", &to_json(&cf.triangulations))?;
            }
            Ok(EXIT_OK)
        }
        Command::Simulate { file, controller, x0, dt, tmax, out } => {
            let pb = load_problem(&file, tg, tl)?;
            let (ctrl, domain, target) = load_controller(&controller)?;
            let arena = Arena::new(domain.clone(), target);
            let dt = dt.or(pb.options.dt).unwrap_or_else(|| default_dt(&pb.sys, &ctrl, &domain));
            let tmax = tmax.or(pb.options.tmax).unwrap_or(DEFAULT_TMAX);
            let starts: Vec<Point> = if x0.is_empty() {
                vec![domain.centroid()]
            } else {
                x0.iter().map(|s| parse_point(s, pb.sys.n())).collect::<Result<_>>()?
            };
            if starts.len() > 1 && out.is_none() {
                bail!("several initial states need --out DIR (one CSV per trajectory)");
            }
            for (k, x) in starts.iter().enumerate() {
                let tr = integrate(&pb.sys, &ctrl, &arena, x, dt, tmax)?;
                let mut buf = Vec::new();
                tr.write_csv(&mut buf)?;
                let text = String::from_utf8(buf)?;
                match &out {
                    Some(dir) => write_file(dir, &format!("trajectory_{k}.csv"), &text)?,
                    None => stdout.write_all(text.as_bytes())?,
                }
            }
            Ok(EXIT_OK)
        }
        Command::Verify { file, controller, samples, seed, dt, tmax, out } => {
            let pb = load_problem(&file, tg, tl)?;
            let (ctrl, domain, target) = load_controller(&controller)?;
            let arena = Arena::new(domain.clone(), target);
            let dt = dt.or(pb.options.dt).unwrap_or_else(|| default_dt(&pb.sys, &ctrl, &domain));
            let tmax = tmax.or(pb.options.tmax).unwrap_or(DEFAULT_TMAX);
            let n = samples.or(pb.options.nsamples).unwrap_or(DEFAULT_SAMPLES);
            let seed = seed.or(pb.options.seed).unwrap_or(0);
            let report = verify(&pb.sys, &ctrl, &arena, n, seed, dt, tmax);
            emit(stdout, &out, "verification.json", &to_json(&report))?;
            Ok(EXIT_OK)
        }
        Command::PlotData { file, controller, x0, format, eps, dt, tmax, out } => {
            let pb = load_problem(&file, tg, tl)?;
            let plot = plot_data(&pb, controller.as_deref(), &x0, eps.or(pb.options.eps), dt, tmax)?;
            match format {
                PlotFormat::Json => emit(stdout, &out, "plot.json", &to_json(&plot))?,
                PlotFormat::Csv => emit(stdout, &out, "plot.csv", &plot.to_csv()?)?,
            }
            Ok(EXIT_OK)
        }
    }
}

fn load_controller(path: &Path) -> Result<(crate::synth::PwaController, Polytope, Face)> {
    let cf = ControllerFile::load(path)?;
    Ok(cf.to_controller(&path.display().to_string())?)
}

#[derive(Serialize)]
struct HalfSpaceRecord {
    normal: Vec<f64>,
    offset: f64,
}

#[derive(Serialize)]
struct CutReport {
    version: u32,
    kind: &'static str,
    eps: f64,
    a_eps_minus: VertexSet,
    a_eps_plus: VertexSet,
    reach_eps: VertexSet,
    lower_cut: Option<HalfSpaceRecord>,
    upper_level: Option<f64>,
}

#[derive(Serialize)]
struct ReachRecord {
    verdict: VerdictSummary,
    v_minus: Vec<f64>,
    v_plus: Vec<f64>,
    h_minus: VertexSet,
    h_plus: VertexSet,
    p_plus: VertexSet,
    a_minus: VertexSet,
    a_plus: VertexSet,
}

impl ReachRecord {
    fn of(r: &ReachAnalysis) -> Self {
        ReachRecord {
            verdict: VerdictSummary::from(r),
            v_minus: point_vec(&r.v_minus),
            v_plus: point_vec(&r.v_plus),
            h_minus: VertexSet::of(&r.h_minus),
            h_plus: VertexSet::of(&r.h_plus),
            p_plus: VertexSet::of(&r.p_plus),
            a_minus: VertexSet::of(&r.a_minus),
            a_plus: VertexSet::of(&r.a_plus),
        }
    }
}

#[derive(Serialize)]
struct SideRecord {
    region: VertexSet,
    beta: Vec<f64>,
    target: Option<VertexSet>,
    analysis: Option<ReachRecord>,
}

#[derive(Serialize)]
struct AnalysisReport {
    version: u32,
    kind: &'static str,
    reachable: bool,
    assumptions: AssumptionReport,
    beta: Vec<f64>,
    o_plane: HalfSpaceRecord,
    o_crosses_interior: bool,
    analysis: Option<ReachRecord>,
    /// Per side of O when O crosses the interior of P.
    sides: Vec<SideRecord>,
    /// Whether the cover along O accounts for all of P (O-crossing case only).
    cover_complete: Option<bool>,
    cover_error: Option<String>,
}

fn analysis_report(pb: &Problem, eps: Option<f64>) -> Result<(AnalysisReport, bool)> {
    let assumptions = check_assumptions(&pb.sys, &pb.p, &pb.f);
    if !assumptions.a1_rank {
        bail!("rank B must be n - 1 ({})", assumptions.notes.join("; "));
    }
    let beta0 = pb.sys.input_normal()?;
    let o = pb.sys.equilibrium_plane(&beta0)?;
    let crosses = plane_crosses_interior(&o, &pb.p);
    let mut report = AnalysisReport {
        version: FORMAT_VERSION,
        kind: "analysis",
        reachable: false,
        assumptions,
        beta: point_vec(&beta0),
        o_plane: HalfSpaceRecord { normal: point_vec(&o.normal), offset: o.offset },
        o_crosses_interior: crosses,
        analysis: None,
        sides: Vec::new(),
        cover_complete: None,
        cover_error: None,
    };
    if !crosses {
        let geom = compute_geometry(&pb.sys, &pb.p)?;
        let ra = analyze(&geom, &pb.p, &pb.f)?;
        report.beta = point_vec(&geom.beta);
        report.o_plane = HalfSpaceRecord { normal: point_vec(&geom.o_plane.normal), offset: geom.o_plane.offset };
        report.reachable = ra.reachable;
        report.analysis = Some(ReachRecord::of(&ra));
        return Ok((report, ra.reachable));
    }
    let n = pb.p.ambient();
    let (s1, s2) = split_by_hyperplane(&pb.p, &o);
    for side in [s1, s2] {
        let geom = compute_geometry(&pb.sys, &side)?;
        let share = pb.f.poly.intersect(&side);
        let (target, analysis) = if share.dim() + 1 == n && !share.is_empty() {
            let face = Face { poly: share.clone(), supporting: None };
            (Some(VertexSet::of(&share)), Some(ReachRecord::of(&analyze(&geom, &side, &face)?)))
        } else {
            (None, None)
        };
        report.sides.push(SideRecord { region: VertexSet::of(&side), beta: point_vec(&geom.beta), target, analysis });
    }
    let eps = eps.unwrap_or_else(|| {
        let (lo, hi) = pb.p.min_max(&beta0);
        1e-2 * (hi - lo)
    });
    match cover_wrt_o(&pb.sys, &pb.p, &pb.f, eps) {
        Ok(_) => report.cover_complete = Some(true),
        Err(e) => {
            report.cover_complete = Some(false);
            report.cover_error = Some(e.to_string());
        }
    }
    report.reachable = report.cover_complete == Some(true);
    let reachable = report.reachable;
    Ok((report, reachable))
}

// ---------------------------------------------------------------------------
// plot data
// ---------------------------------------------------------------------------

#[derive(Serialize)]
pub struct PlotPolygon {
    pub kind: String,
    pub label: String,
    pub vertices: Vec<Vec<f64>>,
}

#[derive(Serialize)]
pub struct PlotTrajectory {
    pub label: String,
    pub outcome: crate::sim::Outcome,
    pub points: Vec<Vec<f64>>,
}

#[derive(Serialize)]
pub struct PlotData {
    pub version: u32,
    pub kind: &'static str,
    pub dim: usize,
    pub polygons: Vec<PlotPolygon>,
    pub trajectories: Vec<PlotTrajectory>,
}

impl PlotData {
    fn push(&mut self, kind: &str, label: impl Into<String>, p: &Polytope) {
        if !p.is_empty() {
            self.polygons.push(PlotPolygon { kind: kind.into(), label: label.into(), vertices: files::export_vertices(p) });
        }
    }

    /// One row per vertex or trajectory point: kind, label, index, x1..xn.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["kind".to_string(), "label".into(), "index".into()];
        header.extend((1..=self.dim).map(|k| format!("x{k}")));
        w.write_record(&header)?;
        let mut row = |kind: &str, label: &str, i: usize, x: &[f64]| -> Result<()> {
            let mut rec = vec![kind.to_string(), label.to_string(), i.to_string()];
            rec.extend(x.iter().map(|&v| crate::sim::fmt17(v)));
            w.write_record(&rec)?;
            Ok(())
        };
        for pg in &self.polygons {
            for (i, v) in pg.vertices.iter().enumerate() {
                row(&pg.kind, &pg.label, i, v)?;
            }
        }
        for tr in &self.trajectories {
            for (i, v) in tr.points.iter().enumerate() {
                row("trajectory", &tr.label, i, v)?;
            }
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }
}

fn plot_data(
    pb: &Problem,
    controller: Option<&Path>,
    x0: &[String],
    eps: Option<f64>,
    dt: Option<f64>,
    tmax: Option<f64>,
) -> Result<PlotData> {
    let n = pb.p.ambient();
    let mut plot = PlotData { version: FORMAT_VERSION, kind: "plot", dim: n, polygons: Vec::new(), trajectories: Vec::new() };
    plot.push("P", "P", &pb.p);
    plot.push("F", "F", &pb.f.poly);
    let beta0 = pb.sys.input_normal()?;
    let o = pb.sys.equilibrium_plane(&beta0)?;
    plot.push("O", "O∩P", &pb.p.section(&o));
    if !plane_crosses_interior(&o, &pb.p) {
        let geom = compute_geometry(&pb.sys, &pb.p)?;
        let ra = analyze(&geom, &pb.p, &pb.f)?;
        plot.push("failure", "A-", &ra.a_minus);
        plot.push("failure", "A+", &ra.a_plus);
        if !ra.reachable {
            let eps = eps.unwrap_or_else(|| default_eps(&geom, &pb.p));
            if let Ok(cut) = epsilon_cut(&geom, &pb.p, &pb.f, eps) {
                plot.push("reach_eps", "Reach_eps", &cut.reach_eps);
            }
        }
    }
    if let Some(path) = controller {
        let (ctrl, domain, target) = load_controller(path)?;
        for (k, pc) in ctrl.pieces.iter().enumerate() {
            plot.push("simplex", k.to_string(), &pc.region.to_polytope());
        }
        let arena = Arena::new(domain.clone(), target);
        let dt = dt.or(pb.options.dt).unwrap_or_else(|| default_dt(&pb.sys, &ctrl, &domain));
        let tmax = tmax.or(pb.options.tmax).unwrap_or(DEFAULT_TMAX);
        for (k, s) in x0.iter().enumerate() {
            let x = parse_point(s, n)?;
            let tr: Trajectory = integrate(&pb.sys, &ctrl, &arena, &x, dt, tmax)?;
            plot.trajectories.push(PlotTrajectory { label: k.to_string(), outcome: tr.outcome, points: tr.states });
        }
    } else if !x0.is_empty() {
        bail!("trajectories need a controller file");
    }
    Ok(plot)
}

/// Entry point for the binary.
pub fn main_exit_code() -> i32 {
    let mut out = std::io::stdout().lock();
    match run(std::env::args_os(), &mut out) {
        Ok(code) => code,
        Err(e) => {
            if let Some(ce) = e.downcast_ref::<clap::Error>() {
                let _ = ce.print();
                return match ce.kind() {
                    clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                    _ => EXIT_ERROR,
                };
            }
            let broken_pipe = e
                .downcast_ref::<std::io::Error>()
                .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe);
            if broken_pipe {
                return EXIT_OK;
            }
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}
