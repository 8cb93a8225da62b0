//! Problem and controller files, and the JSON writer used for every artifact.

use std::io;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Face, HalfSpace, Point, Polytope, Simplex};
use crate::synth::{AffinePiece, GreedyPaths, PwaController, Synthesis};
use crate::system::{containing_facet, AffineSystem};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FileError {
    #[error("{source_name}: line {line}, column {column}: {msg}")]
    Syntax { source_name: String, line: usize, column: usize, msg: String },
    #[error("{source_name}: field `{path}`: {msg}")]
    Schema { source_name: String, path: String, msg: String },
    #[error("{0}: {1}")]
    Io(String, io::Error),
}

// ---------------------------------------------------------------------------
// JSON output with 17 significant digits
// ---------------------------------------------------------------------------

struct Digits17;

impl serde_json::ser::Formatter for Digits17 {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        // no negative zero in artifacts
        let v = if value == 0.0 { 0.0 } else { value };
        write!(w, "{:.16e}", v)
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
}

/// Compact JSON with every float written as a 17-significant-digit decimal.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17);
    value.serialize(&mut ser).expect("artifact types serialize");
    buf.push(b'\n');
    String::from_utf8(buf).expect("JSON is UTF-8")
}

// ---------------------------------------------------------------------------
// shared pieces
// ---------------------------------------------------------------------------

pub fn point_vec(p: &Point) -> Vec<f64> {
    p.iter().copied().collect()
}

/// Vertices for export: cyclic order in the plane, canonical order otherwise.
pub fn export_vertices(p: &Polytope) -> Vec<Vec<f64>> {
    let mut vs: Vec<Point> = p.vertices().to_vec();
    if p.ambient() == 2 && p.dim() == 2 {
        let c = p.centroid();
        vs.sort_by(|a, b| {
            let ta = (a[1] - c[1]).atan2(a[0] - c[0]);
            let tb = (b[1] - c[1]).atan2(b[0] - c[0]);
            ta.total_cmp(&tb)
        });
    }
    vs.iter().map(point_vec).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct VertexSet {
    pub vertices: Vec<Vec<f64>>,
}

impl VertexSet {
    pub fn of(p: &Polytope) -> Self {
        VertexSet { vertices: export_vertices(p) }
    }
}

fn schema(source_name: &str, path: impl Into<String>, msg: impl Into<String>) -> FileError {
    FileError::Schema { source_name: source_name.to_string(), path: path.into(), msg: msg.into() }
}

fn parse<T: for<'de> Deserialize<'de>>(source_name: &str, text: &str) -> Result<T, FileError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if inner.is_data() {
            schema(source_name, path, inner.to_string())
        } else {
            FileError::Syntax {
                source_name: source_name.to_string(),
                line: inner.line(),
                column: inner.column(),
                msg: inner.to_string(),
            }
        }
    })
}

fn matrix(source_name: &str, path: &str, rows: &[Vec<f64>], nrows: usize, ncols: Option<usize>) -> Result<DMatrix<f64>, FileError> {
    if rows.len() != nrows {
        return Err(schema(source_name, path, format!("expected {nrows} rows, found {}", rows.len())));
    }
    let ncols = ncols.unwrap_or_else(|| rows.first().map_or(0, |r| r.len()));
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(schema(source_name, format!("{path}[{i}]"), format!("expected {ncols} entries, found {}", r.len())));
        }
        if let Some(k) = r.iter().position(|x| !x.is_finite()) {
            return Err(schema(source_name, format!("{path}[{i}][{k}]"), "value is not finite"));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn points(source_name: &str, path: &str, rows: &[Vec<f64>], n: usize) -> Result<Vec<Point>, FileError> {
    if rows.is_empty() {
        return Err(schema(source_name, path, "no points given"));
    }
    let m = matrix(source_name, path, rows, rows.len(), Some(n))?;
    Ok((0..rows.len()).map(|i| m.row(i).transpose()).collect())
}

// ---------------------------------------------------------------------------
// problem file
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    #[serde(default)]
    version: Option<u32>,
    system: RawSystem,
    polytope: RawPolytope,
    target: RawTarget,
    #[serde(default)]
    options: Options,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "a", default)]
    c: Option<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHalfSpace {
    normal: Vec<f64>,
    offset: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolytope {
    #[serde(default)]
    vertices: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    halfspaces: Option<Vec<RawHalfSpace>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTarget {
    vertices: Vec<Vec<f64>>,
}

/// Run options; every field may be overridden on the command line.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Options {
    pub eps: Option<f64>,
    pub dt: Option<f64>,
    pub tmax: Option<f64>,
    pub nsamples: Option<usize>,
    pub seed: Option<u64>,
    pub tol_geom: Option<f64>,
    pub tol_lp: Option<f64>,
}

/// A validated problem: system, polytope, target face and options.
#[derive(Clone, Debug)]
pub struct Problem {
    pub sys: AffineSystem,
    pub p: Polytope,
    pub f: Face,
    pub options: Options,
}

impl Problem {
    pub fn from_json(source_name: &str, text: &str) -> Result<Problem, FileError> {
        let raw: RawProblem = parse(source_name, text)?;
        if let Some(v) = raw.version {
            if v != FORMAT_VERSION {
                return Err(schema(source_name, "version", format!("unsupported version {v}, expected {FORMAT_VERSION}")));
            }
        }
        let n = raw.system.a.len();
        if n == 0 {
            return Err(schema(source_name, "system.A", "empty matrix"));
        }
        let a = matrix(source_name, "system.A", &raw.system.a, n, Some(n))?;
        let b = matrix(source_name, "system.B", &raw.system.b, n, None)?;
        let c = match &raw.system.c {
            Some(c) if c.len() != n => return Err(schema(source_name, "system.a", format!("expected {n} entries, found {}", c.len()))),
            Some(c) if c.iter().any(|x| !x.is_finite()) => return Err(schema(source_name, "system.a", "value is not finite")),
            Some(c) => DVector::from_vec(c.clone()),
            None => DVector::zeros(n),
        };
        let sys = AffineSystem::new(a, c, b).map_err(|e| schema(source_name, "system", e.to_string()))?;
        let p = match (&raw.polytope.vertices, &raw.polytope.halfspaces) {
            (Some(vs), None) => Polytope::hull(n, &points(source_name, "polytope.vertices", vs, n)?),
            (None, Some(hs)) => {
                let mut out = Vec::with_capacity(hs.len());
                for (i, h) in hs.iter().enumerate() {
                    if h.normal.len() != n {
                        return Err(schema(
                            source_name,
                            format!("polytope.halfspaces[{i}].normal"),
                            format!("expected {n} entries, found {}", h.normal.len()),
                        ));
                    }
                    let nv = DVector::from_vec(h.normal.clone());
                    if nv.norm() == 0.0 || !h.offset.is_finite() || nv.iter().any(|x| !x.is_finite()) {
                        return Err(schema(source_name, format!("polytope.halfspaces[{i}]"), "degenerate halfspace"));
                    }
                    out.push(HalfSpace::new(nv, h.offset));
                }
                Polytope::from_halfspaces(n, &out).map_err(|e| schema(source_name, "polytope.halfspaces", e.to_string()))?
            }
            _ => return Err(schema(source_name, "polytope", "give exactly one of `vertices` or `halfspaces`")),
        };
        if !p.is_full() {
            return Err(schema(source_name, "polytope", format!("polytope has dimension {} in R^{n}", p.dim())));
        }
        let fv = points(source_name, "target.vertices", &raw.target.vertices, n)?;
        let f = Face::from_vertices(n, &fv);
        if f.dim() + 1 != n {
            return Err(schema(source_name, "target.vertices", format!("target has dimension {}, expected {}", f.dim(), n - 1)));
        }
        if containing_facet(&p, &f).is_none() {
            return Err(schema(source_name, "target.vertices", "target does not lie in a facet of the polytope"));
        }
        Ok(Problem { sys, p, f, options: raw.options })
    }

    pub fn load(path: &std::path::Path) -> Result<Problem, FileError> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| FileError::Io(name.clone(), e))?;
        Problem::from_json(&name, &text)
    }
}

// ---------------------------------------------------------------------------
// controller file
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PieceRecord {
    pub id: usize,
    pub vertices: Vec<Vec<f64>>,
    #[serde(rename = "F")]
    pub gain: Vec<Vec<f64>>,
    pub g: Vec<f64>,
    pub exit_facet: usize,
    pub path_len: usize,
    pub tier: usize,
    pub sub: usize,
    pub slack: f64,
    pub exit_margin: f64,
    pub vertex_controls: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TriangulationRecord {
    pub label: String,
    pub tier: usize,
    pub region: VertexSet,
    pub target: VertexSet,
    pub simplices: Vec<Vec<Vec<f64>>>,
    pub adjacency: Vec<(usize, usize)>,
    pub target_facets: Vec<(usize, usize)>,
    pub greedy: GreedyPaths,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ControllerFile {
    pub version: u32,
    pub kind: String,
    pub n: usize,
    pub m: usize,
    /// Set the controller is certified on.
    pub domain: VertexSet,
    pub target: VertexSet,
    pub pieces: Vec<PieceRecord>,
    #[serde(default)]
    pub triangulations: Vec<TriangulationRecord>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl ControllerFile {
    pub fn from_synthesis(syn: &Synthesis, f: &Face) -> ControllerFile {
        let n = syn.domain.ambient();
        let m = syn.controller.pieces.first().map_or(0, |p| p.gain.nrows());
        let pieces = syn
            .controller
            .pieces
            .iter()
            .enumerate()
            .map(|(id, p)| PieceRecord {
                id,
                vertices: p.region.vertices.iter().map(point_vec).collect(),
                gain: rows(&p.gain),
                g: point_vec(&p.offset),
                exit_facet: p.exit_facet,
                path_len: p.path_len,
                tier: p.tier,
                sub: p.sub,
                slack: p.slack,
                exit_margin: p.exit_margin,
                vertex_controls: p.vertex_controls.iter().map(point_vec).collect(),
            })
            .collect();
        let triangulations = syn
            .parts
            .iter()
            .map(|part| TriangulationRecord {
                label: part.label.clone(),
                tier: part.tier,
                region: VertexSet::of(&part.region),
                target: VertexSet::of(&part.target.poly),
                simplices: part.triangulation.simplices.iter().map(|s| s.vertices.iter().map(point_vec).collect()).collect(),
                adjacency: part.triangulation.adjacency.clone(),
                target_facets: part.triangulation.target_facets.clone(),
                greedy: part.greedy.clone(),
            })
            .collect();
        ControllerFile {
            version: FORMAT_VERSION,
            kind: "controller".into(),
            n,
            m,
            domain: VertexSet::of(&syn.domain),
            target: VertexSet::of(&f.poly),
            pieces,
            triangulations,
        }
    }

    pub fn from_json(source_name: &str, text: &str) -> Result<ControllerFile, FileError> {
        let file: ControllerFile = parse(source_name, text)?;
        if file.version != FORMAT_VERSION {
            return Err(schema(source_name, "version", format!("unsupported version {}", file.version)));
        }
        if file.kind != "controller" {
            return Err(schema(source_name, "kind", format!("expected \"controller\", found {:?}", file.kind)));
        }
        if file.pieces.is_empty() {
            return Err(schema(source_name, "pieces", "controller has no pieces"));
        }
        Ok(file)
    }

    pub fn load(path: &std::path::Path) -> Result<ControllerFile, FileError> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| FileError::Io(name.clone(), e))?;
        ControllerFile::from_json(&name, &text)
    }

    /// Rebuilds the controller, its domain and target.
    pub fn to_controller(&self, source_name: &str) -> Result<(PwaController, Polytope, Face), FileError> {
        let (n, m) = (self.n, self.m);
        let mut pieces = Vec::with_capacity(self.pieces.len());
        for (k, rec) in self.pieces.iter().enumerate() {
            let path = format!("pieces[{k}]");
            let vs = points(source_name, &format!("{path}.vertices"), &rec.vertices, n)?;
            if vs.len() != n + 1 {
                return Err(schema(source_name, format!("{path}.vertices"), format!("a simplex needs {} vertices", n + 1)));
            }
            let region = Simplex::new(vs).map_err(|e| schema(source_name, format!("{path}.vertices"), e.to_string()))?;
            let gain = matrix(source_name, &format!("{path}.F"), &rec.gain, m, Some(n))?;
            if rec.g.len() != m {
                return Err(schema(source_name, format!("{path}.g"), format!("expected {m} entries, found {}", rec.g.len())));
            }
            if rec.exit_facet > n {
                return Err(schema(source_name, format!("{path}.exit_facet"), "facet index out of range"));
            }
            let vc = points(source_name, &format!("{path}.vertex_controls"), &rec.vertex_controls, m)?;
            pieces.push(AffinePiece {
                region,
                gain,
                offset: DVector::from_vec(rec.g.clone()),
                exit_facet: rec.exit_facet,
                path_len: rec.path_len,
                tier: rec.tier,
                sub: rec.sub,
                slack: rec.slack,
                exit_margin: rec.exit_margin,
                vertex_controls: vc,
            });
        }
        let domain = Polytope::hull(n, &points(source_name, "domain.vertices", &self.domain.vertices, n)?);
        let target = Face::from_vertices(n, &points(source_name, "target.vertices", &self.target.vertices, n)?);
        Ok((PwaController { pieces }, domain, target))
    }
}
