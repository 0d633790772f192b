//! Exact polyhedral decomposition of a 2D input rectangle by a ReLU network.
//!
//! The rectangle is cut neuron by neuron in layer-major order. Inside every
//! current cell all earlier neurons have a fixed sign, so the next neuron's
//! preactivation is affine there: its values are tracked per vertex, edges
//! whose endpoints have strictly opposite signs are split at the linear root,
//! and each face whose boundary then carries two zero vertices is split by the
//! chord joining them. Every vertex, edge and face records one sign per
//! processed neuron.

use std::borrow::Cow;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_atomic, write_json};
use crate::nn::{ActivationPattern, ReluNetwork, SignVector};

pub const DEFAULT_TOL: f64 = 1e-9;
/// Bias jitter amplitude used when retrying a degenerate decomposition.
pub const JITTER_AMPLITUDE: f64 = 1e-7;
pub const MAX_RETRIES: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundingBox2D {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl BoundingBox2D {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let b = Self {
            x_min,
            x_max,
            y_min,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::InvalidParameter(format!("invalid bounding box {self:?}")));
        }
        Ok(())
    }

    /// Grows each side by `fraction` of the box extent, split evenly.
    pub fn inflated(&self, fraction: f64) -> Self {
        let dx = (self.x_max - self.x_min) * fraction / 2.0;
        let dy = (self.y_max - self.y_min) * fraction / 2.0;
        Self {
            x_min: self.x_min - dx,
            x_max: self.x_max + dx,
            y_min: self.y_min - dy,
            y_max: self.y_max + dy,
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    fn on_boundary(&self, p: [f64; 2], eps: f64) -> [bool; 4] {
        [
            (p[1] - self.y_min).abs() <= eps,
            (p[0] - self.x_max).abs() <= eps,
            (p[1] - self.y_max).abs() <= eps,
            (p[0] - self.x_min).abs() <= eps,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    pub pos: [f64; 2],
    pub sign: SignVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub endpoints: [usize; 2],
    pub sign: SignVector,
}

/// A convex polygon with a counterclockwise boundary: edge `edges[i]` joins
/// `vertices[i]` and `vertices[(i + 1) % n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    pub vertices: Vec<usize>,
    pub edges: Vec<usize>,
    pub sign: SignVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FVector {
    pub f0: usize,
    pub f1: usize,
    pub f2: usize,
}

impl FVector {
    pub fn euler(&self) -> i64 {
        self.f0 as i64 - self.f1 as i64 + self.f2 as i64
    }

    pub fn total(&self) -> usize {
        self.f0 + self.f1 + self.f2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellComplex2D {
    pub bbox: BoundingBox2D,
    pub hidden_count: usize,
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
    pub faces: Vec<Face>,
    pub face_by_pattern: HashMap<ActivationPattern, usize>,
    /// Seed of the bias jitter applied after a degenerate first attempt.
    pub jitter_seed: Option<u64>,
}

pub fn f_vector(complex: &CellComplex2D) -> FVector {
    complex.f_vector()
}

impl CellComplex2D {
    pub fn f_vector(&self) -> FVector {
        FVector {
            f0: self.vertices.len(),
            f1: self.edges.len(),
            f2: self.faces.len(),
        }
    }

    pub fn cell_count(&self) -> usize {
        self.f_vector().total()
    }

    /// The network whose arrangement this complex actually realizes.
    pub fn effective_network<'a>(&self, net: &'a ReluNetwork) -> Cow<'a, ReluNetwork> {
        match self.jitter_seed {
            None => Cow::Borrowed(net),
            Some(seed) => Cow::Owned(net.with_bias_jitter(JITTER_AMPLITUDE, seed)),
        }
    }

    pub fn face_polygon(&self, f: usize) -> Vec<[f64; 2]> {
        self.faces[f]
            .vertices
            .iter()
            .map(|&v| self.vertices[v].pos)
            .collect()
    }

    pub fn face_area(&self, f: usize) -> f64 {
        signed_area(&self.face_polygon(f))
    }

    /// Vertex average; lies inside because faces are convex.
    pub fn face_centroid(&self, f: usize) -> [f64; 2] {
        let poly = self.face_polygon(f);
        let n = poly.len() as f64;
        let (sx, sy) = poly.iter().fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
        [sx / n, sy / n]
    }

    /// Faces incident to each edge.
    pub fn edge_faces(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.edges.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            for &e in &f.edges {
                out[e].push(fi);
            }
        }
        out
    }

    pub fn vertex_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.vertices.len()];
        for e in &self.edges {
            deg[e.endpoints[0]] += 1;
            deg[e.endpoints[1]] += 1;
        }
        deg
    }

    fn boundary_eps(&self) -> f64 {
        1e-12 * (1.0 + self.bbox.width().abs().max(self.bbox.height().abs()))
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.bbox
            .on_boundary(self.vertices[v].pos, self.boundary_eps())
            .iter()
            .any(|&b| b)
    }

    /// True when both endpoints lie on the same side of the box.
    pub fn is_boundary_edge(&self, e: usize) -> bool {
        let eps = self.boundary_eps();
        let [a, b] = self.edges[e].endpoints;
        let sa = self.bbox.on_boundary(self.vertices[a].pos, eps);
        let sb = self.bbox.on_boundary(self.vertices[b].pos, eps);
        (0..4).any(|k| sa[k] && sb[k])
    }

    /// Checks the structural invariants of the complex; returns the first violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let nv = self.vertices.len();
        for (i, e) in self.edges.iter().enumerate() {
            if e.endpoints.iter().any(|&v| v >= nv) || e.endpoints[0] == e.endpoints[1] {
                return Err(format!("edge {i} has bad endpoints {:?}", e.endpoints));
            }
        }
        for (fi, f) in self.faces.iter().enumerate() {
            let n = f.vertices.len();
            if n < 3 || f.edges.len() != n {
                return Err(format!("face {fi} has a malformed boundary"));
            }
            for i in 0..n {
                let [a, b] = self.edges[f.edges[i]].endpoints;
                let (u, w) = (f.vertices[i], f.vertices[(i + 1) % n]);
                if !((a == u && b == w) || (a == w && b == u)) {
                    return Err(format!("face {fi} boundary is not a closed cycle at {i}"));
                }
            }
            if f.sign.zero_count() != 0 {
                return Err(format!("face {fi} sign vector has zeros"));
            }
            if self.face_area(fi) <= 0.0 {
                return Err(format!("face {fi} is not counterclockwise"));
            }
        }
        let incident = self.edge_faces();
        for (e, faces) in incident.iter().enumerate() {
            let want = if self.is_boundary_edge(e) { 1 } else { 2 };
            if faces.len() != want {
                return Err(format!("edge {e} bounds {} faces, expected {want}", faces.len()));
            }
        }
        if self.f_vector().euler() != 1 {
            return Err(format!("Euler characteristic {} != 1", self.f_vector().euler()));
        }
        for (i, c) in self.vertices.iter().map(|v| &v.sign).chain(self.edges.iter().map(|e| &e.sign)).enumerate() {
            if c.len() != self.hidden_count {
                return Err(format!("cell {i} sign vector has length {}", c.len()));
            }
        }
        Ok(())
    }

    /// Face containing `point`, keyed by its activation pattern.
    ///
    /// Points whose pattern is not a face key (on or within rounding of a
    /// cell boundary) fall back to the faces that geometrically contain the
    /// point, preferring the one whose pattern is closest in Hamming distance,
    /// so a preactivation of exactly zero resolves to the 0-bit side.
    pub fn locate(&self, net: &ReluNetwork, point: [f64; 2]) -> Result<usize> {
        let net = self.effective_network(net);
        let pattern = net.binary_state_vector(&point)?;
        if let Some(&f) = self.face_by_pattern.get(&pattern) {
            return Ok(f);
        }
        let eps = 1e-9 * (1.0 + self.bbox.width().max(self.bbox.height()));
        (0..self.faces.len())
            .filter(|&f| convex_contains(&self.face_polygon(f), point, eps))
            .min_by_key(|&f| (self.faces[f].sign.to_pattern().hamming(&pattern), f))
            .ok_or(Error::FaceNotFound {
                x: point[0],
                y: point[1],
            })
    }

    /// Number of points per face; points outside the box are skipped.
    pub fn count_points_per_face(&self, net: &ReluNetwork, points: &[[f64; 2]]) -> Result<Vec<usize>> {
        let mut counts = vec![0; self.faces.len()];
        for &p in points {
            if self.bbox.contains(p) {
                counts[self.locate(net, p)?] += 1;
            }
        }
        Ok(counts)
    }

    pub fn to_file(&self) -> ComplexFile {
        ComplexFile {
            bbox: self.bbox,
            hidden_count: self.hidden_count,
            jitter_seed: self.jitter_seed,
            vertices: self
                .vertices
                .iter()
                .map(|v| VertexRecord {
                    x: v.pos[0],
                    y: v.pos[1],
                    sign: v.sign.to_string(),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeRecord {
                    v: e.endpoints,
                    sign: e.sign.to_string(),
                })
                .collect(),
            faces: self
                .faces
                .iter()
                .map(|f| FaceRecord {
                    vertices: f.vertices.clone(),
                    edges: f.edges.clone(),
                    sign: f.sign.to_string(),
                })
                .collect(),
        }
    }

    pub fn from_file(file: ComplexFile) -> std::result::Result<Self, String> {
        let sign = |s: &str| SignVector::parse(s).ok_or_else(|| format!("bad sign string {s:?}"));
        let vertices = file
            .vertices
            .iter()
            .map(|v| Ok(Vertex { pos: [v.x, v.y], sign: sign(&v.sign)? }))
            .collect::<std::result::Result<Vec<_>, String>>()?;
        let edges = file
            .edges
            .iter()
            .map(|e| Ok(Edge { endpoints: e.v, sign: sign(&e.sign)? }))
            .collect::<std::result::Result<Vec<_>, String>>()?;
        let faces = file
            .faces
            .iter()
            .map(|f| {
                Ok(Face {
                    vertices: f.vertices.clone(),
                    edges: f.edges.clone(),
                    sign: sign(&f.sign)?,
                })
            })
            .collect::<std::result::Result<Vec<_>, String>>()?;
        let mut face_by_pattern = HashMap::with_capacity(faces.len());
        for (i, f) in faces.iter().enumerate() {
            if face_by_pattern.insert(f.sign.to_pattern(), i).is_some() {
                return Err(format!("duplicate face pattern at face {i}"));
            }
        }
        let complex = Self {
            bbox: file.bbox,
            hidden_count: file.hidden_count,
            vertices,
            edges,
            faces,
            face_by_pattern,
            jitter_seed: file.jitter_seed,
        };
        complex.validate()?;
        Ok(complex)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &self.to_file())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ComplexFile = read_json(path)?;
        Self::from_file(file).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            message,
        })
    }
}

/// On-disk form of a [`CellComplex2D`]; sign vectors are strings over `-0+`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexFile {
    pub bbox: BoundingBox2D,
    pub hidden_count: usize,
    pub jitter_seed: Option<u64>,
    pub vertices: Vec<VertexRecord>,
    pub edges: Vec<EdgeRecord>,
    pub faces: Vec<FaceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexRecord {
    pub x: f64,
    pub y: f64,
    pub sign: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub v: [usize; 2],
    pub sign: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceRecord {
    pub vertices: Vec<usize>,
    pub edges: Vec<usize>,
    pub sign: String,
}

/// `epoch,f0,f1,f2` rows.
pub fn f_vector_csv(rows: &[(usize, FVector)]) -> String {
    let mut out = String::from("epoch,f0,f1,f2\n");
    for (epoch, f) in rows {
        writeln!(out, "{epoch},{},{},{}", f.f0, f.f1, f.f2).unwrap();
    }
    out
}

pub fn save_f_vector_csv(path: &Path, rows: &[(usize, FVector)]) -> Result<()> {
    write_atomic(path, f_vector_csv(rows).as_bytes())
}

pub fn signed_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        / 2.0
}

fn convex_contains(poly: &[[f64; 2]], p: [f64; 2], eps: f64) -> bool {
    let n = poly.len();
    (0..n).all(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        cross >= -eps * len.max(1e-300)
    })
}

struct FaceCycle {
    verts: Vec<usize>,
    edges: Vec<usize>,
}

/// Mutable complex under construction.
struct Builder {
    pos: Vec<[f64; 2]>,
    vsign: Vec<Vec<i8>>,
    /// Preactivations of the layer being processed, per vertex.
    vals: Vec<Vec<f64>>,
    edges: Vec<[usize; 2]>,
    esign: Vec<Vec<i8>>,
    faces: Vec<FaceCycle>,
    fsign: Vec<Vec<i8>>,
}

impl Builder {
    fn new(b: &BoundingBox2D) -> Self {
        let pos = vec![
            [b.x_min, b.y_min],
            [b.x_max, b.y_min],
            [b.x_max, b.y_max],
            [b.x_min, b.y_max],
        ];
        Self {
            pos,
            vsign: vec![Vec::new(); 4],
            vals: vec![Vec::new(); 4],
            edges: vec![[0, 1], [1, 2], [2, 3], [3, 0]],
            esign: vec![Vec::new(); 4],
            faces: vec![FaceCycle {
                verts: vec![0, 1, 2, 3],
                edges: vec![0, 1, 2, 3],
            }],
            fsign: vec![Vec::new()],
        }
    }

    /// Cuts every cell by the zero set of hidden neuron `j` of the current layer.
    fn split_neuron(&mut self, j: usize, tol: f64) -> std::result::Result<(), String> {
        let classify = |g: f64| -> i8 {
            if g > tol {
                1
            } else if g < -tol {
                -1
            } else {
                0
            }
        };
        let g: Vec<f64> = self.vals.iter().map(|v| v[j]).collect();
        let mut cls: Vec<i8> = g.iter().map(|&v| classify(v)).collect();

        let ne = self.edges.len();
        let mut split: Vec<Option<(usize, usize)>> = vec![None; ne];
        for (e, slot) in split.iter_mut().enumerate() {
            let [a, b] = self.edges[e];
            if cls[a] * cls[b] != -1 {
                continue;
            }
            let t = g[a] / (g[a] - g[b]);
            let (pa, pb) = (self.pos[a], self.pos[b]);
            let p = [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])];
            let mut vals: Vec<f64> = self.vals[a]
                .iter()
                .zip(&self.vals[b])
                .map(|(&x, &y)| x + t * (y - x))
                .collect();
            vals[j] = 0.0;
            let m = self.pos.len();
            self.pos.push(p);
            self.vsign.push(self.esign[e].clone());
            self.vals.push(vals);
            cls.push(0);
            let e2 = self.edges.len();
            self.edges[e] = [a, m];
            self.edges.push([m, b]);
            self.esign.push(self.esign[e].clone());
            *slot = Some((m, e2));
        }

        let nf = self.faces.len();
        let mut face_cls: Vec<i8> = Vec::with_capacity(nf);
        let mut appended_cls: Vec<i8> = Vec::new();
        for f in 0..nf {
            let mut face = std::mem::replace(
                &mut self.faces[f],
                FaceCycle {
                    verts: Vec::new(),
                    edges: Vec::new(),
                },
            );
            if face.edges.iter().any(|&e| split.get(e).is_some_and(|s| s.is_some())) {
                let n = face.verts.len();
                let mut verts = Vec::with_capacity(n + 2);
                let mut edges = Vec::with_capacity(n + 2);
                for i in 0..n {
                    let (v, e) = (face.verts[i], face.edges[i]);
                    verts.push(v);
                    match split.get(e).copied().flatten() {
                        None => edges.push(e),
                        Some((m, e2)) => {
                            if self.edges[e][0] == v {
                                edges.extend([e, e2]);
                            } else {
                                edges.extend([e2, e]);
                            }
                            verts.push(m);
                        }
                    }
                }
                face = FaceCycle { verts, edges };
            }

            let n = face.verts.len();
            let zeros: Vec<usize> = (0..n).filter(|&i| cls[face.verts[i]] == 0).collect();
            let has_pos = face.verts.iter().any(|&v| cls[v] == 1);
            let has_neg = face.verts.iter().any(|&v| cls[v] == -1);
            if !(has_pos && has_neg) {
                face_cls.push(if has_pos { 1 } else { -1 });
                self.faces[f] = face;
                continue;
            }
            if zeros.len() != 2 {
                return Err(format!(
                    "face {f} crossed by neuron {j} has {} zero vertices",
                    zeros.len()
                ));
            }
            let (p, q) = (zeros[0], zeros[1]);
            if q == p + 1 || (p == 0 && q == n - 1) {
                return Err(format!("face {f} has adjacent zero vertices but is crossed"));
            }
            let cut = self.edges.len();
            self.edges.push([face.verts[p], face.verts[q]]);
            self.esign.push(self.fsign[f].clone());

            let a_verts = face.verts[p..=q].to_vec();
            let mut a_edges = face.edges[p..q].to_vec();
            a_edges.push(cut);
            let mut b_verts = face.verts[q..].to_vec();
            b_verts.extend_from_slice(&face.verts[..=p]);
            let mut b_edges = face.edges[q..].to_vec();
            b_edges.extend_from_slice(&face.edges[..p]);
            b_edges.push(cut);

            let side = |vs: &[usize]| -> std::result::Result<i8, String> {
                let pos = vs.iter().any(|&v| cls[v] == 1);
                let neg = vs.iter().any(|&v| cls[v] == -1);
                match (pos, neg) {
                    (true, false) => Ok(1),
                    (false, true) => Ok(-1),
                    _ => Err(format!("face {f} split by neuron {j} is not separated")),
                }
            };
            let (sa, sb) = (side(&a_verts)?, side(&b_verts)?);
            if sa == sb {
                return Err(format!("face {f} split into two faces of one sign"));
            }
            self.faces[f] = FaceCycle {
                verts: a_verts,
                edges: a_edges,
            };
            face_cls.push(sa);
            self.faces.push(FaceCycle {
                verts: b_verts,
                edges: b_edges,
            });
            self.fsign.push(self.fsign[f].clone());
            appended_cls.push(sb);
        }
        for (f, s) in face_cls.into_iter().chain(appended_cls).enumerate() {
            self.fsign[f].push(s);
        }

        for (e, &[a, b]) in self.edges.iter().enumerate() {
            let s = match (cls[a], cls[b]) {
                (1, -1) | (-1, 1) => return Err(format!("edge {e} still crosses neuron {j}")),
                (1, _) | (_, 1) => 1,
                (-1, _) | (_, -1) => -1,
                _ => 0,
            };
            self.esign[e].push(s);
        }
        for (v, s) in self.vsign.iter_mut().zip(&cls) {
            v.push(*s);
        }
        Ok(())
    }

    fn finish(self, bbox: BoundingBox2D, hidden_count: usize) -> std::result::Result<CellComplex2D, String> {
        let vertices: Vec<Vertex> = self
            .pos
            .into_iter()
            .zip(self.vsign)
            .map(|(pos, s)| Vertex {
                pos,
                sign: SignVector::new(s),
            })
            .collect();
        let edges: Vec<Edge> = self
            .edges
            .into_iter()
            .zip(self.esign)
            .map(|(endpoints, s)| Edge {
                endpoints,
                sign: SignVector::new(s),
            })
            .collect();
        let faces: Vec<Face> = self
            .faces
            .into_iter()
            .zip(self.fsign)
            .map(|(c, s)| Face {
                vertices: c.verts,
                edges: c.edges,
                sign: SignVector::new(s),
            })
            .collect();
        let mut face_by_pattern = HashMap::with_capacity(faces.len());
        for (i, f) in faces.iter().enumerate() {
            if let Some(prev) = face_by_pattern.insert(f.sign.to_pattern(), i) {
                return Err(format!("faces {prev} and {i} share sign vector {}", f.sign));
            }
        }
        Ok(CellComplex2D {
            bbox,
            hidden_count,
            vertices,
            edges,
            faces,
            face_by_pattern,
            jitter_seed: None,
        })
    }
}

fn decompose_once(net: &ReluNetwork, bbox: &BoundingBox2D, tol: f64) -> std::result::Result<CellComplex2D, String> {
    let mut b = Builder::new(bbox);
    let mut input: Vec<Vec<f64>> = b.pos.iter().map(|p| p.to_vec()).collect();
    let mut base = 0;
    let mut scratch = Vec::new();
    for layer in net.hidden_layers() {
        for (v, x) in input.iter().enumerate() {
            layer.apply_into(x, &mut scratch);
            b.vals[v].clone_from(&scratch);
        }
        for j in 0..layer.outputs() {
            b.split_neuron(j, tol)?;
        }
        // Next layer input: ReLU decided by the recorded signs.
        input = b
            .vals
            .iter()
            .zip(&b.vsign)
            .map(|(vals, s)| {
                vals.iter()
                    .enumerate()
                    .map(|(k, &z)| if s[base + k] > 0 { z } else { 0.0 })
                    .collect()
            })
            .collect();
        base += layer.outputs();
    }
    let out = b.finish(*bbox, net.hidden_count())?;
    // Split faces must be counterclockwise sub-polygons of convex faces.
    for f in 0..out.faces.len() {
        if out.face_area(f) <= 0.0 {
            return Err(format!("face {f} has non-positive area"));
        }
    }
    Ok(out)
}

/// Seed of the `attempt`-th bias jitter.
pub fn jitter_seed(attempt: u32) -> u64 {
    0x9e37_79b9_7f4a_7c15u64.wrapping_mul(u64::from(attempt) + 1)
}

/// Decomposes `bbox` into the cells of `net`'s activation regions.
///
/// A degenerate configuration (a face meeting a neuron's zero set in other
/// than two boundary points, or two faces with one pattern) triggers a
/// retry with hidden biases jittered by `±JITTER_AMPLITUDE`; the seed used is
/// stored in [`CellComplex2D::jitter_seed`].
pub fn decompose(net: &ReluNetwork, bbox: &BoundingBox2D, tol: f64) -> Result<CellComplex2D> {
    if net.input_dim() != 2 {
        return Err(Error::DimensionMismatch {
            context: "decomposition input dimension",
            expected: 2,
            got: net.input_dim(),
        });
    }
    bbox.validate()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {tol}")));
    }
    let mut reason = match decompose_once(net, bbox, tol) {
        Ok(c) => return Ok(c),
        Err(r) => r,
    };
    for attempt in 1..=MAX_RETRIES {
        log::warn!("degenerate decomposition ({reason}); retrying with bias jitter, attempt {attempt}");
        let seed = jitter_seed(attempt);
        let jittered = net.with_bias_jitter(JITTER_AMPLITUDE, seed);
        match decompose_once(&jittered, bbox, tol) {
            Ok(mut c) => {
                c.jitter_seed = Some(seed);
                return Ok(c);
            }
            Err(r) => reason = r,
        }
    }
    Err(Error::Degenerate {
        attempts: MAX_RETRIES + 1,
        reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_network, ArchitectureSpec, DenseLayer};

    fn unit_box() -> BoundingBox2D {
        BoundingBox2D::new(-1.0, 1.0, -1.0, 1.0).unwrap()
    }

    fn one_hidden(weights: Vec<f64>, biases: Vec<f64>) -> ReluNetwork {
        let h = biases.len();
        ReluNetwork::new(vec![
            DenseLayer::new(h, 2, weights, biases).unwrap(),
            DenseLayer::new(1, h, vec![1.0; h], vec![0.0]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn no_crossing_lines_leaves_the_box() {
        let net = one_hidden(vec![0.0; 6], vec![0.5, -0.5, 2.0]);
        let c = decompose(&net, &unit_box(), DEFAULT_TOL).unwrap();
        assert_eq!(c.f_vector(), FVector { f0: 4, f1: 4, f2: 1 });
        assert_eq!(c.faces[0].sign.to_string(), "+-+");
        assert_eq!(c.edges[0].sign.to_string(), "+-+");
        c.validate().unwrap();
    }

    #[test]
    fn single_line_gives_6_7_2() {
        // x + 0.3 y - 0.1 = 0 crosses the top and bottom sides.
        let net = one_hidden(vec![1.0, 0.3], vec![-0.1]);
        let c = decompose(&net, &unit_box(), DEFAULT_TOL).unwrap();
        assert_eq!(c.f_vector(), FVector { f0: 6, f1: 7, f2: 2 });
        c.validate().unwrap();
        let zero_edges: Vec<_> = c.edges.iter().filter(|e| e.sign.zero_count() == 1).collect();
        assert_eq!(zero_edges.len(), 1);
        let patterns: Vec<String> = c.faces.iter().map(|f| f.sign.to_string()).collect();
        assert!(patterns.contains(&"+".to_string()) && patterns.contains(&"-".to_string()));
    }

    #[test]
    fn line_through_corner_is_handled() {
        // x + y = 0 passes exactly through (−1, 1) and (1, −1).
        let net = one_hidden(vec![1.0, 1.0], vec![0.0]);
        let c = decompose(&net, &unit_box(), DEFAULT_TOL).unwrap();
        assert_eq!(c.f_vector(), FVector { f0: 4, f1: 5, f2: 2 });
        c.validate().unwrap();
    }

    #[test]
    fn two_crossing_lines() {
        let net = one_hidden(vec![1.0, 0.1, 0.2, 1.0], vec![0.05, -0.1]);
        let c = decompose(&net, &unit_box(), DEFAULT_TOL).unwrap();
        // 4 corners + 4 boundary hits + 1 crossing.
        assert_eq!(c.f_vector(), FVector { f0: 9, f1: 12, f2: 4 });
        c.validate().unwrap();
        let inner = (0..c.vertices.len()).find(|&v| !c.is_boundary_vertex(v)).unwrap();
        assert_eq!(c.vertices[inner].sign.zero_count(), 2);
        assert_eq!(c.vertex_degrees()[inner], 4);
    }

    #[test]
    fn deeper_network_complex_is_valid() {
        for seed in 0..10 {
            let net = init_network(&ArchitectureSpec::new(vec![2, 5, 4, 3, 1]).unwrap(), seed);
            let c = decompose(&net, &unit_box(), DEFAULT_TOL).unwrap();
            c.validate().unwrap();
            for f in 0..c.faces.len() {
                let p = c.face_centroid(f);
                let pat = net.binary_state_vector(&p).unwrap();
                assert_eq!(pat, c.faces[f].sign.to_pattern(), "seed {seed} face {f}");
            }
        }
    }

    #[test]
    fn locate_resolves_boundary_points_to_zero_bit_side() {
        let net = one_hidden(vec![1.0, 0.0], vec![0.0]);
        let c = decompose(&net, &unit_box(), DEFAULT_TOL).unwrap();
        let on_line = c.locate(&net, [0.0, 0.3]).unwrap();
        assert_eq!(c.faces[on_line].sign.to_string(), "-");
        let right = c.locate(&net, [0.5, 0.3]).unwrap();
        assert_eq!(c.faces[right].sign.to_string(), "+");
    }

    #[test]
    fn locate_on_box_only_complex() {
        let net = one_hidden(vec![0.0; 2], vec![1.0]);
        let c = decompose(&net, &unit_box(), DEFAULT_TOL).unwrap();
        for p in [[0.0, 0.0], [0.9, -0.9], [-1.0, 1.0]] {
            assert_eq!(c.locate(&net, p).unwrap(), 0);
        }
    }

    #[test]
    fn counts_skip_points_outside_the_box() {
        let net = one_hidden(vec![1.0, 0.3], vec![-0.1]);
        let c = decompose(&net, &unit_box(), DEFAULT_TOL).unwrap();
        assert_eq!(c.count_points_per_face(&net, &[]).unwrap(), vec![0, 0]);
        let pts = [[0.8, 0.0], [0.9, 0.1], [5.0, 5.0], [0.7, -0.2]];
        let counts = c.count_points_per_face(&net, &pts).unwrap();
        assert_eq!(counts.iter().sum::<usize>(), 3);
        assert!(counts.contains(&3));
    }

    #[test]
    fn rejects_wrong_input_dimension_and_bad_box() {
        let net = init_network(&ArchitectureSpec::new(vec![3, 4, 1]).unwrap(), 0);
        assert!(decompose(&net, &unit_box(), DEFAULT_TOL).is_err());
        assert!(BoundingBox2D::new(1.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn file_round_trip_preserves_everything() {
        let net = init_network(&ArchitectureSpec::new(vec![2, 6, 6, 2]).unwrap(), 5);
        let c = decompose(&net, &unit_box(), DEFAULT_TOL).unwrap();
        let json = serde_json::to_string(&c.to_file()).unwrap();
        let back = CellComplex2D::from_file(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn inflation_grows_symmetrically() {
        let b = BoundingBox2D::new(0.0, 10.0, -1.0, 1.0).unwrap().inflated(0.2);
        assert_eq!((b.x_min, b.x_max), (-1.0, 11.0));
        assert!((b.y_min + 1.2).abs() < 1e-15 && (b.y_max - 1.2).abs() < 1e-15);
    }
}
