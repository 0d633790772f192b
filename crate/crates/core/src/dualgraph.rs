//! Dual graph of a decomposition and its (vertex-weighted) Fiedler partition.
//!
//! Nodes are faces; two nodes are joined when their activation patterns differ
//! in exactly one bit. The weighted Laplacian `W_V⁻¹ ∂ᵀ W_E ∂` is handled through
//! the symmetric similarity `S = W_V^{-1/2} ∂ᵀ W_E ∂ W_V^{-1/2}`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::eigen::{jacobi_eigen, SymMatrix};
use crate::error::{Error, Result};
use crate::nn::{ActivationPattern, ReluNetwork};
use crate::polydecomp::CellComplex2D;
use crate::unionfind::UnionFind;

/// Eigenvalues at or below this are treated as part of the kernel.
pub const KERNEL_TOL: f64 = 1e-10;
/// Fiedler entries smaller than this in magnitude count as zero.
pub const ZERO_ENTRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DualNode {
    pub face: usize,
    pub pattern: ActivationPattern,
}

pub type DualEdge = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct DualGraph {
    pub nodes: Vec<DualNode>,
    /// `(tail, head)` with `tail < head`, sorted.
    pub edges: Vec<(usize, usize)>,
}

/// Edge-by-node incidence: row `i` has −1 at the tail and +1 at the head of edge `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoboundaryMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<Vec<i8>>,
}

pub fn build_dual_graph(complex: &CellComplex2D) -> DualGraph {
    let nodes: Vec<DualNode> = complex
        .faces
        .iter()
        .enumerate()
        .map(|(i, f)| DualNode {
            face: i,
            pattern: f.sign.to_pattern(),
        })
        .collect();
    let mut edges = Vec::new();
    for (i, node) in nodes.iter().enumerate() {
        let mut bits = node.pattern.bits().to_vec();
        for k in 0..bits.len() {
            bits[k] = !bits[k];
            if let Some(&j) = complex.face_by_pattern.get(&ActivationPattern::new(bits.clone())) {
                if j > i {
                    edges.push((i, j));
                }
            }
            bits[k] = !bits[k];
        }
    }
    edges.sort_unstable();
    edges.dedup();
    DualGraph { nodes, edges }
}

impl DualGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn coboundary(&self) -> CoboundaryMatrix {
        let n = self.nodes.len();
        let entries = self
            .edges
            .iter()
            .map(|&(t, h)| {
                let mut row = vec![0i8; n];
                row[t] = -1;
                row[h] = 1;
                row
            })
            .collect();
        CoboundaryMatrix {
            rows: self.edges.len(),
            cols: n,
            entries,
        }
    }

    pub fn component_count(&self) -> usize {
        let mut uf = UnionFind::new(self.nodes.len());
        for &(a, b) in &self.edges {
            uf.union(a, b);
        }
        uf.components()
    }

    /// Pairs of faces sharing an interior edge of the complex.
    pub fn geometric_adjacency(complex: &CellComplex2D) -> BTreeSet<(usize, usize)> {
        complex
            .edge_faces()
            .into_iter()
            .filter(|f| f.len() == 2)
            .map(|f| (f[0].min(f[1]), f[0].max(f[1])))
            .collect()
    }

    /// Hamming-1 pairs that are not geometrically adjacent, and the reverse.
    pub fn adjacency_discrepancies(
        &self,
        complex: &CellComplex2D,
    ) -> (Vec<DualEdge>, Vec<DualEdge>) {
        let geo = Self::geometric_adjacency(complex);
        let ham: BTreeSet<(usize, usize)> = self.edges.iter().copied().collect();
        (
            ham.difference(&geo).copied().collect(),
            geo.difference(&ham).copied().collect(),
        )
    }

    /// `tail,head,tail_pattern,head_pattern` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tail,head,tail_pattern,head_pattern\n");
        for &(t, h) in &self.edges {
            writeln!(out, "{t},{h},{},{}", self.nodes[t].pattern, self.nodes[h].pattern).unwrap();
        }
        out
    }
}

/// `∂ᵀ W_E ∂` for the given edge weights.
fn weighted_edge_laplacian(g: &DualGraph, edge_weights: &[f64]) -> SymMatrix {
    let d = g.coboundary();
    let mut l = SymMatrix::zeros(d.cols);
    for (row, &w) in d.entries.iter().zip(edge_weights) {
        let nz: Vec<(usize, f64)> = row
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(j, &v)| (j, f64::from(v)))
            .collect();
        for &(i, a) in &nz {
            for &(j, b) in &nz {
                l.add(i, j, w * a * b);
            }
        }
    }
    l
}

/// The unweighted Laplacian `∂ᵀ ∂`.
pub fn laplacian(g: &DualGraph) -> Result<SymMatrix> {
    if g.nodes.is_empty() {
        return Err(Error::InvalidParameter("empty dual graph".into()));
    }
    Ok(weighted_edge_laplacian(g, &vec![1.0; g.edges.len()]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedLaplacianSpec {
    pub vertex_weights: Vec<f64>,
    pub edge_weights: Vec<f64>,
}

impl WeightedLaplacianSpec {
    pub fn unweighted(g: &DualGraph) -> Self {
        Self {
            vertex_weights: vec![1.0; g.nodes.len()],
            edge_weights: vec![1.0; g.edges.len()],
        }
    }

    fn validate(&self, g: &DualGraph) -> Result<()> {
        if self.vertex_weights.len() != g.nodes.len() {
            return Err(Error::DimensionMismatch {
                context: "vertex weights",
                expected: g.nodes.len(),
                got: self.vertex_weights.len(),
            });
        }
        if self.edge_weights.len() != g.edges.len() {
            return Err(Error::DimensionMismatch {
                context: "edge weights",
                expected: g.edges.len(),
                got: self.edge_weights.len(),
            });
        }
        if self
            .vertex_weights
            .iter()
            .chain(&self.edge_weights)
            .any(|&w| !(w > 0.0 && w.is_finite()))
        {
            return Err(Error::InvalidParameter("graph weights must be positive".into()));
        }
        Ok(())
    }
}

/// `W_V(i, i) = 1 + #training points in face i`, `W_E = I`.
pub fn vertex_weights_from_data(
    complex: &CellComplex2D,
    net: &ReluNetwork,
    train_points: &[[f64; 2]],
) -> Result<WeightedLaplacianSpec> {
    let counts = complex.count_points_per_face(net, train_points)?;
    let g_edges = build_dual_graph(complex).edges.len();
    Ok(WeightedLaplacianSpec {
        vertex_weights: counts.iter().map(|&c| 1.0 + c as f64).collect(),
        edge_weights: vec![1.0; g_edges],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiedlerPair {
    pub value: f64,
    /// `W_V^{-1/2} u` for the unit eigenvector `u` of `S`, first nonzero entry positive.
    pub vector: Vec<f64>,
    pub components: usize,
    /// Eigenvalues of `S` at or below [`KERNEL_TOL`].
    pub kernel_dim: usize,
}

/// Smallest eigenpair of `∂ᵀ W_E ∂ v = λ W_V v` with `λ > KERNEL_TOL`.
pub fn fiedler(g: &DualGraph, spec: &WeightedLaplacianSpec) -> Result<FiedlerPair> {
    spec.validate(g)?;
    let n = g.nodes.len();
    if n < 2 {
        return Err(Error::Spectral(format!("graph with {n} node(s) has no Fiedler pair")));
    }
    let components = g.component_count();
    if components > 1 {
        log::warn!("dual graph has {components} connected components");
    }
    let l = weighted_edge_laplacian(g, &spec.edge_weights);
    let inv_sqrt: Vec<f64> = spec.vertex_weights.iter().map(|w| 1.0 / w.sqrt()).collect();
    let mut s = SymMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            s.set(i, j, inv_sqrt[i] * l.get(i, j) * inv_sqrt[j]);
        }
    }
    let eig = jacobi_eigen(&s);
    let kernel_dim = eig.values.iter().filter(|&&v| v <= KERNEL_TOL).count();
    let k = eig
        .values
        .iter()
        .position(|&v| v > KERNEL_TOL)
        .ok_or_else(|| Error::Spectral("no eigenvalue above the kernel threshold".into()))?;
    let mut vector: Vec<f64> = eig.vectors[k]
        .iter()
        .zip(&inv_sqrt)
        .map(|(u, s)| u * s)
        .collect();
    if let Some(first) = vector.iter().find(|v| v.abs() >= ZERO_ENTRY_TOL) {
        if *first < 0.0 {
            vector.iter_mut().for_each(|v| *v = -*v);
        }
    }
    Ok(FiedlerPair {
        value: eig.values[k],
        vector,
        components,
        kernel_dim,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub fiedler_value: f64,
    pub fiedler_vector: Vec<f64>,
    /// +1/−1 per node after orientation (zero entries count as +1).
    pub signs: Vec<i8>,
    /// Whether the vector was negated to reach the canonical orientation.
    pub flipped: bool,
    pub misclassified_fraction: f64,
    pub l2_error: f64,
    /// Nodes whose face holds at least one labeled point.
    pub restricted_nodes: Vec<usize>,
    pub average_labels: Vec<f64>,
    pub predicted: Vec<u8>,
    pub zero_entries: usize,
    pub components: usize,
}

fn predict(v: f64, orientation: f64) -> u8 {
    if v.abs() < ZERO_ENTRY_TOL {
        1
    } else {
        u8::from(orientation * v > 0.0)
    }
}

/// Scores the sign partition of `vector` against per-face average labels.
///
/// Both global signs are tried; the one with fewer misclassified restricted
/// nodes wins, then the smaller L2 error, then the one whose first nonzero
/// entry is positive.
pub fn score_partition(
    g: &DualGraph,
    fiedler_value: f64,
    vector: &[f64],
    complex: &CellComplex2D,
    net: &ReluNetwork,
    points: &[[f64; 2]],
    labels: &[u8],
) -> Result<PartitionReport> {
    if vector.len() != g.nodes.len() {
        return Err(Error::DimensionMismatch {
            context: "Fiedler vector",
            expected: g.nodes.len(),
            got: vector.len(),
        });
    }
    if points.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "labels",
            expected: points.len(),
            got: labels.len(),
        });
    }
    let mut count = vec![0usize; g.nodes.len()];
    let mut label_sum = vec![0.0; g.nodes.len()];
    for (&p, &l) in points.iter().zip(labels) {
        if !complex.bbox.contains(p) {
            continue;
        }
        let f = complex.locate(net, p)?;
        count[f] += 1;
        label_sum[f] += f64::from(l);
    }
    let restricted: Vec<usize> = (0..g.nodes.len()).filter(|&i| count[i] > 0).collect();
    if restricted.is_empty() {
        return Err(Error::InvalidParameter(
            "no dual-graph node contains a labeled point".into(),
        ));
    }
    let avg: Vec<f64> = restricted.iter().map(|&i| label_sum[i] / count[i] as f64).collect();
    let evaluate = |orientation: f64| {
        let pred: Vec<u8> = restricted.iter().map(|&i| predict(vector[i], orientation)).collect();
        let wrong = avg
            .iter()
            .zip(&pred)
            .filter(|(a, &p)| (*a - f64::from(p)).abs() >= 0.5)
            .count();
        let l2 = avg
            .iter()
            .zip(&pred)
            .map(|(a, &p)| (a - f64::from(p)).powi(2))
            .sum::<f64>()
            .sqrt();
        (wrong, l2, pred)
    };
    let first_positive = vector
        .iter()
        .find(|v| v.abs() >= ZERO_ENTRY_TOL)
        .is_none_or(|v| *v > 0.0);
    let (plus, minus) = (evaluate(1.0), evaluate(-1.0));
    let prefer_minus = match plus.0.cmp(&minus.0) {
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Equal => match plus.1.total_cmp(&minus.1) {
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Equal => !first_positive,
        },
    };
    let (orientation, best) = if prefer_minus { (-1.0, minus) } else { (1.0, plus) };
    let zero_entries = vector.iter().filter(|v| v.abs() < ZERO_ENTRY_TOL).count();
    if zero_entries > 0 {
        log::info!("{zero_entries} Fiedler entries are zero; assigned to class 1");
    }
    Ok(PartitionReport {
        fiedler_value,
        fiedler_vector: vector.to_vec(),
        signs: vector
            .iter()
            .map(|&v| if predict(v, orientation) == 1 { 1 } else { -1 })
            .collect(),
        flipped: prefer_minus,
        misclassified_fraction: best.0 as f64 / restricted.len() as f64,
        l2_error: best.1,
        restricted_nodes: restricted,
        average_labels: avg,
        predicted: best.2,
        zero_entries,
        components: g.component_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{DenseLayer, ReluNetwork};
    use crate::polydecomp::{decompose, BoundingBox2D, DEFAULT_TOL};

    fn graph(n: usize, edges: &[(usize, usize)]) -> DualGraph {
        DualGraph {
            nodes: (0..n)
                .map(|i| DualNode {
                    face: i,
                    pattern: ActivationPattern::new(vec![]),
                })
                .collect(),
            edges: edges.to_vec(),
        }
    }

    #[test]
    fn small_laplacians() {
        let l = laplacian(&graph(2, &[(0, 1)])).unwrap();
        assert_eq!(l.rows(), vec![vec![1.0, -1.0], vec![-1.0, 1.0]]);
        let l = laplacian(&graph(3, &[(0, 1), (0, 2), (1, 2)])).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(l.get(i, j), if i == j { 2.0 } else { -1.0 });
            }
        }
    }

    #[test]
    fn coboundary_rows_have_one_head_and_one_tail() {
        let g = graph(4, &[(0, 1), (1, 3), (2, 3)]);
        let d = g.coboundary();
        for row in &d.entries {
            assert_eq!(row.iter().map(|&v| i32::from(v)).sum::<i32>(), 0);
            assert_eq!(row.iter().filter(|&&v| v == 1).count(), 1);
            assert_eq!(row.iter().filter(|&&v| v == -1).count(), 1);
        }
    }

    #[test]
    fn fiedler_on_paths() {
        let g = graph(2, &[(0, 1)]);
        let f = fiedler(&g, &WeightedLaplacianSpec::unweighted(&g)).unwrap();
        assert!((f.value - 2.0).abs() < 1e-12);
        assert!((f.vector[0] + f.vector[1]).abs() < 1e-12 && f.vector[0] > 0.0);

        let g = graph(3, &[(0, 1), (1, 2)]);
        let f = fiedler(&g, &WeightedLaplacianSpec::unweighted(&g)).unwrap();
        assert!((f.value - 1.0).abs() < 1e-12);
        assert!(f.vector[1].abs() < 1e-12);
        assert!((f.vector[0] + f.vector[2]).abs() < 1e-12);
        assert!(f.vector.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn fiedler_errors() {
        let g = graph(1, &[]);
        assert!(fiedler(&g, &WeightedLaplacianSpec::unweighted(&g)).is_err());
        let g = graph(3, &[]);
        assert!(matches!(
            fiedler(&g, &WeightedLaplacianSpec::unweighted(&g)),
            Err(Error::Spectral(_))
        ));
        let g = graph(2, &[(0, 1)]);
        let bad = WeightedLaplacianSpec {
            vertex_weights: vec![1.0, 0.0],
            edge_weights: vec![1.0],
        };
        assert!(fiedler(&g, &bad).is_err());
    }

    #[test]
    fn weighted_fiedler_is_generalized_orthogonal() {
        let g = graph(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)]);
        let spec = WeightedLaplacianSpec {
            vertex_weights: vec![1.0, 40.0, 3.0, 1.0, 17.0],
            edge_weights: vec![1.0; 6],
        };
        let f = fiedler(&g, &spec).unwrap();
        let ortho: f64 = f.vector.iter().zip(&spec.vertex_weights).map(|(v, w)| v * w).sum();
        assert!(ortho.abs() < 1e-8);
        let l = laplacian(&g).unwrap();
        let lv = l.mul_vec(&f.vector);
        let scale = f.vector.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for ((l, w), v) in lv.iter().zip(&spec.vertex_weights).zip(&f.vector) {
            assert!((l - f.value * w * v).abs() < 1e-8 * scale);
        }
    }

    fn one_line_setup() -> (ReluNetwork, CellComplex2D) {
        let net = ReluNetwork::new(vec![
            DenseLayer::new(1, 2, vec![1.0, 0.2], vec![0.1]).unwrap(),
            DenseLayer::new(1, 1, vec![1.0], vec![0.0]).unwrap(),
        ])
        .unwrap();
        let c = decompose(&net, &BoundingBox2D::new(-1.0, 1.0, -1.0, 1.0).unwrap(), DEFAULT_TOL).unwrap();
        (net, c)
    }

    #[test]
    fn dual_graph_of_small_complexes() {
        let (_, c) = one_line_setup();
        let g = build_dual_graph(&c);
        assert_eq!((g.node_count(), g.edges.len()), (2, 1));
        let (extra, missing) = g.adjacency_discrepancies(&c);
        assert!(extra.is_empty() && missing.is_empty());
    }

    #[test]
    fn perfect_partition_scores_zero_and_is_flip_invariant() {
        let (net, c) = one_line_setup();
        let g = build_dual_graph(&c);
        let f = fiedler(&g, &WeightedLaplacianSpec::unweighted(&g)).unwrap();
        let pts = [[0.5, 0.0], [0.6, 0.3], [-0.5, 0.0], [-0.8, -0.4]];
        let labels = [1, 1, 0, 0];
        let r = score_partition(&g, f.value, &f.vector, &c, &net, &pts, &labels).unwrap();
        assert_eq!(r.misclassified_fraction, 0.0);
        assert_eq!(r.l2_error, 0.0);
        let neg: Vec<f64> = f.vector.iter().map(|v| -v).collect();
        let r2 = score_partition(&g, f.value, &neg, &c, &net, &pts, &labels).unwrap();
        assert_eq!(r.misclassified_fraction, r2.misclassified_fraction);
        assert_eq!(r.l2_error, r2.l2_error);
        assert_eq!(r.predicted, r2.predicted);
        assert_eq!(r.signs, r2.signs);
    }

    #[test]
    fn scoring_needs_labeled_faces() {
        let (net, c) = one_line_setup();
        let g = build_dual_graph(&c);
        assert!(score_partition(&g, 1.0, &[1.0, -1.0], &c, &net, &[], &[]).is_err());
    }

    #[test]
    fn data_weights_count_points() {
        let (net, c) = one_line_setup();
        let w = vertex_weights_from_data(&c, &net, &[]).unwrap();
        assert_eq!(w.vertex_weights, vec![1.0, 1.0]);
        let pts = [[0.5, 0.0], [0.6, 0.1], [0.7, 0.2]];
        let w = vertex_weights_from_data(&c, &net, &pts).unwrap();
        let mut ws = w.vertex_weights.clone();
        ws.sort_by(f64::total_cmp);
        assert_eq!(ws, vec![1.0, 4.0]);
        assert_eq!(w.edge_weights, vec![1.0]);
    }
}
