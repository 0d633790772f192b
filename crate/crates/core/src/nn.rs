//! Feedforward ReLU networks: evaluation, activation patterns and the exact
//! affine map of each linear region.
//!
//! Hidden layers apply a coordinate-wise ReLU, the final layer is affine.
//! Neurons are indexed layer-major: all neurons of hidden layer 1, then all of
//! hidden layer 2, and so on. That index is shared by [`ActivationPattern`],
//! [`SignVector`] and every downstream consumer that keys regions by pattern.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Layer widths `(h_0, h_1, ..., h_L, h_{L+1})`, input first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArchitectureSpec {
    widths: Vec<usize>,
}

impl ArchitectureSpec {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 3 {
            return Err(Error::InvalidArchitecture(format!(
                "need at least input, one hidden and output width, got {widths:?}"
            )));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidArchitecture(format!(
                "all widths must be positive, got {widths:?}"
            )));
        }
        Ok(Self { widths })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn hidden_widths(&self) -> &[usize] {
        &self.widths[1..self.widths.len() - 1]
    }

    /// Total number of hidden neurons.
    pub fn hidden_count(&self) -> usize {
        self.hidden_widths().iter().sum()
    }
}

impl fmt::Display for ArchitectureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Affine layer `x -> W x + b` with `W` stored row-major (`outputs x inputs`).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    inputs: usize,
    outputs: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(outputs: usize, inputs: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != outputs * inputs {
            return Err(Error::DimensionMismatch {
                context: "layer weight",
                expected: outputs * inputs,
                got: weight.len(),
            });
        }
        if bias.len() != outputs {
            return Err(Error::DimensionMismatch {
                context: "layer bias",
                expected: outputs,
                got: bias.len(),
            });
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer parameters".into()));
        }
        Ok(Self {
            inputs,
            outputs,
            weight,
            bias,
        })
    }

    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; outputs * inputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub(crate) fn weight_mut(&mut self) -> &mut [f64] {
        &mut self.weight
    }

    pub(crate) fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weight[i * self.inputs..(i + 1) * self.inputs]
    }

    #[inline]
    pub fn w(&self, i: usize, j: usize) -> f64 {
        self.weight[i * self.inputs + j]
    }

    /// `out = W x + b`.
    pub fn apply_into(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.inputs);
        out.clear();
        out.extend((0..self.outputs).map(|i| dot(self.row(i), x) + self.bias[i]));
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.outputs);
        self.apply_into(x, &mut out);
        out
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Stacked 0/1 neuron states, layer-major. Bit `k` is 1 iff the preactivation of
/// hidden neuron `k` is strictly positive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActivationPattern(Vec<bool>);

impl ActivationPattern {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn hamming(&self, other: &Self) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }

    pub fn parse(s: &str) -> Option<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Some(false),
                '1' => Some(true),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .map(Self)
    }
}

impl fmt::Display for ActivationPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Per-neuron sign of the preactivation on a cell: −1, 0 or +1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct SignVector(Vec<i8>);

impl SignVector {
    pub fn new(signs: Vec<i8>) -> Self {
        debug_assert!(signs.iter().all(|s| (-1..=1).contains(s)));
        Self(signs)
    }

    pub fn signs(&self) -> &[i8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, s: i8) {
        self.0.push(s);
    }

    pub fn zero_count(&self) -> usize {
        self.0.iter().filter(|&&s| s == 0).count()
    }

    /// Pattern under the −1/0 → 0, +1 → 1 map.
    pub fn to_pattern(&self) -> ActivationPattern {
        ActivationPattern(self.0.iter().map(|&s| s > 0).collect())
    }

    pub fn parse(s: &str) -> Option<Self> {
        s.chars()
            .map(|c| match c {
                '-' => Some(-1),
                '0' => Some(0),
                '+' => Some(1),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .map(Self)
    }
}

impl fmt::Display for SignVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &s in &self.0 {
            f.write_str(match s {
                -1 => "-",
                0 => "0",
                _ => "+",
            })?;
        }
        Ok(())
    }
}

/// `x -> A x + c`, the network restricted to one linear region.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineRegionMap {
    rows: usize,
    cols: usize,
    /// Row-major `rows x cols`.
    matrix: Vec<f64>,
    offset: Vec<f64>,
}

impl AffineRegionMap {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.cols + j]
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| dot(&self.matrix[i * self.cols..(i + 1) * self.cols], x) + self.offset[i])
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub output: Vec<f64>,
    /// One vector per hidden layer.
    pub preactivations: Vec<Vec<f64>>,
    pub pattern: ActivationPattern,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReluNetwork {
    layers: Vec<DenseLayer>,
}

impl ReluNetwork {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::InvalidArchitecture(
                "need at least one hidden layer and an output layer".into(),
            ));
        }
        for pair in layers.windows(2) {
            if pair[1].inputs != pair[0].outputs {
                return Err(Error::DimensionMismatch {
                    context: "consecutive layers",
                    expected: pair[0].outputs,
                    got: pair[1].inputs,
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn architecture(&self) -> ArchitectureSpec {
        let mut widths = vec![self.layers[0].inputs];
        widths.extend(self.layers.iter().map(|l| l.outputs));
        ArchitectureSpec { widths }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn hidden_layers(&self) -> &[DenseLayer] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn output_layer(&self) -> &DenseLayer {
        self.layers.last().unwrap()
    }

    pub fn hidden_count(&self) -> usize {
        self.hidden_layers().iter().map(|l| l.outputs).sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardPass> {
        self.check_input(x)?;
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut bits = Vec::with_capacity(self.hidden_count());
        let mut act = x.to_vec();
        for layer in self.hidden_layers() {
            let z = layer.apply(&act);
            bits.extend(z.iter().map(|&v| v > 0.0));
            act = z.iter().map(|&v| v.max(0.0)).collect();
            pre.push(z);
        }
        let output = self.output_layer().apply(&act);
        Ok(ForwardPass {
            output,
            preactivations: pre,
            pattern: ActivationPattern(bits),
        })
    }

    /// Output only; skips building the pattern.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut act = x.to_vec();
        let mut z = Vec::new();
        for layer in self.hidden_layers() {
            layer.apply_into(&act, &mut z);
            act.clear();
            act.extend(z.iter().map(|&v| v.max(0.0)));
        }
        Ok(self.output_layer().apply(&act))
    }

    pub fn binary_state_vector(&self, x: &[f64]) -> Result<ActivationPattern> {
        Ok(self.forward(x)?.pattern)
    }

    /// Hidden preactivations flattened layer-major.
    pub fn flat_preactivations(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.preactivations.concat())
    }

    /// The affine map `W_{L+1} D_L (W_L ... D_1 (W_1 x + b_1) ...) + b_{L+1}` for a
    /// fixed pattern, where `D_i` masks layer `i` by the pattern bits.
    pub fn input_jacobian(&self, pattern: &ActivationPattern) -> Result<AffineRegionMap> {
        if pattern.len() != self.hidden_count() {
            return Err(Error::DimensionMismatch {
                context: "activation pattern",
                expected: self.hidden_count(),
                got: pattern.len(),
            });
        }
        let m = self.input_dim();
        // Running map rows x m plus offset, starting from the identity.
        let mut mat: Vec<f64> = (0..m * m)
            .map(|k| if k / m == k % m { 1.0 } else { 0.0 })
            .collect();
        let mut off = vec![0.0; m];
        let mut rows = m;
        let mut bit = 0;
        let n_layers = self.layers.len();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.outputs * m];
            let mut next_off = vec![0.0; layer.outputs];
            let hidden = li + 1 < n_layers;
            for i in 0..layer.outputs {
                let on = !hidden || pattern.0[bit + i];
                if !on {
                    continue;
                }
                let row = layer.row(i);
                for (k, &w) in row.iter().enumerate().take(rows) {
                    if w == 0.0 {
                        continue;
                    }
                    for j in 0..m {
                        next[i * m + j] += w * mat[k * m + j];
                    }
                    next_off[i] += w * off[k];
                }
                next_off[i] += layer.bias[i];
            }
            if hidden {
                bit += layer.outputs;
            }
            mat = next;
            off = next_off;
            rows = layer.outputs;
        }
        Ok(AffineRegionMap {
            rows,
            cols: m,
            matrix: mat,
            offset: off,
        })
    }

    /// Copy with every hidden-layer bias shifted by uniform(−amplitude, amplitude).
    pub fn with_bias_jitter(&self, amplitude: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        let n = out.layers.len();
        for layer in &mut out.layers[..n - 1] {
            for b in &mut layer.bias {
                *b += rng.random_range(-amplitude..amplitude);
            }
        }
        out
    }
}

/// Kaiming-uniform weights `U(±sqrt(6 / fan_in))`, biases `U(±0.01)`.
pub fn init_network(spec: &ArchitectureSpec, seed: u64) -> ReluNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = spec
        .widths
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let weight = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let bias = (0..fan_out).map(|_| rng.random_range(-0.01..0.01)).collect();
            DenseLayer {
                inputs: fan_in,
                outputs: fan_out,
                weight,
                bias,
            }
        })
        .collect();
    ReluNetwork { layers }
}

/// Serialized network snapshot taken during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub widths: Vec<usize>,
    /// Row-major weight matrix per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub epoch: usize,
    pub seed: u64,
    pub loss: f64,
}

impl Checkpoint {
    pub fn from_network(net: &ReluNetwork, epoch: usize, seed: u64, loss: f64) -> Self {
        Self {
            widths: net.architecture().widths,
            weights: net.layers.iter().map(|l| l.weight.clone()).collect(),
            biases: net.layers.iter().map(|l| l.bias.clone()).collect(),
            epoch,
            seed,
            loss,
        }
    }

    pub fn network(&self) -> Result<ReluNetwork> {
        let spec = ArchitectureSpec::new(self.widths.clone())?;
        if self.weights.len() != spec.widths.len() - 1 || self.biases.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                context: "checkpoint layer count",
                expected: spec.widths.len() - 1,
                got: self.weights.len(),
            });
        }
        let layers = spec
            .widths
            .windows(2)
            .zip(self.weights.iter().zip(&self.biases))
            .map(|(w, (wt, b))| DenseLayer::new(w[1], w[0], wt.clone(), b.clone()))
            .collect::<Result<Vec<_>>>()?;
        ReluNetwork::new(layers)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}
