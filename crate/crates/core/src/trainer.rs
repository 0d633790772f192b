//! Full-batch Adam training with hand-written backpropagation.
//!
//! Three objectives are supported: elementwise BCE-with-logits over one-hot
//! targets, mean squared error, and the Duffing PINN loss
//! `L = MSE(x̂, x_next) + mean(R²)` with
//! `R = ∂x̂/∂t + δ (x̂ − x)/Δt + α x̂ + β x̂³`.
//! The `∂x̂/∂t` term is propagated as a tangent through the network with the
//! ReLU masks of the primal pass, and its parameter gradient is taken with
//! those masks held fixed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{DuffingParams, LabeledDataset2D, PinnPairs};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::nn::{dot, Checkpoint, ReluNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    BceWithLogits,
    Mse,
    PinnDuffing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    pub loss_kind: LossKind,
    pub checkpoint_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamConfig,
}

fn default_lr() -> f64 {
    0.01
}

impl TrainConfig {
    pub fn new(epochs: usize, loss_kind: LossKind, checkpoint_every: usize, seed: u64) -> Self {
        Self {
            epochs,
            learning_rate: default_lr(),
            loss_kind,
            checkpoint_every,
            seed,
            adam: AdamConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be > 0".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.checkpoint_every == 0 || self.checkpoint_every > self.epochs {
            return Err(Error::InvalidParameter(format!(
                "checkpoint_every must be in 1..={}, got {}",
                self.epochs, self.checkpoint_every
            )));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.epsilon <= 0.0 {
            return Err(Error::InvalidParameter(format!("bad Adam constants {a:?}")));
        }
        Ok(())
    }

    /// Epochs at which a checkpoint is written: 0, every `checkpoint_every`, and the last.
    pub fn checkpoint_epochs(&self) -> Vec<usize> {
        let mut out: Vec<usize> = (0..=self.epochs).step_by(self.checkpoint_every).collect();
        if *out.last().unwrap() != self.epochs {
            out.push(self.epochs);
        }
        out
    }
}

/// Mean of `max(z, 0) − z y + ln(1 + e^{−|z|})` over all entries.
pub fn bce_with_logits(logits: &[f64], targets: &[f64]) -> f64 {
    debug_assert_eq!(logits.len(), targets.len());
    if logits.is_empty() {
        return 0.0;
    }
    let sum: f64 = logits
        .iter()
        .zip(targets)
        .map(|(&z, &y)| bce_term(z, y))
        .sum();
    sum / logits.len() as f64
}

#[inline]
fn bce_term(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn mse(pred: &[f64], target: &[f64]) -> f64 {
    debug_assert_eq!(pred.len(), target.len());
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinnLoss {
    pub total: f64,
    pub data: f64,
    pub physics: f64,
}

/// Gradient of a loss with respect to every weight and bias, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &ReluNetwork) -> Self {
        Self {
            weights: net.layers().iter().map(|l| vec![0.0; l.weight().len()]).collect(),
            biases: net.layers().iter().map(|l| vec![0.0; l.bias().len()]).collect(),
        }
    }

    /// Flattened layer by layer, weights before biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.biases)
            .flatten()
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Returns a copy of `net` with flattened parameter `index` (layout of
/// [`Gradients::flatten`]) shifted by `delta`.
pub fn perturb_parameter(net: &ReluNetwork, index: usize, delta: f64) -> ReluNetwork {
    let mut out = net.clone();
    let mut k = index;
    for layer in out.layers_mut() {
        let nw = layer.weight().len();
        if k < nw {
            layer.weight_mut()[k] += delta;
            return out;
        }
        k -= nw;
        let nb = layer.bias().len();
        if k < nb {
            layer.bias_mut()[k] += delta;
            return out;
        }
        k -= nb;
    }
    panic!("parameter index {index} out of range");
}

/// A full batch with its loss.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    BceWithLogits {
        inputs: &'a [Vec<f64>],
        targets: &'a [Vec<f64>],
    },
    Mse {
        inputs: &'a [Vec<f64>],
        targets: &'a [Vec<f64>],
    },
    PinnDuffing {
        pairs: &'a PinnPairs,
        params: DuffingParams,
    },
}

impl Objective<'_> {
    pub fn kind(&self) -> LossKind {
        match self {
            Objective::BceWithLogits { .. } => LossKind::BceWithLogits,
            Objective::Mse { .. } => LossKind::Mse,
            Objective::PinnDuffing { .. } => LossKind::PinnDuffing,
        }
    }

    fn len(&self) -> usize {
        match self {
            Objective::BceWithLogits { inputs, .. } | Objective::Mse { inputs, .. } => inputs.len(),
            Objective::PinnDuffing { pairs, .. } => pairs.len(),
        }
    }
}

/// Per-sample scratch space for the forward/backward sweep.
struct Tape {
    /// `acts[0]` is the input, `acts[i]` the ReLU output of hidden layer `i`.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    /// Tangent `∂acts[i]/∂x_0` under the primal masks.
    tangents: Vec<Vec<f64>>,
    output: Vec<f64>,
    output_tangent: Vec<f64>,
    delta: Vec<f64>,
    delta_tangent: Vec<f64>,
    scratch: Vec<f64>,
    scratch_tangent: Vec<f64>,
}

impl Tape {
    fn new(net: &ReluNetwork) -> Self {
        let hidden = net.hidden_layers().len();
        Self {
            acts: vec![Vec::new(); hidden + 1],
            pre: vec![Vec::new(); hidden],
            tangents: vec![Vec::new(); hidden + 1],
            output: Vec::new(),
            output_tangent: Vec::new(),
            delta: Vec::new(),
            delta_tangent: Vec::new(),
            scratch: Vec::new(),
            scratch_tangent: Vec::new(),
        }
    }

    fn forward(&mut self, net: &ReluNetwork, x: &[f64], with_tangent: bool) {
        self.acts[0].clear();
        self.acts[0].extend_from_slice(x);
        if with_tangent {
            self.tangents[0].clear();
            self.tangents[0].resize(x.len(), 0.0);
            self.tangents[0][0] = 1.0;
        }
        for (i, layer) in net.hidden_layers().iter().enumerate() {
            let (head, tail) = self.acts.split_at_mut(i + 1);
            layer.apply_into(&head[i], &mut self.pre[i]);
            tail[0].clear();
            tail[0].extend(self.pre[i].iter().map(|&v| v.max(0.0)));
            if with_tangent {
                let (th, tt) = self.tangents.split_at_mut(i + 1);
                let t_in = &th[i];
                tt[0].clear();
                tt[0].extend((0..layer.outputs()).map(|r| {
                    if self.pre[i][r] > 0.0 {
                        dot(layer.row(r), t_in)
                    } else {
                        0.0
                    }
                }));
            }
        }
        let last = net.output_layer();
        let top = self.acts.len() - 1;
        last.apply_into(&self.acts[top], &mut self.output);
        if with_tangent {
            self.output_tangent.clear();
            let t = &self.tangents[top];
            self.output_tangent
                .extend((0..last.outputs()).map(|r| dot(last.row(r), t)));
        }
    }

    /// Accumulates parameter gradients given `delta = ∂L/∂output` and, when
    /// `with_tangent`, `delta_tangent = ∂L/∂(∂output/∂x_0)`.
    fn backward(&mut self, net: &ReluNetwork, grads: &mut Gradients, with_tangent: bool) {
        let layers = net.layers();
        let n = layers.len();
        for li in (0..n).rev() {
            let layer = &layers[li];
            let input = &self.acts[li];
            let (gw, gb) = (&mut grads.weights[li], &mut grads.biases[li]);
            let cols = layer.inputs();
            for (r, &d) in self.delta.iter().enumerate() {
                gb[r] += d;
                if d != 0.0 {
                    let row = &mut gw[r * cols..(r + 1) * cols];
                    for (g, &a) in row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
            }
            if with_tangent {
                let tin = &self.tangents[li];
                for (r, &d) in self.delta_tangent.iter().enumerate() {
                    if d != 0.0 {
                        let row = &mut gw[r * cols..(r + 1) * cols];
                        for (g, &a) in row.iter_mut().zip(tin) {
                            *g += d * a;
                        }
                    }
                }
            }
            if li == 0 {
                break;
            }
            // Propagate to the previous hidden layer through its ReLU mask.
            let mask = &self.pre[li - 1];
            self.scratch.clear();
            self.scratch.resize(cols, 0.0);
            for (r, &d) in self.delta.iter().enumerate() {
                if d != 0.0 {
                    for (s, &w) in self.scratch.iter_mut().zip(layer.row(r)) {
                        *s += d * w;
                    }
                }
            }
            for (s, &z) in self.scratch.iter_mut().zip(mask) {
                if z <= 0.0 {
                    *s = 0.0;
                }
            }
            std::mem::swap(&mut self.delta, &mut self.scratch);
            if with_tangent {
                self.scratch_tangent.clear();
                self.scratch_tangent.resize(cols, 0.0);
                for (r, &d) in self.delta_tangent.iter().enumerate() {
                    if d != 0.0 {
                        for (s, &w) in self.scratch_tangent.iter_mut().zip(layer.row(r)) {
                            *s += d * w;
                        }
                    }
                }
                for (s, &z) in self.scratch_tangent.iter_mut().zip(mask) {
                    if z <= 0.0 {
                        *s = 0.0;
                    }
                }
                std::mem::swap(&mut self.delta_tangent, &mut self.scratch_tangent);
            }
        }
    }
}

fn check_batch(net: &ReluNetwork, objective: &Objective) -> Result<()> {
    if objective.len() == 0 {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    match objective {
        Objective::BceWithLogits { inputs, targets } | Objective::Mse { inputs, targets } => {
            if inputs.len() != targets.len() {
                return Err(Error::DimensionMismatch {
                    context: "batch targets",
                    expected: inputs.len(),
                    got: targets.len(),
                });
            }
            for (x, y) in inputs.iter().zip(targets.iter()) {
                if x.len() != net.input_dim() {
                    return Err(Error::DimensionMismatch {
                        context: "batch input",
                        expected: net.input_dim(),
                        got: x.len(),
                    });
                }
                if y.len() != net.output_dim() {
                    return Err(Error::DimensionMismatch {
                        context: "batch target",
                        expected: net.output_dim(),
                        got: y.len(),
                    });
                }
            }
        }
        Objective::PinnDuffing { pairs, .. } => {
            if net.input_dim() != 2 || net.output_dim() != 1 {
                return Err(Error::InvalidArchitecture(
                    "PINN loss needs a 2-input, 1-output network".into(),
                ));
            }
            if !(pairs.dt > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "PINN time step must be positive, got {}",
                    pairs.dt
                )));
            }
        }
    }
    Ok(())
}

/// Loss value and exact parameter gradient of `objective` at `net`.
pub fn backprop(net: &ReluNetwork, objective: &Objective) -> Result<(f64, Gradients)> {
    check_batch(net, objective)?;
    let mut grads = Gradients::zeros_like(net);
    let mut tape = Tape::new(net);
    let n = objective.len() as f64;
    let mut loss = 0.0;
    match *objective {
        Objective::BceWithLogits { inputs, targets } => {
            let scale = 1.0 / (n * net.output_dim() as f64);
            for (x, y) in inputs.iter().zip(targets) {
                tape.forward(net, x, false);
                tape.delta.clear();
                for (&z, &t) in tape.output.iter().zip(y) {
                    loss += bce_term(z, t);
                    tape.delta.push((sigmoid(z) - t) * scale);
                }
                tape.backward(net, &mut grads, false);
            }
            loss *= scale;
        }
        Objective::Mse { inputs, targets } => {
            let scale = 1.0 / (n * net.output_dim() as f64);
            for (x, y) in inputs.iter().zip(targets) {
                tape.forward(net, x, false);
                tape.delta.clear();
                for (&p, &t) in tape.output.iter().zip(y) {
                    loss += (p - t) * (p - t);
                    tape.delta.push(2.0 * (p - t) * scale);
                }
                tape.backward(net, &mut grads, false);
            }
            loss *= scale;
        }
        Objective::PinnDuffing { pairs, params } => {
            let dt = pairs.dt;
            for (x, &target) in pairs.inputs.iter().zip(&pairs.targets) {
                tape.forward(net, x, true);
                let y = tape.output[0];
                let dy = tape.output_tangent[0];
                let r = pinn_residual(&params, y, dy, x[1], dt);
                loss += (y - target) * (y - target) + r * r;
                let dr_dy = params.delta / dt + params.alpha + 3.0 * params.beta * y * y;
                tape.delta.clear();
                tape.delta.push((2.0 * (y - target) + 2.0 * r * dr_dy) / n);
                tape.delta_tangent.clear();
                tape.delta_tangent.push(2.0 * r / n);
                tape.backward(net, &mut grads, true);
            }
            loss /= n;
        }
    }
    Ok((loss, grads))
}

#[inline]
fn pinn_residual(p: &DuffingParams, pred: f64, dpred_dt: f64, x_now: f64, dt: f64) -> f64 {
    let v_hat = (pred - x_now) / dt;
    dpred_dt - (-p.delta * v_hat - p.alpha * pred - p.beta * pred * pred * pred)
}

/// Composite PINN loss with `∂x̂/∂t` read from the region's exact input Jacobian.
pub fn pinn_loss(net: &ReluNetwork, pairs: &PinnPairs, params: &DuffingParams, dt: f64) -> Result<PinnLoss> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidParameter("no PINN samples".into()));
    }
    let (mut data, mut physics) = (0.0, 0.0);
    for (x, &target) in pairs.inputs.iter().zip(&pairs.targets) {
        let fp = net.forward(x)?;
        let map = net.input_jacobian(&fp.pattern)?;
        let y = fp.output[0];
        let r = pinn_residual(params, y, map.entry(0, 0), x[1], dt);
        data += (y - target) * (y - target);
        physics += r * r;
    }
    let n = pairs.len() as f64;
    let (data, physics) = (data / n, physics / n);
    Ok(PinnLoss {
        total: data + physics,
        data,
        physics,
    })
}

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Gradients,
    v: Gradients,
    step: u64,
}

impl AdamState {
    pub fn new(net: &ReluNetwork) -> Self {
        Self {
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, net: &mut ReluNetwork, grads: &Gradients, lr: f64, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (li, layer) in net.layers_mut().iter_mut().enumerate() {
            adam_slice(
                layer.weight_mut(),
                &grads.weights[li],
                &mut self.m.weights[li],
                &mut self.v.weights[li],
                lr,
                cfg,
                bc1,
                bc2,
            );
            adam_slice(
                layer.bias_mut(),
                &grads.biases[li],
                &mut self.m.biases[li],
                &mut self.v.biases[li],
                lr,
                cfg,
                bc1,
                bc2,
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_slice(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    cfg: &AdamConfig,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..p.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        p[i] -= lr * mh / (vh.sqrt() + cfg.epsilon);
    }
}

/// What a network is trained on.
#[derive(Debug, Clone)]
pub enum TrainingData {
    Classification(LabeledDataset2D),
    Pinn {
        pairs: PinnPairs,
        params: DuffingParams,
    },
}

/// One-hot targets for `n_out == 2`, the raw label otherwise.
pub fn class_targets(labels: &[u8], n_out: usize) -> Vec<Vec<f64>> {
    labels
        .iter()
        .map(|&l| {
            if n_out == 2 {
                if l == 0 {
                    vec![1.0, 0.0]
                } else {
                    vec![0.0, 1.0]
                }
            } else {
                vec![f64::from(l); n_out]
            }
        })
        .collect()
}

/// Argmax of the logits, or `logit > 0` for a single output.
pub fn predicted_class(logits: &[f64]) -> u8 {
    if logits.len() == 1 {
        u8::from(logits[0] > 0.0)
    } else {
        let best = logits
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &z)| if z > acc.1 { (i, z) } else { acc });
        u8::from(best.0 == 1)
    }
}

pub fn accuracy(net: &ReluNetwork, points: &[Vec<f64>], labels: &[u8]) -> Result<f64> {
    if points.is_empty() {
        return Ok(1.0);
    }
    let mut correct = 0usize;
    for (x, &l) in points.iter().zip(labels) {
        if predicted_class(&net.predict(x)?) == l {
            correct += 1;
        }
    }
    Ok(correct as f64 / points.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    /// PINN data term.
    pub data_loss: Option<f64>,
    /// PINN residual term.
    pub physics_loss: Option<f64>,
}

pub fn log_csv(logs: &[EpochLog]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out =
        String::from("epoch,train_loss,test_loss,train_acc,test_acc,data_loss,physics_loss\n");
    for l in logs {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            l.epoch,
            l.train_loss,
            opt(l.test_loss),
            opt(l.train_accuracy),
            opt(l.test_accuracy),
            opt(l.data_loss),
            opt(l.physics_loss)
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: ReluNetwork,
    pub logs: Vec<EpochLog>,
    pub checkpoints: Vec<Checkpoint>,
    /// Files written when a run directory was given.
    pub checkpoint_files: Vec<PathBuf>,
}

pub fn checkpoint_path(run_dir: &Path, epoch: usize) -> PathBuf {
    run_dir.join(format!("ckpt_{epoch}.json"))
}

struct Prepared {
    train_x: Vec<Vec<f64>>,
    train_y: Vec<Vec<f64>>,
    train_labels: Vec<u8>,
    test_x: Vec<Vec<f64>>,
    test_y: Vec<Vec<f64>>,
    test_labels: Vec<u8>,
}

fn prepare(data: &LabeledDataset2D, n_out: usize) -> Prepared {
    let to_vecs = |pts: Vec<[f64; 2]>| pts.into_iter().map(|p| p.to_vec()).collect::<Vec<_>>();
    let train_labels = data.train_labels();
    let test_labels = data.test_labels();
    Prepared {
        train_x: to_vecs(data.train_points()),
        train_y: class_targets(&train_labels, n_out),
        train_labels,
        test_x: to_vecs(data.test_points()),
        test_y: class_targets(&test_labels, n_out),
        test_labels,
    }
}

/// Trains `net` full-batch for `config.epochs` Adam steps.
///
/// `EpochLog` entry `e` and checkpoint `e` describe the network after `e`
/// updates, so logs run from 0 to `epochs` inclusive.
pub fn train(
    net: &ReluNetwork,
    data: &TrainingData,
    config: &TrainConfig,
    run_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut net = net.clone();
    let mut adam = AdamState::new(&net);
    let ckpt_epochs = config.checkpoint_epochs();
    let mut next_ckpt = 0;
    let mut logs = Vec::with_capacity(config.epochs + 1);
    let mut checkpoints = Vec::new();
    let mut files = Vec::new();

    let prepared = match data {
        TrainingData::Classification(d) => Some(prepare(d, net.output_dim())),
        TrainingData::Pinn { .. } => None,
    };
    let objective = match (data, &prepared, config.loss_kind) {
        (TrainingData::Classification(_), Some(p), LossKind::BceWithLogits) => {
            Objective::BceWithLogits {
                inputs: &p.train_x,
                targets: &p.train_y,
            }
        }
        (TrainingData::Classification(_), Some(p), LossKind::Mse) => Objective::Mse {
            inputs: &p.train_x,
            targets: &p.train_y,
        },
        (TrainingData::Pinn { pairs, params }, _, LossKind::PinnDuffing) => Objective::PinnDuffing {
            pairs,
            params: *params,
        },
        (_, _, kind) => {
            return Err(Error::InvalidParameter(format!(
                "loss {kind:?} does not match the training data"
            )))
        }
    };

    for epoch in 0..=config.epochs {
        let (loss, grads) = backprop(&net, &objective)?;
        if !loss.is_finite() || !grads.max_abs().is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss at epoch {epoch} (seed {}): {loss}",
                config.seed
            )));
        }
        let mut log = EpochLog {
            epoch,
            train_loss: loss,
            test_loss: None,
            train_accuracy: None,
            test_accuracy: None,
            data_loss: None,
            physics_loss: None,
        };
        if let Some(p) = &prepared {
            log.test_loss = Some(if p.test_x.is_empty() {
                0.0
            } else {
                let outs = p
                    .test_x
                    .iter()
                    .map(|x| net.predict(x))
                    .collect::<Result<Vec<_>>>()?;
                let (z, y): (Vec<f64>, Vec<f64>) = (outs.concat(), p.test_y.concat());
                match config.loss_kind {
                    LossKind::Mse => mse(&z, &y),
                    _ => bce_with_logits(&z, &y),
                }
            });
            log.train_accuracy = Some(accuracy(&net, &p.train_x, &p.train_labels)?);
            log.test_accuracy = Some(accuracy(&net, &p.test_x, &p.test_labels)?);
        }
        if let TrainingData::Pinn { pairs, params } = data {
            if epoch == config.epochs || ckpt_epochs.get(next_ckpt) == Some(&epoch) {
                let parts = pinn_loss(&net, pairs, params, pairs.dt)?;
                log.data_loss = Some(parts.data);
                log.physics_loss = Some(parts.physics);
            }
        }
        logs.push(log);

        if ckpt_epochs.get(next_ckpt) == Some(&epoch) {
            let ck = Checkpoint::from_network(&net, epoch, config.seed, loss);
            if let Some(dir) = run_dir {
                let path = checkpoint_path(dir, epoch);
                ck.save(&path)?;
                files.push(path);
            }
            checkpoints.push(ck);
            next_ckpt += 1;
        }
        if epoch < config.epochs {
            adam.update(&mut net, &grads, config.learning_rate, &config.adam);
        }
    }

    if let Some(dir) = run_dir {
        write_atomic(&dir.join("log.csv"), log_csv(&logs).as_bytes())?;
    }
    Ok(TrainOutcome {
        network: net,
        logs,
        checkpoints,
        checkpoint_files: files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{duffing_trajectory, gen_two_circles, pinn_pairs};
    use crate::nn::{init_network, ArchitectureSpec, DenseLayer};

    #[test]
    fn bce_reference_values() {
        assert!((bce_with_logits(&[0.0], &[0.0]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_with_logits(&[50.0], &[1.0]) < 1e-20);
    }

    #[test]
    fn bce_matches_naive_formula() {
        let z: [f64; 6] = [-3.2, -0.7, 0.0, 0.4, 2.5, 5.9];
        let y: [f64; 6] = [0.0, 1.0, 1.0, 0.0, 1.0, 0.0];
        let naive: f64 = z
            .iter()
            .zip(&y)
            .map(|(&z, &y)| {
                let s = 1.0 / (1.0 + (-z).exp());
                -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
            })
            .sum::<f64>()
            / z.len() as f64;
        assert!((bce_with_logits(&z, &y) - naive).abs() < 1e-12);
    }

    #[test]
    fn mse_reference_values() {
        let a = [1.0, -2.0, 3.5];
        assert_eq!(mse(&a, &a), 0.0);
        let b: Vec<f64> = a.iter().map(|v| v - 2.0).collect();
        assert_eq!(mse(&a, &b), 4.0);
        let p = [0.3f64, -1.1, 2.2, 0.0];
        let t = [0.1, 0.4, -0.5, 1.0];
        let mut oracle = 0.0;
        for i in 0..4 {
            oracle += (p[i] - t[i]).powi(2);
        }
        assert!((mse(&p, &t) - oracle / 4.0).abs() < 1e-15);
    }

    fn constant_net(c: f64) -> ReluNetwork {
        ReluNetwork::new(vec![
            DenseLayer::new(3, 2, vec![0.0; 6], vec![-1.0; 3]).unwrap(),
            DenseLayer::new(1, 3, vec![0.5; 3], vec![c]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn pinn_loss_of_constant_network() {
        let params = DuffingParams::default();
        let traj = duffing_trajectory(&params, 50, 0.1).unwrap();
        let pairs = pinn_pairs(&traj).unwrap();
        let c = 0.7;
        let parts = pinn_loss(&constant_net(c), &pairs, &params, 0.1).unwrap();
        let r = params.alpha * c + params.beta * c * c * c;
        assert!((parts.physics - r * r).abs() < 1e-14);
        assert!((parts.total - parts.data - parts.physics).abs() < 1e-15);

        let zero = pinn_loss(&constant_net(0.0), &pairs, &params, 0.1).unwrap();
        assert_eq!(zero.physics, 0.0);
        assert!(pinn_loss(&constant_net(0.0), &pairs, &params, 0.0).is_err());
    }

    #[test]
    fn perfect_mse_predictions_have_zero_gradient() {
        let net = init_network(&ArchitectureSpec::new(vec![2, 4, 2]).unwrap(), 1);
        let inputs = vec![vec![0.3, -0.2], vec![1.0, 0.5]];
        let targets: Vec<Vec<f64>> = inputs.iter().map(|x| net.predict(x).unwrap()).collect();
        let (loss, g) = backprop(&net, &Objective::Mse { inputs: &inputs, targets: &targets }).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn single_linear_output_neuron_gradient_closed_form() {
        // Hidden unit h = relu(x0 + x1 + 1) is active; output y = 2 h + 0.5.
        let net = ReluNetwork::new(vec![
            DenseLayer::new(1, 2, vec![1.0, 1.0], vec![1.0]).unwrap(),
            DenseLayer::new(1, 1, vec![2.0], vec![0.5]).unwrap(),
        ])
        .unwrap();
        let x = vec![vec![0.25, 0.5]];
        let y = vec![vec![1.0]];
        let (_, g) = backprop(&net, &Objective::Mse { inputs: &x, targets: &y }).unwrap();
        let h = 1.75;
        let pred = 2.0 * h + 0.5;
        assert!((g.weights[1][0] - 2.0 * (pred - 1.0) * h).abs() < 1e-12);
        assert!((g.biases[1][0] - 2.0 * (pred - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_adam_step_is_identity() {
        let mut net = init_network(&ArchitectureSpec::new(vec![2, 3, 1]).unwrap(), 4);
        let before = net.clone();
        let mut adam = AdamState::new(&net);
        adam.update(&mut net, &Gradients::zeros_like(&before), 0.01, &AdamConfig::default());
        assert_eq!(net, before);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_learning_rate_leaves_network_unchanged() {
        let data = gen_two_circles(40, 0.5, 1.0, 0.05, 2).unwrap();
        let net = init_network(&ArchitectureSpec::new(vec![2, 4, 2]).unwrap(), 2);
        let mut cfg = TrainConfig::new(1, LossKind::BceWithLogits, 1, 2);
        cfg.learning_rate = 0.0;
        let out = train(&net, &TrainingData::Classification(data), &cfg, None).unwrap();
        assert_eq!(out.network, net);
        assert_eq!(out.logs.len(), 2);
        assert_eq!(out.checkpoints.len(), 2);
    }

    #[test]
    fn checkpoint_schedule() {
        let cfg = TrainConfig::new(10, LossKind::Mse, 4, 0);
        assert_eq!(cfg.checkpoint_epochs(), vec![0, 4, 8, 10]);
        let cfg = TrainConfig::new(10000, LossKind::PinnDuffing, 500, 0);
        assert_eq!(cfg.checkpoint_epochs().len(), 21);
        assert!(TrainConfig::new(10, LossKind::Mse, 0, 0).validate().is_err());
        assert!(TrainConfig::new(0, LossKind::Mse, 1, 0).validate().is_err());
    }

    #[test]
    fn mismatched_loss_and_data_is_rejected() {
        let data = gen_two_circles(20, 0.5, 1.0, 0.05, 2).unwrap();
        let net = init_network(&ArchitectureSpec::new(vec![2, 4, 2]).unwrap(), 2);
        let cfg = TrainConfig::new(2, LossKind::PinnDuffing, 1, 0);
        assert!(train(&net, &TrainingData::Classification(data), &cfg, None).is_err());
    }

    #[test]
    fn training_writes_identical_checkpoints_for_identical_seeds() {
        let data = TrainingData::Classification(gen_two_circles(40, 0.5, 1.0, 0.05, 9).unwrap());
        let net = init_network(&ArchitectureSpec::new(vec![2, 5, 2]).unwrap(), 9);
        let cfg = TrainConfig::new(30, LossKind::BceWithLogits, 10, 9);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let a = train(&net, &data, &cfg, Some(d1.path())).unwrap();
        let b = train(&net, &data, &cfg, Some(d2.path())).unwrap();
        assert_eq!(a.checkpoint_files.len(), 4);
        for (fa, fb) in a.checkpoint_files.iter().zip(&b.checkpoint_files) {
            assert_eq!(std::fs::read(fa).unwrap(), std::fs::read(fb).unwrap());
        }
        assert_eq!(
            std::fs::read(d1.path().join("log.csv")).unwrap(),
            std::fs::read(d2.path().join("log.csv")).unwrap()
        );
    }
}
