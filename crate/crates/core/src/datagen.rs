//! Synthetic datasets: two concentric circles, two interleaved moons, and
//! Duffing-oscillator trajectories for next-step regression.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_text, write_atomic};

pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset2D {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<u8>,
    /// Sorted indices into `points`.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl LabeledDataset2D {
    /// Builds a dataset with a seeded 80/20 split.
    pub fn with_split(points: Vec<[f64; 2]>, labels: Vec<u8>, seed: u64) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset labels",
                expected: points.len(),
                got: labels.len(),
            });
        }
        let n = points.len();
        let mut idx: Vec<usize> = (0..n).collect();
        // Distinct stream from the geometry noise.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5151_7a7a_0000_0001);
        idx.shuffle(&mut rng);
        let n_train = (TRAIN_FRACTION * n as f64).round() as usize;
        let mut train = idx[..n_train].to_vec();
        let mut test = idx[n_train..].to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Ok(Self {
            points,
            labels,
            train,
            test,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn train_points(&self) -> Vec<[f64; 2]> {
        self.train.iter().map(|&i| self.points[i]).collect()
    }

    pub fn train_labels(&self) -> Vec<u8> {
        self.train.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn test_points(&self) -> Vec<[f64; 2]> {
        self.test.iter().map(|&i| self.points[i]).collect()
    }

    pub fn test_labels(&self) -> Vec<u8> {
        self.test.iter().map(|&i| self.labels[i]).collect()
    }

    /// Axis-aligned bounds of all points as `(x_min, x_max, y_min, y_max)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        self.points.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), p| (a.min(p[0]), b.max(p[0]), c.min(p[1]), d.max(p[1])),
        )
    }

    pub fn to_csv(&self) -> String {
        let mut is_train = vec![false; self.len()];
        for &i in &self.train {
            is_train[i] = true;
        }
        let mut out = String::from("x1,x2,label,split\n");
        for (i, (p, l)) in self.points.iter().zip(&self.labels).enumerate() {
            let split = if is_train[i] { "train" } else { "test" };
            writeln!(out, "{},{},{},{}", p[0], p[1], l, split).unwrap();
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {line}: {msg}"),
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "x1,x2,label,split" => {}
            _ => return Err(bad(1, "expected header x1,x2,label,split")),
        }
        let (mut points, mut labels, mut train, mut test) = (vec![], vec![], vec![], vec![]);
        for (ln, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad(ln + 1, "expected 4 fields"));
            }
            let x1: f64 = f[0].parse().map_err(|_| bad(ln + 1, "bad x1"))?;
            let x2: f64 = f[1].parse().map_err(|_| bad(ln + 1, "bad x2"))?;
            let label: u8 = match f[2] {
                "0" => 0,
                "1" => 1,
                _ => return Err(bad(ln + 1, "label must be 0 or 1")),
            };
            let idx = points.len();
            match f[3].trim() {
                "train" => train.push(idx),
                "test" => test.push(idx),
                _ => return Err(bad(ln + 1, "split must be train or test")),
            }
            points.push([x1, x2]);
            labels.push(label);
        }
        Ok(Self {
            points,
            labels,
            train,
            test,
        })
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::from_csv(&read_text(path)?, path)
    }
}

fn normal(sd: f64) -> Result<Option<Normal<f64>>> {
    if !(sd >= 0.0 && sd.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise sd must be >= 0, got {sd}")));
    }
    Ok(if sd > 0.0 { Some(Normal::new(0.0, sd).unwrap()) } else { None })
}

fn check_even(n: usize) -> Result<()> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "sample count must be positive and even, got {n}"
        )));
    }
    Ok(())
}

/// `n / 2` points per circle at evenly spaced angles with Gaussian radial noise.
/// Label 0 is the inner circle.
pub fn gen_two_circles(
    n: usize,
    r_inner: f64,
    r_outer: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<LabeledDataset2D> {
    check_even(n)?;
    if !(0.0 < r_inner && r_inner < r_outer && r_outer.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < r_inner < r_outer, got ({r_inner}, {r_outer})"
        )));
    }
    let noise = normal(noise_sd)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = n / 2;
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (label, r) in [(0u8, r_inner), (1u8, r_outer)] {
        for k in 0..half {
            let theta = 2.0 * PI * k as f64 / half as f64;
            let r = r + noise.map_or(0.0, |d| d.sample(&mut rng));
            points.push([r * theta.cos(), r * theta.sin()]);
            labels.push(label);
        }
    }
    LabeledDataset2D::with_split(points, labels, seed)
}

/// Interleaved half circles: the upper arc `(cos θ, sin θ)` is class 0 and the
/// lower arc `(1 − cos θ, 0.5 − sin θ)` is class 1, `θ ∈ [0, π]`, with isotropic
/// Gaussian noise on both coordinates.
pub fn gen_two_moons(n: usize, noise_sd: f64, seed: u64) -> Result<LabeledDataset2D> {
    check_even(n)?;
    let noise = normal(noise_sd)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = n / 2;
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for label in [0u8, 1u8] {
        for k in 0..half {
            let theta = if half > 1 {
                PI * k as f64 / (half - 1) as f64
            } else {
                0.0
            };
            let (mut x, mut y) = if label == 0 {
                (theta.cos(), theta.sin())
            } else {
                (1.0 - theta.cos(), 0.5 - theta.sin())
            };
            if let Some(d) = noise {
                x += d.sample(&mut rng);
                y += d.sample(&mut rng);
            }
            points.push([x, y]);
            labels.push(label);
        }
    }
    LabeledDataset2D::with_split(points, labels, seed)
}

/// Coefficients of `x'' + δ x' + α x + β x³ = γ cos(ω t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DuffingParams {
    pub delta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub omega: f64,
}

impl Default for DuffingParams {
    fn default() -> Self {
        Self {
            delta: 0.0,
            alpha: -1.0,
            beta: 1.0,
            gamma: 0.0,
            omega: 1.2,
        }
    }
}

impl DuffingParams {
    /// `v²/2 + α x²/2 + β x⁴/4`, conserved when δ = γ = 0.
    pub fn energy(&self, x: f64, v: f64) -> f64 {
        0.5 * v * v + 0.5 * self.alpha * x * x + 0.25 * self.beta * x.powi(4)
    }

    fn rhs(&self, t: f64, x: f64, v: f64) -> (f64, f64) {
        (
            v,
            -self.delta * v - self.alpha * x - self.beta * x * x * x
                + self.gamma * (self.omega * t).cos(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DuffingTrajectory {
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub dt: f64,
}

impl DuffingTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,v\n");
        for i in 0..self.len() {
            writeln!(out, "{},{},{}", self.times[i], self.positions[i], self.velocities[i]).unwrap();
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            message: msg,
        };
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("t,x,v") {
            return Err(bad("expected header t,x,v".into()));
        }
        let (mut times, mut positions, mut velocities) = (vec![], vec![], vec![]);
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(format!("line {}: bad number", i + 2)))?;
            if f.len() != 3 {
                return Err(bad(format!("line {}: expected 3 fields", i + 2)));
            }
            times.push(f[0]);
            positions.push(f[1]);
            velocities.push(f[2]);
        }
        let dt = if times.len() >= 2 { times[1] - times[0] } else { 0.0 };
        Ok(Self {
            times,
            positions,
            velocities,
            dt,
        })
    }
}

/// Horizon of the generated trajectories in seconds.
pub const DUFFING_HORIZON: f64 = 20.0;

/// Classic RK4 from `x(0) = 0, v(0) = 1`; returns `n_samples` states at `t = k dt`.
pub fn duffing_trajectory(params: &DuffingParams, n_samples: usize, dt: f64) -> Result<DuffingTrajectory> {
    duffing_trajectory_from(params, (0.0, 1.0), n_samples, dt)
}

pub fn duffing_trajectory_from(
    params: &DuffingParams,
    initial: (f64, f64),
    n_samples: usize,
    dt: f64,
) -> Result<DuffingTrajectory> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if n_samples == 0 || (n_samples - 1) as f64 * dt > DUFFING_HORIZON * (1.0 + 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "need n_samples > 0 and (n_samples - 1) * dt <= {DUFFING_HORIZON}, got {n_samples}, {dt}"
        )));
    }
    let (mut x, mut v) = initial;
    let mut times = Vec::with_capacity(n_samples);
    let mut positions = Vec::with_capacity(n_samples);
    let mut velocities = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        let t = k as f64 * dt;
        if !(x.is_finite() && v.is_finite()) {
            return Err(Error::NonFinite(format!("Duffing state at t = {t}")));
        }
        times.push(t);
        positions.push(x);
        velocities.push(v);
        if k + 1 == n_samples {
            break;
        }
        let (k1x, k1v) = params.rhs(t, x, v);
        let (k2x, k2v) = params.rhs(t + 0.5 * dt, x + 0.5 * dt * k1x, v + 0.5 * dt * k1v);
        let (k3x, k3v) = params.rhs(t + 0.5 * dt, x + 0.5 * dt * k2x, v + 0.5 * dt * k2v);
        let (k4x, k4v) = params.rhs(t + dt, x + dt * k3x, v + dt * k3v);
        x += dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        v += dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
    }
    Ok(DuffingTrajectory {
        times,
        positions,
        velocities,
        dt,
    })
}

/// Next-step regression samples: input `[t_i, x_i]`, target `x_{i+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PinnPairs {
    pub inputs: Vec<[f64; 2]>,
    pub targets: Vec<f64>,
    pub dt: f64,
}

impl PinnPairs {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        self.inputs.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), p| (a.min(p[0]), b.max(p[0]), c.min(p[1]), d.max(p[1])),
        )
    }
}

pub fn pinn_pairs(traj: &DuffingTrajectory) -> Result<PinnPairs> {
    if traj.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "trajectory needs at least 2 samples, got {}",
            traj.len()
        )));
    }
    let n = traj.len() - 1;
    Ok(PinnPairs {
        inputs: (0..n).map(|i| [traj.times[i], traj.positions[i]]).collect(),
        targets: traj.positions[1..].to_vec(),
        dt: traj.dt,
    })
}
