//! Z2 persistence of a decomposition under random dimension-blocked filtrations.
//!
//! Filtration step `t` counts cells added so far, so curves have `T + 1`
//! entries for a complex with `T` cells. A class born by the cell at
//! filtration index `b` and killed by index `d` is alive for `b < t <= d`.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polydecomp::CellComplex2D;
use crate::unionfind::UnionFind;

pub const DEFAULT_TRIALS: usize = 10;
pub const HEAT_MAP_BINS: usize = 200;

/// SplitMix64 step, used to derive independent seeds from a base seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellRef {
    pub dim: u8,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Filtration {
    pub order: Vec<CellRef>,
    pub seed: u64,
}

impl Filtration {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Vertices, then edges, then faces, each block uniformly shuffled.
pub fn random_filtration(complex: &CellComplex2D, seed: u64) -> Filtration {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = Vec::with_capacity(complex.cell_count());
    for (dim, n) in [
        (0u8, complex.vertices.len()),
        (1, complex.edges.len()),
        (2, complex.faces.len()),
    ] {
        let mut block: Vec<usize> = (0..n).collect();
        block.shuffle(&mut rng);
        order.extend(block.into_iter().map(|index| CellRef { dim, index }));
    }
    Filtration { order, seed }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryMatrixZ2 {
    /// Sorted filtration indices of each column's boundary cells.
    pub columns: Vec<Vec<usize>>,
    pub dims: Vec<u8>,
}

pub fn boundary_matrix(complex: &CellComplex2D, filt: &Filtration) -> Result<BoundaryMatrixZ2> {
    let mut pos = [
        vec![usize::MAX; complex.vertices.len()],
        vec![usize::MAX; complex.edges.len()],
        vec![usize::MAX; complex.faces.len()],
    ];
    if filt.len() != complex.cell_count() {
        return Err(Error::DimensionMismatch {
            context: "filtration length",
            expected: complex.cell_count(),
            got: filt.len(),
        });
    }
    for (i, c) in filt.order.iter().enumerate() {
        let slot = pos
            .get_mut(usize::from(c.dim))
            .and_then(|p| p.get_mut(c.index))
            .ok_or_else(|| Error::InvalidParameter(format!("filtration cell {c:?} out of range")))?;
        if *slot != usize::MAX {
            return Err(Error::InvalidParameter(format!("cell {c:?} repeated in filtration")));
        }
        *slot = i;
    }
    let mut columns = Vec::with_capacity(filt.len());
    let mut dims = Vec::with_capacity(filt.len());
    for (i, c) in filt.order.iter().enumerate() {
        let mut col: Vec<usize> = match c.dim {
            0 => Vec::new(),
            1 => complex.edges[c.index].endpoints.iter().map(|&v| pos[0][v]).collect(),
            _ => complex.faces[c.index].edges.iter().map(|&e| pos[1][e]).collect(),
        };
        col.sort_unstable();
        if col.windows(2).any(|w| w[0] == w[1]) || col.last().is_some_and(|&l| l >= i) {
            return Err(Error::ChainCondition(i));
        }
        columns.push(col);
        dims.push(c.dim);
    }
    Ok(BoundaryMatrixZ2 { columns, dims })
}

/// Symmetric difference of two sorted index lists.
fn xor_into(acc: &mut Vec<usize>, other: &[usize]) {
    let mut out = Vec::with_capacity(acc.len() + other.len());
    let (mut i, mut j) = (0, 0);
    while i < acc.len() && j < other.len() {
        match acc[i].cmp(&other[j]) {
            std::cmp::Ordering::Less => {
                out.push(acc[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(other[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&acc[i..]);
    out.extend_from_slice(&other[j..]);
    *acc = out;
}

impl BoundaryMatrixZ2 {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Errors with the first column whose boundary has nonzero boundary.
    pub fn check_chain_condition(&self) -> Result<()> {
        for (j, col) in self.columns.iter().enumerate() {
            let mut acc = Vec::new();
            for &i in col {
                xor_into(&mut acc, &self.columns[i]);
            }
            if !acc.is_empty() {
                return Err(Error::ChainCondition(j));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PersistencePairs {
    /// `(birth, death, dim)` with `birth < death`.
    pub pairs: Vec<(usize, usize, u8)>,
    /// `(birth, dim)` of classes that never die.
    pub essentials: Vec<(usize, u8)>,
    /// Number of cells `T` in the filtration.
    pub total: usize,
}

/// Column reduction over Z2, highest dimension first so that columns whose
/// index is already a pivot can be cleared without reduction.
pub fn persistence(complex: &CellComplex2D, filt: &Filtration) -> Result<PersistencePairs> {
    let m = boundary_matrix(complex, filt)?;
    m.check_chain_condition()?;
    Ok(reduce(&m))
}

fn reduce(m: &BoundaryMatrixZ2) -> PersistencePairs {
    let n = m.len();
    let mut reduced: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut pivot_of = vec![usize::MAX; n];
    let mut cleared = vec![false; n];
    let mut pairs = Vec::new();
    for dim in (1..=2u8).rev() {
        for j in (0..n).filter(|&j| m.dims[j] == dim) {
            if cleared[j] {
                continue;
            }
            let mut col = m.columns[j].clone();
            while let Some(&low) = col.last() {
                let other = pivot_of[low];
                if other == usize::MAX {
                    break;
                }
                xor_into(&mut col, &reduced[other]);
            }
            if let Some(&low) = col.last() {
                pivot_of[low] = j;
                cleared[low] = true;
                pairs.push((low, j, m.dims[low]));
            }
            reduced[j] = col;
        }
    }
    let mut essentials: Vec<(usize, u8)> = (0..n)
        .filter(|&j| reduced[j].is_empty() && pivot_of[j] == usize::MAX)
        .map(|j| (j, m.dims[j]))
        .collect();
    essentials.sort_unstable();
    pairs.sort_unstable();
    PersistencePairs {
        pairs,
        essentials,
        total: n,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BettiCurve {
    pub dim: u8,
    /// `values[t]` for `t = 0..=T`.
    pub values: Vec<usize>,
}

impl BettiCurve {
    pub fn max(&self) -> usize {
        self.values.iter().copied().max().unwrap_or(0)
    }
}

/// `β_i(t)` for `i = 0, 1` from persistence pairs.
pub fn betti_curves(pairs: &PersistencePairs, total: usize) -> (BettiCurve, BettiCurve) {
    let mut delta = [vec![0i64; total + 2], vec![0i64; total + 2]];
    for &(b, d, dim) in &pairs.pairs {
        if let Some(dl) = delta.get_mut(usize::from(dim)) {
            dl[b + 1] += 1;
            dl[d + 1] -= 1;
        }
    }
    for &(b, dim) in &pairs.essentials {
        if let Some(dl) = delta.get_mut(usize::from(dim)) {
            dl[b + 1] += 1;
        }
    }
    let curve = |dim: u8| {
        let mut acc = 0i64;
        BettiCurve {
            dim,
            values: (0..=total)
                .map(|t| {
                    acc += delta[usize::from(dim)][t];
                    acc as usize
                })
                .collect(),
        }
    };
    (curve(0), curve(1))
}

/// Independent curves: union-find for `β0`, Euler characteristic for `β1`.
pub fn oracle_curves(complex: &CellComplex2D, filt: &Filtration) -> (BettiCurve, BettiCurve) {
    let mut uf = UnionFind::new(complex.vertices.len());
    let mut present = 0usize;
    let (mut v, mut e, mut f) = (0i64, 0i64, 0i64);
    let mut b0 = vec![0usize];
    let mut b1 = vec![0usize];
    for c in &filt.order {
        match c.dim {
            0 => {
                v += 1;
                present += 1;
            }
            1 => {
                e += 1;
                let [a, b] = complex.edges[c.index].endpoints;
                if uf.union(a, b) {
                    present -= 1;
                }
            }
            _ => f += 1,
        }
        b0.push(present);
        // A negative value cannot match and surfaces as an oracle mismatch.
        b1.push(usize::try_from(present as i64 - v + e - f).unwrap_or(usize::MAX));
    }
    (
        BettiCurve { dim: 0, values: b0 },
        BettiCurve { dim: 1, values: b1 },
    )
}

/// Persistence curves, checked pointwise against [`oracle_curves`].
pub fn checked_betti_curves(
    complex: &CellComplex2D,
    filt: &Filtration,
) -> Result<(BettiCurve, BettiCurve)> {
    let pairs = persistence(complex, filt)?;
    let curves = betti_curves(&pairs, pairs.total);
    let oracle = oracle_curves(complex, filt);
    for (got, want) in [(&curves.0, &oracle.0), (&curves.1, &oracle.1)] {
        if let Some(t) = (0..got.values.len()).find(|&t| got.values[t] != want.values[t]) {
            return Err(Error::OracleMismatch {
                step: t,
                dim: usize::from(got.dim),
                matrix: got.values[t],
                oracle: want.values[t],
            });
        }
    }
    Ok(curves)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedCurves {
    pub total_cells: usize,
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
    pub trials: Vec<(BettiCurve, BettiCurve)>,
    pub seeds: Vec<u64>,
}

impl AveragedCurves {
    pub fn curve(&self, dim: u8) -> &[f64] {
        if dim == 0 {
            &self.beta0
        } else {
            &self.beta1
        }
    }

    /// Percentage of this complex's cells added after `t` steps.
    pub fn percent(&self, t: usize) -> f64 {
        if self.total_cells == 0 {
            0.0
        } else {
            100.0 * t as f64 / self.total_cells as f64
        }
    }

    /// Smallest `t` attaining the maximum of the averaged curve.
    pub fn critical_step(&self, dim: u8) -> usize {
        let c = self.curve(dim);
        let mut best = 0;
        for (t, &v) in c.iter().enumerate() {
            if v > c[best] {
                best = t;
            }
        }
        best
    }
}

/// Pointwise mean of `n_trials` oracle-checked curves; trial `k` uses `derive_seed(base_seed, k)`.
pub fn averaged_curves(complex: &CellComplex2D, n_trials: usize, base_seed: u64) -> Result<AveragedCurves> {
    if n_trials == 0 {
        return Err(Error::InvalidParameter("n_trials must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..n_trials as u64).map(|k| derive_seed(base_seed, k)).collect();
    let trials: Vec<(BettiCurve, BettiCurve)> = seeds
        .par_iter()
        .map(|&s| checked_betti_curves(complex, &random_filtration(complex, s)))
        .collect::<Result<_>>()?;
    let total = complex.cell_count();
    let mean = |pick: fn(&(BettiCurve, BettiCurve)) -> &BettiCurve| {
        (0..=total)
            .map(|t| trials.iter().map(|c| pick(c).values[t] as f64).sum::<f64>() / n_trials as f64)
            .collect::<Vec<f64>>()
    };
    Ok(AveragedCurves {
        total_cells: total,
        beta0: mean(|c| &c.0),
        beta1: mean(|c| &c.1),
        trials,
        seeds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatMapGrid {
    pub dim: u8,
    pub epochs: Vec<usize>,
    pub bins: usize,
    /// Global maximum cell count used to normalize the y axis.
    pub max_cells: usize,
    /// `values[e][k]`: averaged Betti value of epoch `e` in bin `k`.
    pub values: Vec<Vec<f64>>,
    pub loss: Vec<f64>,
}

impl HeatMapGrid {
    pub fn max_value(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, &v| m.max(v))
    }

    /// `epoch,bin,y,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,bin,y,value\n");
        for (e, col) in self.epochs.iter().zip(&self.values) {
            for (k, v) in col.iter().enumerate() {
                writeln!(out, "{e},{k},{},{v}", k as f64 / self.bins as f64).unwrap();
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub epoch: usize,
    pub loss: f64,
    pub total_cells: usize,
    /// Smallest argmax step of the averaged `β0` / `β1` curves.
    pub step: [usize; 2],
    /// `step` divided by the global maximum cell count.
    pub normalized: [f64; 2],
    /// `step` as a percentage of this epoch's own cell count.
    pub percent: [f64; 2],
    pub peak: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatMaps {
    pub beta0: HeatMapGrid,
    pub beta1: HeatMapGrid,
    pub critical: Vec<CriticalPoint>,
}

impl HeatMaps {
    pub fn grid(&self, dim: u8) -> &HeatMapGrid {
        if dim == 0 {
            &self.beta0
        } else {
            &self.beta1
        }
    }

    /// `epoch,loss,total_cells,step0,norm0,percent0,peak0,step1,norm1,percent1,peak1` rows.
    pub fn critical_csv(&self) -> String {
        let mut out =
            String::from("epoch,loss,total_cells,step0,norm0,percent0,peak0,step1,norm1,percent1,peak1\n");
        for c in &self.critical {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                c.epoch,
                c.loss,
                c.total_cells,
                c.step[0],
                c.normalized[0],
                c.percent[0],
                c.peak[0],
                c.step[1],
                c.normalized[1],
                c.percent[1],
                c.peak[1]
            )
            .unwrap();
        }
        out
    }
}

/// One checkpoint's analysis input for [`heat_map`].
#[derive(Debug, Clone, Copy)]
pub struct SweepPoint<'a> {
    pub epoch: usize,
    pub complex: &'a CellComplex2D,
    pub loss: f64,
}

/// Resamples a curve onto `bins` bins of `y = t / max_cells`.
///
/// Each bin takes the maximum over the steps falling in it, so curve peaks
/// survive exactly. Bins with no step evaluate the step function at their
/// lower edge, holding the final value past the end of the curve.
pub fn resample(curve: &[f64], max_cells: usize, bins: usize) -> Vec<f64> {
    let mut out = vec![f64::NEG_INFINITY; bins];
    let last = curve.len().saturating_sub(1);
    for (t, &v) in curve.iter().enumerate() {
        let k = bin_of(t, max_cells, bins);
        out[k] = out[k].max(v);
    }
    for (k, slot) in out.iter_mut().enumerate() {
        if *slot == f64::NEG_INFINITY {
            let t = (k * max_cells).div_ceil(bins).min(last);
            *slot = curve.get(t).copied().unwrap_or(0.0);
        }
    }
    out
}

fn bin_of(t: usize, max_cells: usize, bins: usize) -> usize {
    if max_cells == 0 {
        return 0;
    }
    ((t * bins) / max_cells).min(bins - 1)
}

/// Heat maps from precomputed averaged curves.
pub fn heat_map_from_curves(entries: &[(usize, f64, &AveragedCurves)], bins: usize) -> Result<HeatMaps> {
    if entries.len() < 2 {
        return Err(Error::InvalidParameter("a heat map needs at least two epochs".into()));
    }
    if bins == 0 {
        return Err(Error::InvalidParameter("bins must be positive".into()));
    }
    let max_cells = entries.iter().map(|e| e.2.total_cells).max().unwrap_or(0).max(1);
    let epochs: Vec<usize> = entries.iter().map(|e| e.0).collect();
    let loss: Vec<f64> = entries.iter().map(|e| e.1).collect();
    let grid = |dim: u8| HeatMapGrid {
        dim,
        epochs: epochs.clone(),
        bins,
        max_cells,
        values: entries
            .iter()
            .map(|e| resample(e.2.curve(dim), max_cells, bins))
            .collect(),
        loss: loss.clone(),
    };
    let critical = entries
        .iter()
        .map(|&(epoch, loss, c)| {
            let step = [c.critical_step(0), c.critical_step(1)];
            CriticalPoint {
                epoch,
                loss,
                total_cells: c.total_cells,
                step,
                normalized: step.map(|s| s as f64 / max_cells as f64),
                percent: step.map(|s| c.percent(s)),
                peak: [c.beta0[step[0]], c.beta1[step[1]]],
            }
        })
        .collect();
    Ok(HeatMaps {
        beta0: grid(0),
        beta1: grid(1),
        critical,
    })
}

/// Averaged curves per checkpoint (trials seeded by `base_seed`), then heat maps.
pub fn heat_map(sweep: &[SweepPoint<'_>], n_trials: usize, base_seed: u64, bins: usize) -> Result<HeatMaps> {
    let curves: Vec<AveragedCurves> = sweep
        .par_iter()
        .map(|p| averaged_curves(p.complex, n_trials, base_seed))
        .collect::<Result<_>>()?;
    let entries: Vec<(usize, f64, &AveragedCurves)> = sweep
        .iter()
        .zip(&curves)
        .map(|(p, c)| (p.epoch, p.loss, c))
        .collect();
    heat_map_from_curves(&entries, bins)
}

/// `epoch,trial,dim,t,percent,beta` rows; averaged rows use `mean` as the trial.
pub fn curves_csv(entries: &[(usize, &AveragedCurves)], include_trials: bool) -> String {
    let mut out = String::from("epoch,trial,dim,t,percent,beta\n");
    for &(epoch, c) in entries {
        for dim in 0..2u8 {
            for (t, v) in c.curve(dim).iter().enumerate() {
                writeln!(out, "{epoch},mean,{dim},{t},{},{v}", c.percent(t)).unwrap();
            }
            if include_trials {
                for (k, tr) in c.trials.iter().enumerate() {
                    let curve = if dim == 0 { &tr.0 } else { &tr.1 };
                    for (t, v) in curve.values.iter().enumerate() {
                        writeln!(out, "{epoch},{k},{dim},{t},{},{v}", c.percent(t)).unwrap();
                    }
                }
            }
        }
    }
    out
}

/// Pearson correlation; `None` when either series has zero variance or fewer than two points.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCriticalCorrelation {
    pub dim: u8,
    pub n_deltas: usize,
    pub pearson: Option<f64>,
}

/// Correlation between consecutive loss changes and critical-filtration changes.
pub fn loss_critical_correlation(critical: &[CriticalPoint]) -> Vec<LossCriticalCorrelation> {
    let dl: Vec<f64> = critical.windows(2).map(|w| w[1].loss - w[0].loss).collect();
    (0..2u8)
        .map(|dim| {
            let dc: Vec<f64> = critical
                .windows(2)
                .map(|w| w[1].normalized[usize::from(dim)] - w[0].normalized[usize::from(dim)])
                .collect();
            LossCriticalCorrelation {
                dim,
                n_deltas: dl.len(),
                pearson: pearson(&dl, &dc),
            }
        })
        .collect()
}

/// `dim,n_deltas,pearson` rows, `NaN` when undefined.
pub fn correlation_csv(rows: &[LossCriticalCorrelation]) -> String {
    let mut out = String::from("dim,n_deltas,pearson\n");
    for r in rows {
        match r.pearson {
            Some(p) => writeln!(out, "{},{},{p}", r.dim, r.n_deltas).unwrap(),
            None => writeln!(out, "{},{},NaN", r.dim, r.n_deltas).unwrap(),
        }
    }
    out
}
