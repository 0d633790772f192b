//! Per-checkpoint analysis across a training run: decomposition, f-vector,
//! averaged Betti curves and, for labeled data, Fiedler partitions.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{DuffingTrajectory, LabeledDataset2D};
use crate::dualgraph::{
    build_dual_graph, fiedler, score_partition, vertex_weights_from_data, PartitionReport,
    WeightedLaplacianSpec,
};
use crate::error::Result;
use crate::homology::{
    averaged_curves, heat_map_from_curves, loss_critical_correlation, AveragedCurves, HeatMaps,
    LossCriticalCorrelation, DEFAULT_TRIALS, HEAT_MAP_BINS,
};
use crate::nn::{Checkpoint, ReluNetwork};
use crate::polydecomp::{decompose, BoundingBox2D, CellComplex2D, FVector, DEFAULT_TOL};

pub const CLASSIFICATION_INFLATION: f64 = 0.2;
pub const PINN_INFLATION: f64 = 0.1;

/// Data bounding box grown by 20%.
pub fn classification_box(ds: &LabeledDataset2D) -> Result<BoundingBox2D> {
    let (x0, x1, y0, y1) = ds.bounds();
    Ok(BoundingBox2D::new(x0, x1, y0, y1)?.inflated(CLASSIFICATION_INFLATION))
}

/// `[0, 20] × [min x, max x]` grown by 10%.
pub fn pinn_box(traj: &DuffingTrajectory) -> Result<BoundingBox2D> {
    let lo = traj.positions.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = traj.positions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(BoundingBox2D::new(0.0, crate::datagen::DUFFING_HORIZON, lo, hi)?.inflated(PINN_INFLATION))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partitions {
    pub nodes: usize,
    pub edges: usize,
    pub unweighted: PartitionReport,
    pub weighted: PartitionReport,
    /// Hamming-1 pairs without a shared edge in the complex.
    pub non_geometric_edges: usize,
}

/// Unweighted and training-point-weighted Fiedler partitions scored on the training set.
pub fn fiedler_partitions(
    complex: &CellComplex2D,
    net: &ReluNetwork,
    ds: &LabeledDataset2D,
) -> Result<Partitions> {
    let g = build_dual_graph(complex);
    let (extra, _) = g.adjacency_discrepancies(complex);
    if !extra.is_empty() {
        log::info!("{} Hamming-1 dual edges join faces that share no edge", extra.len());
    }
    let pts = ds.train_points();
    let labels = ds.train_labels();
    let score = |spec: &WeightedLaplacianSpec| -> Result<PartitionReport> {
        let f = fiedler(&g, spec)?;
        score_partition(&g, f.value, &f.vector, complex, net, &pts, &labels)
    };
    let unweighted = score(&WeightedLaplacianSpec::unweighted(&g))?;
    let weighted = score(&vertex_weights_from_data(complex, net, &pts)?)?;
    Ok(Partitions {
        nodes: g.node_count(),
        edges: g.edges.len(),
        unweighted,
        weighted,
        non_geometric_edges: extra.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub n_trials: usize,
    pub base_seed: u64,
    pub bins: usize,
    pub tol: f64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            n_trials: DEFAULT_TRIALS,
            base_seed: 0,
            bins: HEAT_MAP_BINS,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckpointAnalysis {
    pub epoch: usize,
    pub loss: f64,
    pub complex: CellComplex2D,
    pub f_vector: FVector,
    pub curves: AveragedCurves,
    pub partitions: Option<Partitions>,
}

pub fn analyze_checkpoint(
    ckpt: &Checkpoint,
    bbox: &BoundingBox2D,
    settings: &SweepSettings,
    labeled: Option<&LabeledDataset2D>,
) -> Result<CheckpointAnalysis> {
    let net = ckpt.network()?;
    let complex = decompose(&net, bbox, settings.tol)?;
    let curves = averaged_curves(&complex, settings.n_trials, settings.base_seed)?;
    let partitions = match labeled {
        Some(ds) => match fiedler_partitions(&complex, &net, ds) {
            Ok(p) => Some(p),
            Err(e) => {
                log::warn!("epoch {}: no Fiedler partition ({e})", ckpt.epoch);
                None
            }
        },
        None => None,
    };
    Ok(CheckpointAnalysis {
        epoch: ckpt.epoch,
        loss: ckpt.loss,
        f_vector: complex.f_vector(),
        complex,
        curves,
        partitions,
    })
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub analyses: Vec<CheckpointAnalysis>,
    pub heat: Option<HeatMaps>,
    pub correlation: Vec<LossCriticalCorrelation>,
}

impl SweepResult {
    pub fn f_vector_rows(&self) -> Vec<(usize, FVector)> {
        self.analyses.iter().map(|a| (a.epoch, a.f_vector)).collect()
    }

    /// `epoch,loss,f0,f1,f2,unweighted_misclass,unweighted_l2,weighted_misclass,weighted_l2` rows.
    pub fn epochs_csv(&self) -> String {
        let mut out = String::from(
            "epoch,loss,f0,f1,f2,unweighted_misclass,unweighted_l2,weighted_misclass,weighted_l2\n",
        );
        for a in &self.analyses {
            let fv = a.f_vector;
            write!(out, "{},{},{},{},{}", a.epoch, a.loss, fv.f0, fv.f1, fv.f2).unwrap();
            match &a.partitions {
                Some(p) => writeln!(
                    out,
                    ",{},{},{},{}",
                    p.unweighted.misclassified_fraction,
                    p.unweighted.l2_error,
                    p.weighted.misclassified_fraction,
                    p.weighted.l2_error
                )
                .unwrap(),
                None => out.push_str(",,,,\n"),
            }
        }
        out
    }
}

/// Analyzes every checkpoint in parallel; results are ordered by epoch.
pub fn run_sweep(
    checkpoints: &[Checkpoint],
    bbox: &BoundingBox2D,
    settings: &SweepSettings,
    labeled: Option<&LabeledDataset2D>,
) -> Result<SweepResult> {
    let mut analyses: Vec<CheckpointAnalysis> = checkpoints
        .par_iter()
        .map(|c| analyze_checkpoint(c, bbox, settings, labeled))
        .collect::<Result<_>>()?;
    analyses.sort_by_key(|a| a.epoch);
    let heat = if analyses.len() >= 2 {
        let entries: Vec<(usize, f64, &AveragedCurves)> =
            analyses.iter().map(|a| (a.epoch, a.loss, &a.curves)).collect();
        Some(heat_map_from_curves(&entries, settings.bins)?)
    } else {
        None
    };
    let correlation = heat
        .as_ref()
        .map(|h| loss_critical_correlation(&h.critical))
        .unwrap_or_default();
    Ok(SweepResult {
        analyses,
        heat,
        correlation,
    })
}
