use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use polytope_scope::datagen::{
    duffing_trajectory, gen_two_circles, gen_two_moons, pinn_pairs, DuffingTrajectory,
    LabeledDataset2D,
};
use polytope_scope::dualgraph::build_dual_graph;
use polytope_scope::homology::{
    averaged_curves, correlation_csv, curves_csv, HeatMaps, LossCriticalCorrelation,
};
use polytope_scope::io::{read_json, write_atomic, write_json};
use polytope_scope::nn::{init_network, Checkpoint, ReluNetwork};
use polytope_scope::polydecomp::{decompose, f_vector_csv, BoundingBox2D, CellComplex2D, FVector};
use polytope_scope::report::{
    render_curves_svg, render_decomposition_svg, render_heatmap_svg, render_partition_svg,
    summary_table, ChartOptions, DecompositionSvgOptions, ExperimentSummary, Series,
};
use polytope_scope::sweep::{fiedler_partitions, run_sweep, Partitions, SweepSettings};
use polytope_scope::trainer::{bce_with_logits, class_targets, train, TrainingData};

use crate::config::RunConfig;
use crate::CliError;

const DATA_FILE: &str = "data.csv";
const TRAJECTORY_FILE: &str = "trajectory.csv";
const MANIFEST_FILE: &str = "manifest.json";
const SWEEP_FILE: &str = "sweep.json";

/// Files written by each command, relative to the run directory.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub commands: BTreeMap<String, Vec<String>>,
}

pub struct Run {
    pub cfg: RunConfig,
    pub dir: PathBuf,
    written: Vec<String>,
}

pub enum Data {
    Labeled(LabeledDataset2D),
    Trajectory(DuffingTrajectory),
}

impl Run {
    pub fn new(cfg: RunConfig) -> Self {
        let dir = cfg.output_dir();
        Self {
            cfg,
            dir,
            written: Vec::new(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(&self.path(name), bytes)?;
        self.note(name);
        Ok(())
    }

    fn put_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        write_json(&self.path(name), value)?;
        self.note(name);
        Ok(())
    }

    fn note(&mut self, name: &str) {
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
    }

    /// Echoes the config and records this command's files in the manifest.
    pub fn finish(mut self, command: &str) -> Result<(), CliError> {
        self.put_json("run.json", &self.cfg.clone())?;
        let path = self.path(MANIFEST_FILE);
        let mut manifest: Manifest = if path.exists() {
            read_json(&path)?
        } else {
            Manifest::default()
        };
        let mut files = std::mem::take(&mut self.written);
        files.sort();
        manifest.commands.insert(command.to_string(), files);
        write_json(&path, &manifest)?;
        Ok(())
    }

    fn require(&self, name: &str, hint: &str) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::MissingInput {
                path: p,
                reason: format!("run `{hint}` first"),
            })
        }
    }

    fn load_data(&self) -> Result<Data, CliError> {
        if self.cfg.task.is_classification() {
            let p = self.require(DATA_FILE, "gen-data")?;
            Ok(Data::Labeled(LabeledDataset2D::load_csv(&p)?))
        } else {
            let p = self.require(TRAJECTORY_FILE, "gen-data")?;
            Ok(Data::Trajectory(DuffingTrajectory::load_csv(&p)?))
        }
    }

    fn analysis_box(&self, data: &Data) -> Result<BoundingBox2D, CliError> {
        if let Some(b) = self.cfg.decomposition.bbox {
            return Ok(b);
        }
        let grow = self.cfg.decomposition.inflation.unwrap_or(0.0);
        let (x0, x1, y0, y1) = match data {
            Data::Labeled(ds) => ds.bounds(),
            Data::Trajectory(t) => {
                let lo = t.positions.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = t.positions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (0.0, polytope_scope::datagen::DUFFING_HORIZON, lo, hi)
            }
        };
        Ok(BoundingBox2D::new(x0, x1, y0, y1)?.inflated(grow))
    }

    fn checkpoint_epochs(&self) -> Result<Vec<usize>, CliError> {
        let mut epochs = Vec::new();
        let entries = std::fs::read_dir(&self.dir).map_err(|e| CliError::MissingInput {
            path: self.dir.clone(),
            reason: e.to_string(),
        })?;
        for entry in entries.flatten() {
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(e) = name
                .strip_prefix("ckpt_")
                .and_then(|s| s.strip_suffix(".json"))
                .and_then(|s| s.parse().ok())
            {
                epochs.push(e);
            }
        }
        epochs.sort_unstable();
        if epochs.is_empty() {
            return Err(CliError::MissingInput {
                path: self.dir.join("ckpt_*.json"),
                reason: "run `train` first".into(),
            });
        }
        Ok(epochs)
    }

    fn load_checkpoint(&self, epoch: Option<usize>) -> Result<Checkpoint, CliError> {
        let epochs = self.checkpoint_epochs()?;
        let e = match epoch {
            Some(e) if epochs.contains(&e) => e,
            Some(e) => {
                return Err(CliError::MissingInput {
                    path: polytope_scope::trainer::checkpoint_path(&self.dir, e),
                    reason: format!("available epochs: {epochs:?}"),
                })
            }
            None => *epochs.last().unwrap_or(&0),
        };
        Ok(Checkpoint::load(&polytope_scope::trainer::checkpoint_path(&self.dir, e))?)
    }

    fn decompose_checkpoint(
        &self,
        ckpt: &Checkpoint,
        data: &Data,
    ) -> Result<(ReluNetwork, CellComplex2D), CliError> {
        let net = ckpt.network()?;
        let bbox = self.analysis_box(data)?;
        let complex = decompose(&net, &bbox, self.cfg.decomposition.tol)?;
        Ok((net, complex))
    }

    fn decomposition_svgs(&mut self, epoch: usize, complex: &CellComplex2D) -> Result<(), CliError> {
        let mut o = DecompositionSvgOptions {
            title: Some(format!("{} decomposition, epoch {epoch}", self.cfg.task.name())),
            ..Default::default()
        };
        self.put(&format!("decomposition_{epoch}.svg"), render_decomposition_svg(complex, &o).as_bytes())?;
        if let Some(z) = self.cfg.decomposition.zoom {
            o.zoom = Some(z);
            self.put(
                &format!("decomposition_{epoch}_zoom.svg"),
                render_decomposition_svg(complex, &o).as_bytes(),
            )?;
        }
        Ok(())
    }
}

pub fn gen_data(run: &mut Run) -> Result<(), CliError> {
    let d = &run.cfg.data;
    if run.cfg.task.is_classification() {
        let ds = match run.cfg.task {
            crate::config::Task::Circles => {
                gen_two_circles(d.n, d.r_inner, d.r_outer, d.noise_sd, run.cfg.seed)?
            }
            _ => gen_two_moons(d.n, d.noise_sd, run.cfg.seed)?,
        };
        run.put(DATA_FILE, ds.to_csv().as_bytes())?;
        log::info!("{} points ({} train)", ds.len(), ds.train.len());
    } else {
        let t = duffing_trajectory(&d.duffing, d.n_steps, d.dt)?;
        run.put(TRAJECTORY_FILE, t.to_csv().as_bytes())?;
        log::info!("{} trajectory samples", t.len());
    }
    Ok(())
}

pub fn train_cmd(run: &mut Run) -> Result<(), CliError> {
    let data = match run.load_data()? {
        Data::Labeled(ds) => TrainingData::Classification(ds),
        Data::Trajectory(t) => TrainingData::Pinn {
            pairs: pinn_pairs(&t)?,
            params: run.cfg.data.duffing,
        },
    };
    let net = init_network(&run.cfg.architecture()?, run.cfg.seed);
    let tc = run.cfg.train_config()?;
    let out = train(&net, &data, &tc, Some(&run.dir))?;
    for f in &out.checkpoint_files {
        if let Some(name) = f.file_name() {
            run.note(&name.to_string_lossy());
        }
    }
    run.note("log.csv");
    if let Some(last) = out.logs.last() {
        log::info!("epoch {}: train loss {:.3e}", last.epoch, last.train_loss);
    }
    Ok(())
}

pub fn decompose_cmd(run: &mut Run, epoch: Option<usize>) -> Result<(), CliError> {
    let data = run.load_data()?;
    let ckpt = run.load_checkpoint(epoch)?;
    let (_, complex) = run.decompose_checkpoint(&ckpt, &data)?;
    let e = ckpt.epoch;
    run.put_json(&format!("complex_{e}.json"), &complex.to_file())?;
    run.put(&format!("f_vector_{e}.csv"), f_vector_csv(&[(e, complex.f_vector())]).as_bytes())?;
    run.decomposition_svgs(e, &complex)?;
    let fv = complex.f_vector();
    log::info!("epoch {e}: f-vector ({}, {}, {})", fv.f0, fv.f1, fv.f2);
    Ok(())
}

/// Mean BCE over the stored split, averaged over both logits.
fn split_loss(net: &ReluNetwork, points: &[[f64; 2]], labels: &[u8]) -> Result<f64, CliError> {
    if points.is_empty() {
        return Ok(f64::NAN);
    }
    let mut logits = Vec::new();
    for p in points {
        logits.extend(net.predict(p)?);
    }
    let targets: Vec<f64> = class_targets(labels, net.output_dim()).into_iter().flatten().collect();
    Ok(bce_with_logits(&logits, &targets))
}

pub fn fiedler_cmd(run: &mut Run, epoch: Option<usize>) -> Result<(), CliError> {
    let Data::Labeled(ds) = run.load_data()? else {
        return Err(CliError::Unsupported(
            "fiedler needs a classification task".into(),
        ));
    };
    let data = Data::Labeled(ds.clone());
    let ckpt = run.load_checkpoint(epoch)?;
    let (net, complex) = run.decompose_checkpoint(&ckpt, &data)?;
    let e = ckpt.epoch;
    let p = fiedler_partitions(&complex, &net, &ds)?;
    let g = build_dual_graph(&complex);
    run.put(&format!("dual_graph_{e}.csv"), g.to_csv().as_bytes())?;
    for (tag, rep) in [("unweighted", &p.unweighted), ("weighted", &p.weighted)] {
        run.put_json(&format!("partition_{e}_{tag}.json"), rep)?;
        let o = DecompositionSvgOptions {
            title: Some(format!("{} {tag} Fiedler partition, epoch {e}", run.cfg.task.name())),
            ..Default::default()
        };
        run.put(&format!("partition_{e}_{tag}.svg"), render_partition_svg(&complex, rep, &o).as_bytes())?;
    }
    let summary = ExperimentSummary {
        dataset: run.cfg.task.name().to_string(),
        architecture: run.cfg.architecture()?.to_string(),
        train_loss: split_loss(&net, &ds.train_points(), &ds.train_labels())?,
        test_loss: split_loss(&net, &ds.test_points(), &ds.test_labels())?,
        unweighted_misclass_pct: 100.0 * p.unweighted.misclassified_fraction,
        unweighted_l2: p.unweighted.l2_error,
        weighted_misclass_pct: 100.0 * p.weighted.misclassified_fraction,
        weighted_l2: p.weighted.l2_error,
        seed: run.cfg.seed,
    };
    run.put("summary.csv", summary_table(std::slice::from_ref(&summary)).as_bytes())?;
    run.put_json("summary.json", &summary)?;
    log::info!(
        "epoch {e}: unweighted {:.2}% / {:.3}, weighted {:.2}% / {:.3}",
        summary.unweighted_misclass_pct,
        summary.unweighted_l2,
        summary.weighted_misclass_pct,
        summary.weighted_l2
    );
    Ok(())
}

fn betti_series(curves: &polytope_scope::homology::AveragedCurves) -> Vec<Series> {
    (0..2u8)
        .map(|d| Series {
            name: format!("beta{d}"),
            points: curves
                .curve(d)
                .iter()
                .enumerate()
                .map(|(t, &v)| (curves.percent(t), v))
                .collect(),
        })
        .collect()
}

pub fn homology_cmd(run: &mut Run, epoch: Option<usize>) -> Result<(), CliError> {
    let data = run.load_data()?;
    let ckpt = run.load_checkpoint(epoch)?;
    let (_, complex) = run.decompose_checkpoint(&ckpt, &data)?;
    let e = ckpt.epoch;
    let curves = averaged_curves(&complex, run.cfg.homology.n_trials, run.cfg.homology_seed())?;
    run.put(
        &format!("curves_{e}.csv"),
        curves_csv(&[(e, &curves)], run.cfg.homology.write_trial_curves).as_bytes(),
    )?;
    let o = ChartOptions::new(
        &format!("Averaged Betti curves, epoch {e}"),
        "cells added (%)",
        "Betti number",
    );
    run.put(&format!("curves_{e}.svg"), render_curves_svg(&betti_series(&curves), None, &o).as_bytes())?;
    let fv = complex.f_vector();
    log::info!(
        "epoch {e}: max beta0 {} (f0 {}), max beta1 {} (f2 {})",
        curves.beta0.iter().cloned().fold(0.0, f64::max),
        fv.f0,
        curves.beta1.iter().cloned().fold(0.0, f64::max),
        fv.f2
    );
    Ok(())
}

/// Everything `plot` needs from a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepFile {
    pub task: String,
    pub epochs: Vec<usize>,
    pub losses: Vec<f64>,
    pub f_vectors: Vec<FVector>,
    pub heat: Option<HeatMaps>,
    pub correlation: Vec<LossCriticalCorrelation>,
    pub partitions: Vec<Option<Partitions>>,
}

pub fn sweep_cmd(run: &mut Run) -> Result<(), CliError> {
    let data = run.load_data()?;
    let bbox = run.analysis_box(&data)?;
    let ckpts: Vec<Checkpoint> = run
        .checkpoint_epochs()?
        .into_iter()
        .map(|e| Checkpoint::load(&polytope_scope::trainer::checkpoint_path(&run.dir, e)))
        .collect::<Result<_, _>>()?;
    let settings = SweepSettings {
        n_trials: run.cfg.homology.n_trials,
        base_seed: run.cfg.homology_seed(),
        bins: run.cfg.homology.bins,
        tol: run.cfg.decomposition.tol,
    };
    let labeled = match &data {
        Data::Labeled(ds) => Some(ds),
        Data::Trajectory(_) => None,
    };
    let r = run_sweep(&ckpts, &bbox, &settings, labeled)?;
    for a in &r.analyses {
        run.put_json(&format!("complex_{}.json", a.epoch), &a.complex.to_file())?;
    }
    run.put("f_vector.csv", f_vector_csv(&r.f_vector_rows()).as_bytes())?;
    run.put("epochs.csv", r.epochs_csv().as_bytes())?;
    let entries: Vec<(usize, &polytope_scope::homology::AveragedCurves)> =
        r.analyses.iter().map(|a| (a.epoch, &a.curves)).collect();
    run.put("curves.csv", curves_csv(&entries, run.cfg.homology.write_trial_curves).as_bytes())?;
    if let Some(h) = &r.heat {
        run.put("heatmap_beta0.csv", h.beta0.to_csv().as_bytes())?;
        run.put("heatmap_beta1.csv", h.beta1.to_csv().as_bytes())?;
        run.put("critical.csv", h.critical_csv().as_bytes())?;
    }
    run.put("correlation.csv", correlation_csv(&r.correlation).as_bytes())?;
    let file = SweepFile {
        task: run.cfg.task.name().to_string(),
        epochs: r.analyses.iter().map(|a| a.epoch).collect(),
        losses: r.analyses.iter().map(|a| a.loss).collect(),
        f_vectors: r.analyses.iter().map(|a| a.f_vector).collect(),
        heat: r.heat.clone(),
        correlation: r.correlation.clone(),
        partitions: r.analyses.iter().map(|a| a.partitions.clone()).collect(),
    };
    run.put_json(SWEEP_FILE, &file)?;
    for c in &r.correlation {
        match c.pearson {
            Some(p) => log::info!("beta{} loss/critical-filtration correlation {p:.4}", c.dim),
            None => log::info!("beta{} loss/critical-filtration correlation undefined", c.dim),
        }
    }
    Ok(())
}

pub fn plot_cmd(run: &mut Run) -> Result<(), CliError> {
    let sweep: SweepFile = read_json(&run.require(SWEEP_FILE, "sweep")?)?;
    let name = sweep.task.clone();
    if let Some(h) = &sweep.heat {
        for d in 0..2u8 {
            let o = ChartOptions::new(
                &format!("{name}: averaged beta{d} across training"),
                "epoch",
                "cells added / max cells",
            );
            run.put(&format!("heatmap_beta{d}.svg"), render_heatmap_svg(h.grid(d), &o).as_bytes())?;
        }
        let crit: Vec<Series> = (0..2usize)
            .map(|d| Series {
                name: format!("beta{d} peak position"),
                points: h.critical.iter().map(|c| (c.epoch as f64, c.normalized[d])).collect(),
            })
            .collect();
        let loss = loss_series(&sweep);
        let o = ChartOptions::new(&format!("{name}: critical filtration value"), "epoch", "cells added / max cells");
        run.put("critical.svg", render_curves_svg(&crit, Some(&loss), &o).as_bytes())?;
    }
    let fv: Vec<Series> = ["f0", "f1", "f2"]
        .iter()
        .enumerate()
        .map(|(i, n)| Series {
            name: (*n).to_string(),
            points: sweep
                .epochs
                .iter()
                .zip(&sweep.f_vectors)
                .map(|(&e, f)| (e as f64, [f.f0, f.f1, f.f2][i] as f64))
                .collect(),
        })
        .collect();
    let o = ChartOptions::new(&format!("{name}: f-vector across training"), "epoch", "cells");
    run.put("f_vector.svg", render_curves_svg(&fv, Some(&loss_series(&sweep)), &o).as_bytes())?;
    for &e in &sweep.epochs {
        let p = run.path(&format!("complex_{e}.json"));
        if p.exists() {
            let complex = CellComplex2D::load(&p)?;
            run.decomposition_svgs(e, &complex)?;
        }
    }
    Ok(())
}

fn loss_series(s: &SweepFile) -> Series {
    Series {
        name: "loss".into(),
        points: s.epochs.iter().zip(&s.losses).map(|(&e, &l)| (e as f64, l)).collect(),
    }
}
