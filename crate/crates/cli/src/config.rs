//! Run configuration. Task-dependent fields are optional in the file and
//! filled in by [`RunConfig::resolve`]; the resolved form is echoed to `run.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use polytope_scope::datagen::DuffingParams;
use polytope_scope::homology::{DEFAULT_TRIALS, HEAT_MAP_BINS};
use polytope_scope::nn::ArchitectureSpec;
use polytope_scope::polydecomp::{BoundingBox2D, DEFAULT_TOL};
use polytope_scope::trainer::{AdamConfig, LossKind, TrainConfig};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Circles,
    Moons,
    PinnDuffing,
}

impl Task {
    pub fn is_classification(self) -> bool {
        !matches!(self, Task::PinnDuffing)
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Circles => "Circles",
            Task::Moons => "Moons",
            Task::PinnDuffing => "Duffing PINN",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n: usize,
    pub r_inner: f64,
    pub r_outer: f64,
    pub noise_sd: f64,
    pub n_steps: usize,
    pub dt: f64,
    pub duffing: DuffingParams,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n: 200,
            r_inner: 0.5,
            r_outer: 1.0,
            noise_sd: 0.05,
            n_steps: 200,
            dt: 0.1,
            duffing: DuffingParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub checkpoint_every: Option<usize>,
    pub adam: AdamConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecompositionConfig {
    pub tol: f64,
    /// Explicit analysis box; otherwise derived from the data.
    #[serde(rename = "box")]
    pub bbox: Option<BoundingBox2D>,
    /// Relative growth of the data bounding box when `box` is unset.
    pub inflation: Option<f64>,
    /// Optional window for an extra zoomed decomposition figure.
    pub zoom: Option<BoundingBox2D>,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            bbox: None,
            inflation: None,
            zoom: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HomologyConfig {
    pub n_trials: usize,
    /// Base seed for filtration trials; defaults to the run seed.
    pub seed: Option<u64>,
    pub bins: usize,
    /// Also write every trial's curve, not only the averages.
    pub write_trial_curves: bool,
}

impl Default for HomologyConfig {
    fn default() -> Self {
        Self {
            n_trials: DEFAULT_TRIALS,
            seed: None,
            bins: HEAT_MAP_BINS,
            write_trial_curves: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Worker threads; defaults to the available parallelism.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub architecture: Option<Vec<usize>>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub decomposition: DecompositionConfig,
    #[serde(default)]
    pub homology: HomologyConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::MissingInput {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Fills task-dependent defaults and validates everything.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        let (arch, epochs, every) = match self.task {
            Task::Circles => (vec![2, 6, 6, 2], 4000, 500),
            Task::Moons => (vec![2, 5, 5, 5, 2], 2000, 250),
            Task::PinnDuffing => (vec![2, 50, 50, 50, 50, 1], 10000, 250),
        };
        self.architecture.get_or_insert(arch);
        self.trainer.epochs.get_or_insert(epochs);
        self.trainer.learning_rate.get_or_insert(0.01);
        self.trainer.checkpoint_every.get_or_insert(every);
        self.decomposition.inflation.get_or_insert(if self.task.is_classification() {
            0.2
        } else {
            0.1
        });
        self.homology.seed.get_or_insert(self.seed);
        if self.output_dir.is_none() {
            self.output_dir = Some(PathBuf::from(format!("runs/{}-seed{}", self.task_slug(), self.seed)));
        }
        self.validate().map_err(|e| match e {
            CliError::Core(c) => CliError::Config(c.to_string()),
            other => other,
        })?;
        Ok(self)
    }

    fn task_slug(&self) -> &'static str {
        match self.task {
            Task::Circles => "circles",
            Task::Moons => "moons",
            Task::PinnDuffing => "pinn-duffing",
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let arch = self.architecture()?;
        if arch.input_dim() != 2 {
            return bad(format!("architecture must take 2 inputs, got {arch}"));
        }
        let want_out = if self.task.is_classification() { 2 } else { 1 };
        if arch.output_dim() != want_out {
            return bad(format!("{} needs {want_out} output(s), got {arch}", self.task.name()));
        }
        self.train_config()?.validate()?;
        if self.task.is_classification() && (self.data.n < 2 || !self.data.n.is_multiple_of(2)) {
            return bad(format!("data.n must be even and at least 2, got {}", self.data.n));
        }
        if !self.task.is_classification() && self.data.n_steps < 2 {
            return bad("data.n_steps must be at least 2".into());
        }
        if !(self.decomposition.tol > 0.0) {
            return bad("decomposition.tol must be positive".into());
        }
        if let Some(b) = &self.decomposition.bbox {
            b.validate()?;
        }
        if let Some(z) = &self.decomposition.zoom {
            z.validate()?;
        }
        if self.decomposition.inflation.is_some_and(|f| !(f >= 0.0)) {
            return bad("decomposition.inflation must be nonnegative".into());
        }
        if self.homology.n_trials == 0 || self.homology.bins == 0 {
            return bad("homology.n_trials and homology.bins must be positive".into());
        }
        if self.sweep.threads == Some(0) {
            return bad("sweep.threads must be positive".into());
        }
        Ok(())
    }

    pub fn architecture(&self) -> Result<ArchitectureSpec, CliError> {
        let widths = self
            .architecture
            .clone()
            .ok_or_else(|| CliError::Config("architecture unresolved".into()))?;
        Ok(ArchitectureSpec::new(widths)?)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let loss_kind = if self.task.is_classification() {
            LossKind::BceWithLogits
        } else {
            LossKind::PinnDuffing
        };
        let mut c = TrainConfig::new(
            self.trainer.epochs.unwrap_or(0),
            loss_kind,
            self.trainer.checkpoint_every.unwrap_or(0),
            self.seed,
        );
        if let Some(lr) = self.trainer.learning_rate {
            c.learning_rate = lr;
        }
        c.adam = self.trainer.adam;
        Ok(c)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn homology_seed(&self) -> u64 {
        self.homology.seed.unwrap_or(self.seed)
    }
}
