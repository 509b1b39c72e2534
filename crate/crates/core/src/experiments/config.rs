//! Experiment configuration.
//!
//! A config file only needs the keys it changes. Loading layers the file over
//! the defaults of its task, and the fully expanded result is what every
//! report echoes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::datasets::SphereSampling;
use crate::error::{Error, Result};
use crate::net::{
    hidden_dim_for_budget, mlp_dims, o5_epochs, Activation, Loss, NetSpec, TrainConfig,
};
use crate::polarization::{InputAction, SeedMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    O5,
    Sphere,
    RotImages,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// The deep network trained end to end.
    Mlp7,
    /// The shallow sub-network with a linear head, trained alone.
    Sub3,
    /// Pretrained sub-network weights injected, then everything trained.
    Finetune,
    /// Pretrained sub-network weights injected and frozen.
    Freeze,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::Mlp7, Regime::Sub3, Regime::Finetune, Regime::Freeze];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Mlp7 => "mlp7",
            Regime::Sub3 => "sub3",
            Regime::Finetune => "finetune",
            Regime::Freeze => "freeze",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub n_samples: usize,
    /// Standard deviation of the regression inputs.
    pub input_std: f64,
    pub sphere_dim: usize,
    pub sphere_sampling: SphereSampling,
    pub image_size: usize,
    pub classes: usize,
    pub sigma_smooth: f64,
    /// Trailing share of the samples held out for validation.
    pub val_fraction: f64,
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
    /// Randomly rotate loaded IDX images.
    pub augment: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// Explicit widths from input to output. Filled from `param_budget` when absent.
    pub layer_dims: Option<Vec<usize>>,
    pub param_budget: Option<usize>,
    pub hidden_layers: usize,
    pub activation: Activation,
    pub output_l2_normalize: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionConfig {
    pub seed_mode: SeedMode,
    pub rel_tol: f64,
    pub subsample_fraction: f64,
    pub num_generators: usize,
    pub action: InputAction,
    /// Group parameters at which PGM snapshots are written (image tasks).
    pub pgm_times: Vec<f64>,
    pub pgm_images: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub budgets: Vec<usize>,
    pub depths: Vec<usize>,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerwiseConfig {
    pub regimes: Vec<Regime>,
    pub hidden: usize,
    /// Layer count of the deep network.
    pub depth: usize,
    /// Layers shared with the pretrained sub-network.
    pub sub_layers: usize,
    pub seed_mode: SeedMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleComplexityConfig {
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub seed: u64,
    pub data: DataConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub extraction: ExtractionConfig,
    pub sweep: SweepConfig,
    pub layerwise: LayerwiseConfig,
    pub sample_complexity: SampleComplexityConfig,
    /// Load this network instead of training one.
    pub checkpoint: Option<PathBuf>,
    pub output_dir: PathBuf,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn defaults(task: Task) -> Self {
        let data = DataConfig {
            n_samples: 1000,
            input_std: 1.0,
            sphere_dim: 5,
            sphere_sampling: SphereSampling::Uniform,
            image_size: 16,
            classes: 10,
            sigma_smooth: 1.0,
            val_fraction: 0.0,
            idx_images: None,
            idx_labels: None,
            augment: true,
        };
        let net = NetConfig {
            layer_dims: None,
            param_budget: None,
            hidden_layers: 4,
            activation: Activation::Swish,
            output_l2_normalize: false,
        };
        let extraction = ExtractionConfig {
            seed_mode: SeedMode::SumOutputs,
            rel_tol: 1e-6,
            subsample_fraction: 1.0,
            num_generators: 10,
            action: InputAction::Full,
            pgm_times: Vec::new(),
            pgm_images: 0,
        };
        let mut cfg = ExperimentConfig {
            task,
            seed: 1,
            data,
            net,
            train: TrainConfig::default(),
            extraction,
            sweep: SweepConfig {
                budgets: vec![2000, 4000],
                depths: vec![1, 2, 3],
                seeds: vec![1, 2],
            },
            layerwise: LayerwiseConfig {
                regimes: Regime::ALL.to_vec(),
                hidden: 32,
                depth: 7,
                sub_layers: 3,
                seed_mode: SeedMode::per_output(),
            },
            sample_complexity: SampleComplexityConfig {
                fractions: vec![0.0025, 0.01, 0.05, 0.25, 1.0],
                seeds: (1..=8).collect(),
            },
            checkpoint: None,
            output_dir: PathBuf::from("out"),
        };
        match task {
            Task::O5 => {
                cfg.net.layer_dims = Some(vec![10, 32, 32, 32, 32, 1]);
                cfg.extraction.action = InputAction::Diagonal { block_dim: 5 };
                cfg.train.epochs = o5_epochs(cfg.data.n_samples);
            }
            Task::Sphere => {
                cfg.data.n_samples = 500;
            }
            Task::RotImages => {
                cfg.data.n_samples = 2000;
                cfg.data.val_fraction = 0.2;
                cfg.net.param_budget = Some(10_000);
                cfg.net.hidden_layers = 2;
                cfg.net.output_l2_normalize = true;
                cfg.train.loss = Loss::CrossEntropy;
                cfg.train.epochs = 100;
                cfg.extraction.num_generators = 1;
                cfg.extraction.pgm_times = vec![-1.0, -0.5, 0.0, 0.5, 1.0];
                cfg.extraction.pgm_images = 2;
                cfg.sweep.budgets = vec![5000, 10_000, 20_000];
            }
        }
        cfg
    }

    /// Parses TOML (or JSON when `json` is set) and expands defaults.
    pub fn parse(text: &str, json: bool, overrides: &Overrides) -> Result<Self> {
        let user: Value = if json {
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?
        } else {
            let t: toml::Value =
                toml::from_str(text).map_err(|e| Error::Config(format!("invalid TOML: {e}")))?;
            serde_json::to_value(t)?
        };
        Self::from_value(user, overrides)
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        Self::parse(&text, json, overrides)
    }

    pub fn from_value(mut user: Value, overrides: &Overrides) -> Result<Self> {
        let Value::Object(obj) = &mut user else {
            return Err(Error::Config("config must be a table".into()));
        };
        if let Some(seed) = overrides.seed {
            obj.insert("seed".into(), json!(seed));
            let train = obj
                .entry("train")
                .or_insert_with(|| Value::Object(Map::new()));
            if let Value::Object(t) = train {
                t.insert("seed".into(), json!(seed));
            }
        }
        if let Some(dir) = &overrides.output_dir {
            obj.insert("output_dir".into(), json!(dir));
        }
        let task: Task = match obj.get("task") {
            Some(t) => serde_json::from_value(t.clone())
                .map_err(|e| Error::Config(format!("task: {e}")))?,
            None => Task::O5,
        };
        let has = |section: &str, key: &str| {
            obj.get(section)
                .and_then(|s| s.get(key))
                .is_some_and(|v| !v.is_null())
        };
        let user_epochs = has("train", "epochs");
        let user_train_seed = has("train", "seed");
        let user_k = has("extraction", "num_generators");
        let user_dims = has("net", "layer_dims");

        let mut merged = serde_json::to_value(Self::defaults(task))?;
        merge(&mut merged, user);
        let mut cfg: ExperimentConfig =
            serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;

        if task == Task::O5 && !user_epochs {
            cfg.train.epochs = o5_epochs(cfg.data.n_samples);
        }
        if task == Task::Sphere && !user_k {
            let d = cfg.data.sphere_dim;
            cfg.extraction.num_generators = d * d.saturating_sub(1) / 2;
        }
        if !user_train_seed {
            cfg.train.seed = cfg.seed;
        }
        if !user_dims && cfg.net.param_budget.is_some() {
            cfg.net.layer_dims = None;
        }
        if task != Task::Sphere && cfg.net.layer_dims.is_none() {
            let budget = cfg.net.param_budget.ok_or_else(|| {
                Error::Config("net needs either layer_dims or param_budget".into())
            })?;
            cfg.net.layer_dims = Some(cfg.dims_for_budget(budget, cfg.net.hidden_layers)?);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Network input and output widths implied by the task.
    pub fn io_dims(&self) -> (usize, usize) {
        match self.task {
            Task::O5 => (10, 1),
            Task::Sphere => (self.data.sphere_dim, 1),
            Task::RotImages => (
                self.data.image_size * self.data.image_size,
                self.data.classes,
            ),
        }
    }

    pub fn dims_for_budget(&self, budget: usize, hidden_layers: usize) -> Result<Vec<usize>> {
        let (i, o) = self.io_dims();
        let h = hidden_dim_for_budget(budget, hidden_layers, i, o)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(mlp_dims(i, h, hidden_layers, o))
    }

    pub fn net_spec(&self, layer_dims: Vec<usize>) -> Result<NetSpec> {
        Ok(NetSpec::new(layer_dims, self.net.activation)
            .map_err(|e| Error::Config(e.to_string()))?
            .with_output_normalization(self.net.output_l2_normalize))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let d = &self.data;
        if d.n_samples == 0 {
            return fail("data.n_samples must be at least 1".into());
        }
        if !(d.input_std > 0.0 && d.input_std.is_finite()) {
            return fail(format!(
                "data.input_std must be positive, got {}",
                d.input_std
            ));
        }
        if d.sphere_dim < 2 {
            return fail("data.sphere_dim must be at least 2".into());
        }
        if self.task == Task::RotImages {
            if d.idx_images.is_none() && d.image_size < 8 {
                return fail("data.image_size must be at least 8".into());
            }
            if d.idx_images.is_none() && d.classes < 2 {
                return fail("data.classes must be at least 2".into());
            }
            if d.idx_images.is_some() != d.idx_labels.is_some() {
                return fail("data.idx_images and data.idx_labels must be given together".into());
            }
            for p in [&d.idx_images, &d.idx_labels].into_iter().flatten() {
                if !p.exists() {
                    return fail(format!("{} does not exist", p.display()));
                }
            }
        }
        if !(d.sigma_smooth >= 0.0) {
            return fail(format!(
                "data.sigma_smooth must be non-negative, got {}",
                d.sigma_smooth
            ));
        }
        if !(0.0..1.0).contains(&d.val_fraction) {
            return fail(format!(
                "data.val_fraction must be in [0, 1), got {}",
                d.val_fraction
            ));
        }
        let x = &self.extraction;
        if !(x.rel_tol > 0.0) {
            return fail(format!(
                "extraction.rel_tol must be positive, got {}",
                x.rel_tol
            ));
        }
        if !(x.subsample_fraction > 0.0 && x.subsample_fraction <= 1.0) {
            return fail(format!(
                "extraction.subsample_fraction must be in (0, 1], got {}",
                x.subsample_fraction
            ));
        }
        if x.num_generators == 0 {
            return fail("extraction.num_generators must be at least 1".into());
        }
        if let Some(dims) = &self.net.layer_dims {
            if self.task != Task::Sphere {
                self.net_spec(dims.clone())?
                    .validate()
                    .map_err(|e| Error::Config(e.to_string()))?;
                if (dims[0], *dims.last().unwrap_or(&0)) != self.io_dims() {
                    return fail(format!(
                        "net.layer_dims {dims:?} do not match the task's input/output widths {:?}",
                        self.io_dims()
                    ));
                }
            }
        }
        if let Some(p) = &self.checkpoint {
            if !p.exists() {
                return fail(format!("checkpoint {} does not exist", p.display()));
            }
        }
        self.train
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self
            .sample_complexity
            .fractions
            .iter()
            .any(|f| !(*f > 0.0 && *f <= 1.0))
        {
            return fail("sample_complexity.fractions must lie in (0, 1]".into());
        }
        if self.layerwise.sub_layers == 0 || self.layerwise.sub_layers >= self.layerwise.depth {
            return fail(format!(
                "layerwise.sub_layers must be in [1, {}), got {}",
                self.layerwise.depth, self.layerwise.sub_layers
            ));
        }
        Ok(())
    }
}

/// Recursive overlay. Tagged objects (with a `kind` key) replace wholesale.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) if !o.contains_key("kind") => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
