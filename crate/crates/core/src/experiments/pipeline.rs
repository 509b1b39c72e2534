//! Steps shared by every command: data, model, polarization, scoring.

use serde::Serialize;

use crate::datasets::{
    gen_o5, gen_rotated_shapes, gen_sphere, load_idx, rotate_augment, ImageSet, RegressionSet,
};
use crate::error::{Error, Result};
use crate::experiments::config::{ExperimentConfig, Task};
use crate::linalg::Matrix;
use crate::metrics::{GroupProjector, SymmetryReport};
use crate::net::{
    accuracy, load_checkpoint, train_with_validation, Discriminator, EpochStats, NetSpec, Network,
    SphereDiscriminator, Targets, TrainConfig,
};
use crate::polarization::{
    polarization_image, polarization_vector, subsample_rows, ImageGrid, PolarizationMatrix,
    SeedMode,
};

#[derive(Clone, Debug)]
pub enum TaskData {
    Regression {
        train: RegressionSet,
        val: Option<RegressionSet>,
    },
    Sphere {
        points: Matrix,
    },
    Images {
        train: ImageSet,
        val: Option<ImageSet>,
    },
}

fn split_point(n: usize, val_fraction: f64) -> usize {
    n - (val_fraction * n as f64).round() as usize
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<TaskData> {
    let d = &cfg.data;
    match cfg.task {
        Task::O5 => {
            let all = gen_o5(d.n_samples, cfg.seed, d.input_std);
            let cut = split_point(all.len(), d.val_fraction);
            if cut == 0 {
                return Err(Error::Config(
                    "validation split leaves no training samples".into(),
                ));
            }
            let part = |a: usize, b: usize| {
                let idx: Vec<usize> = (a..b).collect();
                RegressionSet {
                    inputs: all.inputs.select_rows(&idx),
                    targets: all.targets[a..b].to_vec(),
                }
            };
            let val = (cut < all.len()).then(|| part(cut, all.len()));
            Ok(TaskData::Regression {
                train: part(0, cut),
                val,
            })
        }
        Task::Sphere => Ok(TaskData::Sphere {
            points: gen_sphere(d.n_samples, d.sphere_dim, cfg.seed, d.sphere_sampling),
        }),
        Task::RotImages => {
            let set = match (&d.idx_images, &d.idx_labels) {
                (Some(images), Some(labels)) => {
                    let mut set = load_idx(images, labels)?;
                    if set.height() != d.image_size || set.width() != d.image_size {
                        return Err(Error::Config(format!(
                            "IDX images are {}x{} but data.image_size is {}",
                            set.height(),
                            set.width(),
                            d.image_size
                        )));
                    }
                    if set.classes > d.classes {
                        return Err(Error::Config(format!(
                            "IDX labels reach class {} but data.classes is {}",
                            set.classes - 1,
                            d.classes
                        )));
                    }
                    set.classes = d.classes;
                    let n = set.len().min(d.n_samples);
                    set = set.slice(0, n);
                    if d.augment {
                        set = rotate_augment(&set, cfg.seed, d.sigma_smooth)?;
                    }
                    set
                }
                _ => gen_rotated_shapes(
                    d.n_samples,
                    d.image_size,
                    d.classes,
                    cfg.seed,
                    d.sigma_smooth,
                )?,
            };
            let cut = split_point(set.len(), d.val_fraction);
            if cut == 0 {
                return Err(Error::Config(
                    "validation split leaves no training samples".into(),
                ));
            }
            let val = (cut < set.len()).then(|| set.slice(cut, set.len()));
            Ok(TaskData::Images {
                train: set.slice(0, cut),
                val,
            })
        }
    }
}

/// What a training run leaves behind besides the weights.
#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub best_epoch: Option<usize>,
    pub final_loss: f64,
    /// Validation accuracy (classification) or MSE (regression), on the
    /// training set when there is no validation split.
    pub test_metric: f64,
    pub test_metric_name: &'static str,
    #[serde(skip)]
    pub history: Vec<EpochStats>,
}

#[derive(Clone, Debug)]
pub enum Model {
    Analytic(SphereDiscriminator),
    Net(Network),
}

impl Model {
    pub fn discriminator(&self) -> &dyn Discriminator {
        match self {
            Model::Analytic(s) => s,
            Model::Net(n) => n,
        }
    }

    pub fn network(&self) -> Option<&Network> {
        match self {
            Model::Net(n) => Some(n),
            Model::Analytic(_) => None,
        }
    }
}

fn supervised(data: &TaskData) -> Result<(Matrix, Targets, Option<(Matrix, Targets)>)> {
    match data {
        TaskData::Regression { train, val } => Ok((
            train.inputs.clone(),
            train.target_matrix(),
            val.as_ref().map(|v| (v.inputs.clone(), v.target_matrix())),
        )),
        TaskData::Images { train, val } => Ok((
            train.input_matrix(),
            train.targets(),
            val.as_ref().map(|v| (v.input_matrix(), v.targets())),
        )),
        TaskData::Sphere { .. } => {
            Err(Error::Config("the sphere task has no training data".into()))
        }
    }
}

fn evaluate(net: &Network, x: &Matrix, t: &Targets) -> Result<(f64, &'static str)> {
    let out = net.forward_raw(x)?;
    Ok(match t {
        Targets::Classes(labels) => (accuracy(&out, labels), "accuracy"),
        Targets::Values(v) => {
            let d = out.sub(v)?;
            (
                d.frobenius_norm().powi(2) / d.as_slice().len() as f64,
                "mse",
            )
        }
    })
}

/// Trains a freshly initialized network, or continues from `start`.
pub fn fit(
    spec: NetSpec,
    init_seed: u64,
    start: Option<Network>,
    data: &TaskData,
    train_cfg: &TrainConfig,
) -> Result<(Network, TrainSummary)> {
    let (x, t, val) = supervised(data)?;
    let net = match start {
        Some(n) => n,
        None => Network::init(spec, init_seed)?,
    };
    let outcome = train_with_validation(net, &x, &t, val.as_ref().map(|(a, b)| (a, b)), train_cfg)?;
    let (mx, mt) = val.as_ref().map_or((&x, &t), |(a, b)| (a, b));
    let (test_metric, test_metric_name) = evaluate(&outcome.network, mx, mt)?;
    let summary = TrainSummary {
        best_epoch: outcome.best_epoch,
        final_loss: outcome.history.last().map_or(f64::NAN, |s| s.mean_loss),
        test_metric,
        test_metric_name,
        history: outcome.history,
    };
    Ok((outcome.network, summary))
}

/// The analytic discriminator, a loaded checkpoint, or a newly trained network.
pub fn obtain_model(
    cfg: &ExperimentConfig,
    data: &TaskData,
) -> Result<(Model, Option<TrainSummary>)> {
    if cfg.task == Task::Sphere {
        return Ok((
            Model::Analytic(SphereDiscriminator::new(cfg.data.sphere_dim)),
            None,
        ));
    }
    if let Some(path) = &cfg.checkpoint {
        let mut net = load_checkpoint(path)?;
        if (net.spec().input_dim(), net.spec().output_dim()) != cfg.io_dims() {
            return Err(Error::Config(format!(
                "checkpoint {} maps {} -> {}, the task needs {:?}",
                path.display(),
                net.spec().input_dim(),
                net.spec().output_dim(),
                cfg.io_dims()
            )));
        }
        net.set_output_normalization(cfg.net.output_l2_normalize);
        return Ok((Model::Net(net), None));
    }
    let dims = cfg
        .net
        .layer_dims
        .clone()
        .ok_or_else(|| Error::Config("net.layer_dims unresolved".into()))?;
    let (net, summary) = fit(cfg.net_spec(dims)?, cfg.seed, None, data, &cfg.train)?;
    Ok((Model::Net(net), Some(summary)))
}

/// Polarization matrix over the training samples.
pub fn polarize(
    cfg: &ExperimentConfig,
    disc: &dyn Discriminator,
    data: &TaskData,
    seed_mode: &SeedMode,
) -> Result<PolarizationMatrix> {
    match data {
        TaskData::Regression { train, .. } => {
            polarization_vector(disc, &train.inputs, seed_mode, cfg.extraction.action)
        }
        TaskData::Sphere { points } => {
            polarization_vector(disc, points, seed_mode, cfg.extraction.action)
        }
        TaskData::Images { train, .. } => {
            let grid = ImageGrid::new(train.height(), train.width())?;
            let mut e = polarization_image(disc, &train.images, &grid, seed_mode)?;
            e.set_sigma_smooth(train.sigma_smooth);
            Ok(e)
        }
    }
}

/// Scores `e` after the configured row subsampling.
pub fn analyze(cfg: &ExperimentConfig, e: &PolarizationMatrix) -> Result<SymmetryReport> {
    let x = &cfg.extraction;
    let k = x.num_generators;
    let cols = e.gen_dim() * e.gen_dim();
    if k > cols {
        return Err(Error::Config(format!(
            "extraction.num_generators = {k} exceeds the {cols} candidate directions"
        )));
    }
    let sub;
    let e = if x.subsample_fraction < 1.0 {
        sub = subsample_rows(e, x.subsample_fraction, cfg.seed)?;
        &sub
    } else {
        e
    };
    SymmetryReport::compute(e, k, &GroupProjector::SpecialOrthogonal, x.rel_tol)
}
