use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::net::Network;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mse,
    CrossEntropy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: Loss,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    /// Leading layers whose parameters are held fixed.
    pub frozen_layers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: Loss::Mse,
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 32,
            seed: 1,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            frozen_layers: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "batch size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// `min(900000 / N, 1000)` epochs for the O(5) regression task.
pub fn o5_epochs(n: usize) -> usize {
    (900_000 / n.max(1)).clamp(1, 1000)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// One row of regression targets per sample (`output_dim` columns).
    Values(Matrix),
    Classes(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Values(m) => m.rows(),
            Targets::Classes(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Values(m) => Targets::Values(m.select_rows(idx)),
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Final parameters, or the best-validation checkpoint when validation data was given.
    pub network: Network,
    pub history: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
}

/// Mean loss over the batch and the gradient w.r.t. the raw outputs.
fn loss_and_grad(loss: Loss, outputs: &Matrix, targets: &Targets) -> Result<(f64, Matrix)> {
    let (b, k) = outputs.shape();
    let mut grad = Matrix::zeros(b, k);
    let mut total = 0.0;
    match (loss, targets) {
        (Loss::Mse, Targets::Values(t)) => {
            if t.shape() != outputs.shape() {
                return Err(Error::shape(
                    format!("targets {b}x{k}"),
                    format!("{}x{}", t.rows(), t.cols()),
                ));
            }
            let scale = 1.0 / (b * k) as f64;
            for ((g, &y), &t) in grad
                .as_mut_slice()
                .iter_mut()
                .zip(outputs.as_slice())
                .zip(t.as_slice())
            {
                let d = y - t;
                total += d * d;
                *g = 2.0 * d * scale;
            }
            Ok((total * scale, grad))
        }
        (Loss::CrossEntropy, Targets::Classes(labels)) => {
            let scale = 1.0 / b as f64;
            for (r, &label) in labels.iter().enumerate() {
                if label >= k {
                    return Err(Error::InvalidArgument(format!(
                        "label {label} out of range for {k} outputs"
                    )));
                }
                let z = outputs.row(r);
                let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
                let lse = m + sum.ln();
                total += lse - z[label];
                let g = grad.row_mut(r);
                for (j, gj) in g.iter_mut().enumerate() {
                    *gj = (z[j] - lse).exp() * scale;
                }
                g[label] -= scale;
            }
            Ok((total * scale, grad))
        }
        (loss, _) => Err(Error::InvalidArgument(format!(
            "loss {loss:?} does not match the target kind"
        ))),
    }
}

struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    step: i32,
    m: Vec<(Vec<f64>, Vec<f64>)>,
    v: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    fn new(net: &Network, cfg: &TrainConfig) -> Self {
        let zeros: Vec<(Vec<f64>, Vec<f64>)> = net
            .layers()
            .iter()
            .map(|l| {
                (
                    vec![0.0; l.weights.as_slice().len()],
                    vec![0.0; l.bias.len()],
                )
            })
            .collect();
        Self {
            beta1: cfg.adam_betas.0,
            beta2: cfg.adam_betas.1,
            eps: cfg.adam_eps,
            lr: cfg.learning_rate,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn update(&mut self, net: &mut Network, first_layer: usize, grads: &[(Matrix, Vec<f64>)]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let apply = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        };
        for (offset, (dw, db)) in grads.iter().enumerate() {
            let l = first_layer + offset;
            let layer = &mut net.layers_mut()[l];
            let (mw, mb) = &mut self.m[l];
            let (vw, vb) = &mut self.v[l];
            apply(layer.weights.as_mut_slice(), dw.as_slice(), mw, vw);
            apply(&mut layer.bias, db, mb, vb);
        }
    }
}

/// Shuffle order for one epoch, from a generator keyed by `(seed, epoch)`.
fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

pub fn train(
    net: Network,
    inputs: &Matrix,
    targets: &Targets,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_validation(net, inputs, targets, None, cfg)
}

/// Adam over shuffled mini-batches. With validation data the returned network
/// is the epoch with the best validation accuracy (classification) or loss
/// (regression); ties on accuracy go to the lower validation loss.
pub fn train_with_validation(
    mut net: Network,
    inputs: &Matrix,
    targets: &Targets,
    validation: Option<(&Matrix, &Targets)>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = inputs.rows();
    if n == 0 || targets.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} inputs but {} targets",
            n,
            targets.len()
        )));
    }
    let layers = net.layers().len();
    if cfg.frozen_layers >= layers {
        return Err(Error::InvalidArgument(format!(
            "cannot freeze {} of {layers} layers",
            cfg.frozen_layers
        )));
    }

    let mut adam = Adam::new(&net, cfg);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, Network)> = None;

    for epoch in 0..cfg.epochs {
        let order = epoch_order(n, cfg.seed, epoch);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = inputs.select_rows(batch);
            let t = targets.select(batch);
            let cache = net.forward_cached(&x)?;
            let (loss, grad) = loss_and_grad(cfg.loss, cache.output(), &t)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            loss_sum += loss * batch.len() as f64;
            let (_, grads) = net.backward(&cache, grad, true, cfg.frozen_layers);
            adam.update(&mut net, cfg.frozen_layers, &grads.unwrap().layers);
        }
        let mean_loss = loss_sum / n as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }

        let mut stats = EpochStats {
            epoch,
            mean_loss,
            val_loss: None,
            val_accuracy: None,
        };
        if let Some((vx, vt)) = validation {
            let out = net.forward_raw(vx)?;
            let (vloss, _) = loss_and_grad(cfg.loss, &out, vt)?;
            let acc = match vt {
                Targets::Classes(labels) => Some(accuracy(&out, labels)),
                Targets::Values(_) => None,
            };
            stats.val_loss = Some(vloss);
            stats.val_accuracy = acc;
            let key = (acc.unwrap_or(0.0), -vloss);
            let better = best
                .as_ref()
                .is_none_or(|(a, l, _, _)| key.0 > *a || (key.0 == *a && key.1 > *l));
            if better {
                best = Some((key.0, key.1, epoch, net.clone()));
            }
        }
        history.push(stats);
    }

    let (network, best_epoch) = match best {
        Some((_, _, epoch, snapshot)) => (snapshot, Some(epoch)),
        None => (net, None),
    };
    Ok(TrainOutcome {
        network,
        history,
        best_epoch,
    })
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy(outputs: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = outputs
        .iter_rows()
        .zip(labels)
        .filter(|(row, &label)| {
            let mut arg = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[arg] {
                    arg = j;
                }
            }
            arg == label
        })
        .count();
    hits as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, Discriminator, NetSpec};

    fn line_data() -> (Matrix, Targets) {
        let xs: Vec<f64> = (0..64).map(|i| -1.0 + 2.0 * i as f64 / 63.0).collect();
        let x = Matrix::new(64, 1, xs.clone()).unwrap();
        let y = Matrix::new(64, 1, xs.iter().map(|v| 2.0 * v).collect()).unwrap();
        (x, Targets::Values(y))
    }

    fn linear_net(seed: u64) -> Network {
        Network::init(NetSpec::new(vec![1, 1], Activation::Swish).unwrap(), seed).unwrap()
    }

    #[test]
    fn fits_a_line() {
        let (x, y) = line_data();
        let cfg = TrainConfig {
            epochs: 500,
            batch_size: 8,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let out = train(linear_net(3), &x, &y, &cfg).unwrap();
        // Closed-form least squares on noiseless y = 2x gives slope 2, intercept 0.
        let slope = out.network.layers()[0].weights[(0, 0)];
        assert!((slope - 2.0).abs() < 1e-2, "slope {slope}");

        let losses: Vec<f64> = out.history.iter().map(|s| s.mean_loss).collect();
        for w in losses[10..].windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "loss rose {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn training_is_bit_deterministic() {
        let (x, y) = line_data();
        let spec = NetSpec::new(vec![1, 8, 1], Activation::Tanh).unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            ..TrainConfig::default()
        };
        let a = train(Network::init(spec.clone(), 5).unwrap(), &x, &y, &cfg).unwrap();
        let b = train(Network::init(spec, 5).unwrap(), &x, &y, &cfg).unwrap();
        assert_eq!(a.network, b.network);
    }

    #[test]
    fn config_invariants() {
        let bad = [
            TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..TrainConfig::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn o5_schedule() {
        assert_eq!(o5_epochs(900), 1000);
        assert_eq!(o5_epochs(1000), 900);
        assert_eq!(o5_epochs(100), 1000);
    }

    #[test]
    fn divergence_names_the_epoch() {
        let (x, y) = line_data();
        let cfg = TrainConfig {
            learning_rate: 1e300,
            epochs: 50,
            ..TrainConfig::default()
        };
        let spec = NetSpec::new(vec![1, 4, 1], Activation::Relu).unwrap();
        let err = train(Network::init(spec, 1).unwrap(), &x, &y, &cfg).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn frozen_layers_stay_bit_identical() {
        let (x, y) = line_data();
        let spec = NetSpec::new(vec![1, 6, 6, 1], Activation::Swish).unwrap();
        let net = Network::init(spec, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            frozen_layers: 2,
            ..TrainConfig::default()
        };
        let out = train(net.clone(), &x, &y, &cfg).unwrap();
        assert_eq!(out.network.layers()[..2], net.layers()[..2]);
        assert_ne!(out.network.layers()[2], net.layers()[2]);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let logits = Matrix::from_rows(&[[0.3, -1.2, 2.0], [0.0, 0.5, -0.5]]).unwrap();
        let t = Targets::Classes(vec![2, 0]);
        let (_, g) = loss_and_grad(Loss::CrossEntropy, &logits, &t).unwrap();
        let h = 1e-6;
        for i in 0..logits.as_slice().len() {
            let mut p = logits.clone();
            p.as_mut_slice()[i] += h;
            let mut m = logits.clone();
            m.as_mut_slice()[i] -= h;
            let fd = (loss_and_grad(Loss::CrossEntropy, &p, &t).unwrap().0
                - loss_and_grad(Loss::CrossEntropy, &m, &t).unwrap().0)
                / (2.0 * h);
            assert!((fd - g.as_slice()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn validation_selects_best_epoch() {
        let (x, y) = line_data();
        let cfg = TrainConfig {
            epochs: 30,
            ..TrainConfig::default()
        };
        let spec = NetSpec::new(vec![1, 4, 1], Activation::Tanh).unwrap();
        let out = train_with_validation(
            Network::init(spec, 4).unwrap(),
            &x,
            &y,
            Some((&x, &y)),
            &cfg,
        )
        .unwrap();
        let best = out.best_epoch.unwrap();
        let best_loss = out.history[best].val_loss.unwrap();
        assert!(out.history.iter().all(|s| s.val_loss.unwrap() >= best_loss));
        let out_loss = {
            let o = out.network.forward_batch(&x).unwrap();
            loss_and_grad(Loss::Mse, &o, &y).unwrap().0
        };
        assert!((out_loss - best_loss).abs() < 1e-15);
    }
}
