//! Feed-forward networks with hand-written reverse-mode differentiation.
//!
//! A [`Network`] is a stack of affine layers with a shared activation. The
//! backward pass produces both parameter gradients (for [`train`]) and the
//! vector-Jacobian product with respect to the inputs, which is what the
//! polarization matrix is built from.

mod checkpoint;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm, GemmOperand, Matrix};

pub use checkpoint::{
    load_checkpoint, save_checkpoint, write_loss_history, Checkpoint, CHECKPOINT_VERSION,
};
pub use train::{
    accuracy, o5_epochs, train, train_with_validation, EpochStats, Loss, Targets, TrainConfig,
    TrainOutcome,
};

const NORM_GUARD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Swish,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Swish => z * sigmoid(z),
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Swish => {
                let s = sigmoid(z);
                s + z * s * (1.0 - s)
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Architecture of a feed-forward network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    /// `(input_dim, hidden..., output_dim)`.
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    /// Divide the output by its Euclidean norm in [`Discriminator`] evaluation.
    /// Training always sees the raw outputs.
    #[serde(default)]
    pub output_l2_normalize: bool,
    /// Apply the activation after the final layer too. Only set on networks
    /// cut at a hidden layer by [`Network::truncate`].
    #[serde(default)]
    pub activate_output: bool,
}

impl NetSpec {
    pub fn new(layer_dims: Vec<usize>, activation: Activation) -> Result<Self> {
        let spec = Self {
            layer_dims,
            activation,
            output_l2_normalize: false,
            activate_output: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_output_normalization(mut self, on: bool) -> Self {
        self.output_l2_normalize = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a network needs input and output dims, got {:?}",
                self.layer_dims
            )));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer dims must be positive, got {:?}",
                self.layer_dims
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    /// Weights plus biases.
    pub fn parameter_count(&self) -> usize {
        self.layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    spec: NetSpec,
    layers: Vec<Layer>,
}

/// Anything that maps ℝⁿ → ℝˡ and provides input vector-Jacobian products.
pub trait Discriminator: Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>>;
    /// `seedᵀ · ∂F/∂x`.
    fn input_gradient(&self, x: &[f64], seed: &[f64]) -> Result<Vec<f64>>;

    /// Row-wise [`Discriminator::forward`].
    fn forward_batch(&self, inputs: &Matrix) -> Result<Matrix> {
        let rows = inputs
            .iter_rows()
            .map(|x| self.forward(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(Matrix::from_raw(
            inputs.rows(),
            self.output_dim(),
            rows.concat(),
        ))
    }

    /// Row-wise [`Discriminator::input_gradient`] with the same seed for every row.
    fn input_gradients(&self, inputs: &Matrix, seed: &[f64]) -> Result<Matrix> {
        let rows = inputs
            .iter_rows()
            .map(|x| self.input_gradient(x, seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(Matrix::from_raw(
            inputs.rows(),
            self.input_dim(),
            rows.concat(),
        ))
    }
}

fn check_len(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::shape(format!("{what} of length {expected}"), got));
    }
    Ok(())
}

pub(crate) struct ForwardCache {
    /// `activations[l]` is the input to layer `l`; the last entry is the raw output.
    activations: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
}

impl ForwardCache {
    pub(crate) fn output(&self) -> &Matrix {
        self.activations.last().unwrap()
    }
}

pub(crate) struct ParamGrads {
    pub(crate) layers: Vec<(Matrix, Vec<f64>)>,
}

impl Network {
    /// Uniform initialization in `±√(1/fan_in)` for weights and biases.
    pub fn init(spec: NetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1417_0000_0000);
        let layers = spec
            .layer_dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (1.0 / fan_in as f64).sqrt();
                let weights =
                    Matrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..bound));
                let bias = (0..fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Layer { weights, bias }
            })
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn from_layers(spec: NetSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        if layers.len() != spec.num_layers() {
            return Err(Error::shape(
                format!("{} layers", spec.num_layers()),
                layers.len(),
            ));
        }
        for (l, (layer, w)) in layers.iter().zip(spec.layer_dims.windows(2)).enumerate() {
            if layer.weights.shape() != (w[1], w[0]) || layer.bias.len() != w[1] {
                return Err(Error::shape(
                    format!("layer {l} weights {}x{} and bias {}", w[1], w[0], w[1]),
                    format!(
                        "{}x{} and {}",
                        layer.weights.rows(),
                        layer.weights.cols(),
                        layer.bias.len()
                    ),
                ));
            }
            if layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "layer {l} bias is not finite"
                )));
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn set_output_normalization(&mut self, on: bool) {
        self.spec.output_l2_normalize = on;
    }

    fn activated(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.spec.activate_output
    }

    pub(crate) fn forward_cached(&self, inputs: &Matrix) -> Result<ForwardCache> {
        check_len("input row", self.spec.input_dim(), inputs.cols())?;
        let batch = inputs.rows();
        let mut activations = vec![inputs.clone()];
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let x = activations.last().unwrap();
            let mut z = Matrix::zeros(batch, layer.out_dim());
            for r in 0..batch {
                z.row_mut(r).copy_from_slice(&layer.bias);
            }
            gemm(
                batch,
                layer.in_dim(),
                layer.out_dim(),
                1.0,
                GemmOperand::normal(x),
                GemmOperand::transposed(&layer.weights),
                1.0,
                &mut z,
            );
            let a = if self.activated(l) {
                let act = self.spec.activation;
                Matrix::from_raw(
                    batch,
                    layer.out_dim(),
                    z.as_slice().iter().map(|&v| act.apply(v)).collect(),
                )
            } else {
                z.clone()
            };
            pre_activations.push(z);
            activations.push(a);
        }
        Ok(ForwardCache {
            activations,
            pre_activations,
        })
    }

    /// Backpropagates `grad_output` (batch × output_dim, w.r.t. the raw output).
    /// Returns the input gradient and, if requested, parameter gradients summed
    /// over the batch.
    pub(crate) fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: Matrix,
        want_params: bool,
        stop_at_layer: usize,
    ) -> (Option<Matrix>, Option<ParamGrads>) {
        let batch = grad_output.rows();
        let mut delta = grad_output;
        let mut grads = Vec::new();
        let want_input = stop_at_layer == 0;
        for l in (stop_at_layer..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if self.activated(l) {
                let act = self.spec.activation;
                let z = cache.pre_activations[l].as_slice();
                delta
                    .as_mut_slice()
                    .iter_mut()
                    .zip(z)
                    .for_each(|(d, &zv)| *d *= act.derivative(zv));
            }
            if want_params {
                let x = &cache.activations[l];
                let mut dw = Matrix::zeros(layer.out_dim(), layer.in_dim());
                gemm(
                    layer.out_dim(),
                    batch,
                    layer.in_dim(),
                    1.0,
                    GemmOperand::transposed(&delta),
                    GemmOperand::normal(x),
                    0.0,
                    &mut dw,
                );
                let mut db = vec![0.0; layer.out_dim()];
                for r in delta.iter_rows() {
                    db.iter_mut().zip(r).for_each(|(acc, v)| *acc += v);
                }
                grads.push((dw, db));
            }
            if l > stop_at_layer || want_input {
                let mut prev = Matrix::zeros(batch, layer.in_dim());
                gemm(
                    batch,
                    layer.out_dim(),
                    layer.in_dim(),
                    1.0,
                    GemmOperand::normal(&delta),
                    GemmOperand::normal(&layer.weights),
                    0.0,
                    &mut prev,
                );
                delta = prev;
            }
        }
        grads.reverse();
        (
            want_input.then_some(delta),
            want_params.then_some(ParamGrads { layers: grads }),
        )
    }

    /// Outputs before the optional L2 normalization.
    pub fn forward_raw(&self, inputs: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(inputs)?.activations.pop_last())
    }

    /// Applies the output normalization and maps output seeds back through it.
    fn normalization_vjp(&self, raw: &[f64], seed: &[f64], out: &mut [f64]) {
        let n = crate::linalg::norm(raw);
        if !self.spec.output_l2_normalize || n < NORM_GUARD {
            out.copy_from_slice(seed);
            return;
        }
        let y: Vec<f64> = raw.iter().map(|v| v / n).collect();
        let ys = crate::linalg::dot(&y, seed);
        for ((o, &s), &yi) in out.iter_mut().zip(seed).zip(&y) {
            *o = (s - yi * ys) / n;
        }
    }

    fn normalize_output(&self, raw: &mut [f64]) {
        if !self.spec.output_l2_normalize {
            return;
        }
        let n = crate::linalg::norm(raw);
        if n >= NORM_GUARD {
            raw.iter_mut().for_each(|v| *v /= n);
        }
    }

    /// Input gradients seeded independently per row; `seeds` is batch × output_dim.
    pub fn input_gradients_seeded(&self, inputs: &Matrix, seeds: &Matrix) -> Result<Matrix> {
        check_len("seed row", self.spec.output_dim(), seeds.cols())?;
        check_len("seed rows", inputs.rows(), seeds.rows())?;
        let cache = self.forward_cached(inputs)?;
        let raw = cache.output();
        let mut grad_out = Matrix::zeros(inputs.rows(), self.spec.output_dim());
        for r in 0..inputs.rows() {
            self.normalization_vjp(raw.row(r), seeds.row(r), grad_out.row_mut(r));
        }
        let (grad_in, _) = self.backward(&cache, grad_out, false, 0);
        Ok(grad_in.unwrap())
    }

    /// Sub-network made of the first `layers` layers. When cut before the
    /// final layer the activation of the last retained layer is kept.
    pub fn truncate(&self, layers: usize) -> Result<Network> {
        let total = self.layers.len();
        if layers == 0 || layers > total {
            return Err(Error::InvalidArgument(format!(
                "truncation index {layers} outside 1..={total}"
            )));
        }
        if layers == total {
            return Ok(self.clone());
        }
        let spec = NetSpec {
            layer_dims: self.spec.layer_dims[..=layers].to_vec(),
            activation: self.spec.activation,
            output_l2_normalize: false,
            activate_output: true,
        };
        Ok(Network {
            spec,
            layers: self.layers[..layers].to_vec(),
        })
    }

    /// Activations after every layer for a single input (the last entry is the raw output).
    pub fn layer_activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let m = Matrix::from_raw(1, x.len(), x.to_vec());
        let cache = self.forward_cached(&m)?;
        Ok(cache.activations[1..]
            .iter()
            .map(|a| a.row(0).to_vec())
            .collect())
    }
}

trait PopLast {
    fn pop_last(self) -> Matrix;
}

impl PopLast for Vec<Matrix> {
    fn pop_last(mut self) -> Matrix {
        self.pop().unwrap()
    }
}

impl Discriminator for Network {
    fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("input", self.spec.input_dim(), x.len())?;
        let m = Matrix::from_raw(1, x.len(), x.to_vec());
        let mut out = self.forward_raw(&m)?.into_vec();
        self.normalize_output(&mut out);
        Ok(out)
    }

    fn input_gradient(&self, x: &[f64], seed: &[f64]) -> Result<Vec<f64>> {
        check_len("input", self.spec.input_dim(), x.len())?;
        check_len("seed", self.spec.output_dim(), seed.len())?;
        let inputs = Matrix::from_raw(1, x.len(), x.to_vec());
        let seeds = Matrix::from_raw(1, seed.len(), seed.to_vec());
        Ok(self.input_gradients_seeded(&inputs, &seeds)?.into_vec())
    }

    fn forward_batch(&self, inputs: &Matrix) -> Result<Matrix> {
        let mut out = self.forward_raw(inputs)?;
        for r in 0..out.rows() {
            self.normalize_output(out.row_mut(r));
        }
        Ok(out)
    }

    fn input_gradients(&self, inputs: &Matrix, seed: &[f64]) -> Result<Matrix> {
        check_len("seed", self.spec.output_dim(), seed.len())?;
        let seeds = Matrix::from_fn(inputs.rows(), seed.len(), |_, j| seed[j]);
        self.input_gradients_seeded(inputs, &seeds)
    }
}

/// `F(x) = Σ xᵢ² − 1`, which vanishes exactly on the unit sphere.
#[derive(Clone, Copy, Debug)]
pub struct SphereDiscriminator {
    dim: usize,
}

impl SphereDiscriminator {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Discriminator for SphereDiscriminator {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("input", self.dim, x.len())?;
        Ok(vec![crate::linalg::dot(x, x) - 1.0])
    }

    fn input_gradient(&self, x: &[f64], seed: &[f64]) -> Result<Vec<f64>> {
        check_len("input", self.dim, x.len())?;
        check_len("seed", 1, seed.len())?;
        Ok(x.iter().map(|v| 2.0 * v * seed[0]).collect())
    }
}

/// Largest hidden width `h` whose weight count
/// `input·h + (hidden_layers − 1)·h² + h·output` fits in `param_budget`.
///
/// `hidden_layers` counts layers of width `h`, so a 2-hidden-layer MNIST
/// network is `784 → h → h → 10`. Biases are not counted.
pub fn hidden_dim_for_budget(
    param_budget: usize,
    hidden_layers: usize,
    input_dim: usize,
    output_dim: usize,
) -> Result<usize> {
    if param_budget == 0 || hidden_layers == 0 || input_dim == 0 || output_dim == 0 {
        return Err(Error::InvalidArgument(
            "budget, depth and dims must all be positive".into(),
        ));
    }
    let count = |h: usize| weight_count(h, hidden_layers, input_dim, output_dim);
    if count(1) > param_budget {
        return Err(Error::InvalidArgument(format!(
            "budget {param_budget} cannot fit width 1 at depth {hidden_layers} ({} weights)",
            count(1)
        )));
    }
    let a = (hidden_layers - 1) as f64;
    let b = (input_dim + output_dim) as f64;
    let budget = param_budget as f64;
    let guess = if a == 0.0 {
        budget / b
    } else {
        (-b + (b * b + 4.0 * a * budget).sqrt()) / (2.0 * a)
    };
    let mut h = (guess.floor() as usize).max(1);
    while count(h) > param_budget {
        h -= 1;
    }
    while count(h + 1) <= param_budget {
        h += 1;
    }
    Ok(h)
}

/// Weight count of `input → h × hidden_layers → output`.
pub fn weight_count(h: usize, hidden_layers: usize, input_dim: usize, output_dim: usize) -> usize {
    input_dim * h + (hidden_layers - 1) * h * h + h * output_dim
}

/// `(input, h × hidden_layers, output)`.
pub fn mlp_dims(
    input_dim: usize,
    hidden: usize,
    hidden_layers: usize,
    output_dim: usize,
) -> Vec<usize> {
    let mut dims = vec![input_dim];
    dims.extend(std::iter::repeat_n(hidden, hidden_layers));
    dims.push(output_dim);
    dims
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(weights: Matrix) -> Network {
        let spec = NetSpec::new(vec![weights.cols(), weights.rows()], Activation::Swish).unwrap();
        let bias = vec![0.0; weights.rows()];
        Network::from_layers(spec, vec![Layer { weights, bias }]).unwrap()
    }

    fn swish(z: f64) -> f64 {
        z / (1.0 + (-z).exp())
    }

    #[test]
    fn identity_layer_passes_through() {
        let net = linear(Matrix::identity(3));
        assert_eq!(
            net.forward(&[1.0, -2.0, 0.5]).unwrap(),
            vec![1.0, -2.0, 0.5]
        );
    }

    #[test]
    fn zero_network_outputs_zero() {
        let spec = NetSpec::new(vec![3, 4, 2], Activation::Tanh).unwrap();
        let mut net = Network::init(spec, 0).unwrap();
        for layer in net.layers_mut() {
            layer.weights = Matrix::zeros(layer.out_dim(), layer.in_dim());
            layer.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        assert_eq!(net.forward(&[0.3, 1.0, -7.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn two_layer_swish_by_hand() {
        let spec = NetSpec::new(vec![2, 2, 1], Activation::Swish).unwrap();
        let l1 = Layer {
            weights: Matrix::from_rows(&[[1.0, 2.0], [-1.0, 0.5]]).unwrap(),
            bias: vec![0.5, 0.0],
        };
        let l2 = Layer {
            weights: Matrix::from_rows(&[[3.0, -2.0]]).unwrap(),
            bias: vec![0.25],
        };
        let net = Network::from_layers(spec, vec![l1, l2]).unwrap();
        // x = (1, 0): z1 = (1.5, -1.0)
        let want = 3.0 * swish(1.5) - 2.0 * swish(-1.0) + 0.25;
        let got = net.forward(&[1.0, 0.0]).unwrap()[0];
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
    }

    #[test]
    fn linear_gradient_is_weight_row() {
        let w = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let net = linear(w);
        assert_eq!(
            net.input_gradient(&[0.1, 0.2, 0.3], &[0.0, 1.0]).unwrap(),
            vec![4.0, 5.0, 6.0]
        );
        assert_eq!(
            net.input_gradient(&[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap(),
            vec![0.0; 3]
        );
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let net = linear(Matrix::identity(2));
        assert!(net.forward(&[1.0]).is_err());
        assert!(net.input_gradient(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(NetSpec::new(vec![3], Activation::Relu).is_err());
        assert!(NetSpec::new(vec![3, 0, 1], Activation::Relu).is_err());
    }

    #[test]
    fn normalization_guards_tiny_outputs() {
        let spec = NetSpec::new(vec![2, 2], Activation::Relu)
            .unwrap()
            .with_output_normalization(true);
        let net = Network::from_layers(
            spec,
            vec![Layer {
                weights: Matrix::identity(2),
                bias: vec![0.0, 0.0],
            }],
        )
        .unwrap();
        let y = net.forward(&[3.0, 4.0]).unwrap();
        assert!((y[0] - 0.6).abs() < 1e-15 && (y[1] - 0.8).abs() < 1e-15);
        assert_eq!(net.forward(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn truncation() {
        let spec = NetSpec::new(mlp_dims(4, 5, 6, 3), Activation::Swish).unwrap();
        let net = Network::init(spec, 9).unwrap();
        assert_eq!(net.spec().num_layers(), 7);
        let x = [0.3, -0.2, 1.1, 0.0];
        let full = net.truncate(7).unwrap();
        assert_eq!(full.forward(&x).unwrap(), net.forward(&x).unwrap());

        let cut = net.truncate(3).unwrap();
        assert_eq!(cut.output_dim(), 5);
        let acts = net.layer_activations(&x).unwrap();
        let got = cut.forward(&x).unwrap();
        for (a, b) in got.iter().zip(&acts[2]) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert!(net.truncate(0).is_err());
        assert!(net.truncate(8).is_err());
    }

    #[test]
    fn hidden_dims_from_budgets() {
        assert_eq!(hidden_dim_for_budget(40000, 2, 784, 10).unwrap(), 47);
        assert_eq!(hidden_dim_for_budget(160000, 6, 784, 10).unwrap(), 116);
        let minimal = weight_count(1, 3, 10, 2);
        assert_eq!(hidden_dim_for_budget(minimal, 3, 10, 2).unwrap(), 1);
        assert!(hidden_dim_for_budget(minimal - 1, 3, 10, 2).is_err());
    }
}
