//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! Batches are matrices with one sample per column.

mod optim;
mod train;

pub use optim::{adabound_bounds, Optimizer, OptimizerKind};
pub use train::{
    evaluate_loss, finite_difference_check, loss_and_gradient, train, GradientCheck, LossBreakdown,
    TrainConfig, TrainTrace,
};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Logsig,
    Tanh,
    Linear,
}

pub fn logsig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Logsig => logsig(z),
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative at pre-activation `z`; the relu subgradient at 0 is 0.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Logsig => {
                let s = logsig(z);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LayerCheckpoint", into = "LayerCheckpoint")]
pub struct DenseLayer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

/// Flat JSON layout: row-major weights.
#[derive(Serialize, Deserialize)]
struct LayerCheckpoint {
    inputs: usize,
    outputs: usize,
    activation: Activation,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl TryFrom<LayerCheckpoint> for DenseLayer {
    type Error = Error;

    fn try_from(c: LayerCheckpoint) -> Result<Self> {
        if c.weights.len() != c.inputs * c.outputs || c.bias.len() != c.outputs {
            return Err(Error::dim("layer checkpoint sizes do not match its shape"));
        }
        Ok(DenseLayer {
            weights: DMatrix::from_row_slice(c.outputs, c.inputs, &c.weights),
            bias: DVector::from_vec(c.bias),
            activation: c.activation,
        })
    }
}

impl From<DenseLayer> for LayerCheckpoint {
    fn from(l: DenseLayer) -> Self {
        LayerCheckpoint {
            inputs: l.weights.ncols(),
            outputs: l.weights.nrows(),
            activation: l.activation,
            weights: l.weights.transpose().as_slice().to_vec(),
            bias: l.bias.as_slice().to_vec(),
        }
    }
}

impl DenseLayer {
    pub fn new(weights: DMatrix<f64>, bias: DVector<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::dim(format!(
                "weights have {} rows but bias has {} entries",
                weights.nrows(),
                bias.len()
            )));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            weights: DMatrix::zeros(outputs, inputs),
            bias: DVector::zeros(outputs),
            activation,
        }
    }

    /// Glorot-uniform weights (four times wider for logsig), zero bias.
    pub fn glorot<R: Rng>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let mut limit = (6.0 / (inputs + outputs).max(1) as f64).sqrt();
        if activation == Activation::Logsig {
            limit *= 4.0;
        }
        Self {
            weights: DMatrix::from_fn(outputs, inputs, |_, _| rng.gen_range(-limit..=limit)),
            bias: DVector::zeros(outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn preactivation(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = &self.weights * x;
        for mut col in z.column_iter_mut() {
            col += &self.bias;
        }
        z
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.preactivation(x).map(|z| self.activation.apply(z))
    }

    pub fn forward_vector(&self, x: &DVector<f64>) -> DVector<f64> {
        (&self.weights * x + &self.bias).map(|z| self.activation.apply(z))
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedforwardNet {
    layers: Vec<DenseLayer>,
}

/// Stored intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub input: DMatrix<f64>,
    /// Pre-activations per layer.
    pub pre: Vec<DMatrix<f64>>,
    /// Outputs per layer (after activation and any dropout mask).
    pub post: Vec<DMatrix<f64>>,
    masks: Vec<Option<DMatrix<f64>>>,
}

impl ForwardPass {
    pub fn output(&self) -> &DMatrix<f64> {
        self.post.last().unwrap_or(&self.input)
    }
}

/// Parameter gradients, laid out like the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &FeedforwardNet) -> Self {
        Self {
            weights: net.layers.iter().map(|l| DMatrix::zeros(l.outputs(), l.inputs())).collect(),
            biases: net.layers.iter().map(|l| DVector::zeros(l.outputs())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    /// Same ordering as [`FeedforwardNet::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        out
    }
}

impl FeedforwardNet {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a network needs at least one layer"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[1].inputs() != pair[0].outputs() {
                return Err(Error::dim(format!(
                    "layer {} takes {} inputs but layer {} produces {}",
                    k + 1,
                    pair[1].inputs(),
                    k,
                    pair[0].outputs()
                )));
            }
        }
        if !layers.iter().all(DenseLayer::is_finite) {
            return Err(Error::invalid("network parameters must be finite"));
        }
        Ok(Self { layers })
    }

    /// Glorot-initialized stack with the given widths, e.g. `[10, 5, 1, 36]`.
    pub fn random<R: Rng>(widths: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || activations.len() != widths.len() - 1 {
            return Err(Error::invalid("need one activation per layer and at least two widths"));
        }
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| DenseLayer::glorot(w[0], w[1], act, rng))
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<DenseLayer> {
        self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn forward(&self, input: &DMatrix<f64>) -> Result<ForwardPass> {
        self.forward_masked(input, None)
    }

    /// Forward pass with optional multiplicative masks on layer outputs.
    pub fn forward_masked(
        &self,
        input: &DMatrix<f64>,
        masks: Option<&[Option<DMatrix<f64>>]>,
    ) -> Result<ForwardPass> {
        if input.nrows() != self.input_dim() {
            return Err(Error::dim(format!(
                "input has {} rows, network expects {}",
                input.nrows(),
                self.input_dim()
            )));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<DMatrix<f64>> = Vec::with_capacity(self.layers.len());
        let mut kept_masks = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let x = if k == 0 { input } else { &post[k - 1] };
            let z = layer.preactivation(x);
            let mut a = z.map(|v| layer.activation.apply(v));
            let mask = masks.and_then(|m| m.get(k).cloned().flatten());
            if let Some(m) = &mask {
                a.component_mul_assign(m);
            }
            pre.push(z);
            post.push(a);
            kept_masks.push(mask);
        }
        Ok(ForwardPass {
            input: input.clone(),
            pre,
            post,
            masks: kept_masks,
        })
    }

    pub fn predict(&self, input: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if input.nrows() != self.input_dim() {
            return Err(Error::dim(format!(
                "input has {} rows, network expects {}",
                input.nrows(),
                self.input_dim()
            )));
        }
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.forward(&x);
        }
        Ok(x)
    }

    pub fn predict_vector(&self, input: &DVector<f64>) -> Result<DVector<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::dim(format!(
                "input has length {}, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.forward_vector(&x);
        }
        Ok(x)
    }

    /// Reverse-mode gradients given `∂L/∂output` and optional extra
    /// `∂L/∂(layer k output)` terms for hidden layers.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        output_grad: &DMatrix<f64>,
        hidden_grads: Option<&[Option<DMatrix<f64>>]>,
    ) -> Gradients {
        let depth = self.layers.len();
        let mut grads = Gradients::zeros_like(self);
        let mut upstream = output_grad.clone();
        for k in (0..depth).rev() {
            let layer = &self.layers[k];
            if let Some(extra) = hidden_grads.and_then(|h| h.get(k)).and_then(Option::as_ref) {
                upstream += extra;
            }
            if let Some(mask) = &pass.masks[k] {
                upstream.component_mul_assign(mask);
            }
            let dz = upstream.zip_map(&pass.pre[k], |g, z| g * layer.activation.derivative(z));
            let prev = if k == 0 { &pass.input } else { &pass.post[k - 1] };
            grads.weights[k] = &dz * prev.transpose();
            grads.biases[k] = DVector::from_iterator(dz.nrows(), dz.row_iter().map(|r| r.sum()));
            if k > 0 {
                upstream = layer.weights.tr_mul(&dz);
            }
        }
        grads
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.outputs() * (l.inputs() + 1)).sum()
    }

    /// Weights (column-major) then bias, layer by layer.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        out
    }

    pub fn set_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::dim(format!(
                "got {} parameters, network has {}",
                params.len(),
                self.num_params()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.as_mut_slice().copy_from_slice(&params[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
        Ok(())
    }
}
