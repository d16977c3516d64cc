//! Dense networks with hand-written reverse-mode gradients.

mod adam;
pub mod checkpoint;
mod loss;

pub use adam::AdamState;
pub use loss::{class_indices, log_softmax, one_hot, soft_cross_entropy, soft_cross_entropy_with_grad, softmax};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            // NaN passes through so divergence is not masked.
            Activation::Relu => z.mapv(|v| if v < 0.0 { 0.0 } else { v }),
            Activation::Tanh => z.mapv(f64::tanh),
        }
    }

    /// Multiplies `grad` in place by the derivative evaluated at `z`.
    fn backprop(self, z: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Relu => grad.zip_mut_with(z, |g, &zv| {
                if zv <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Tanh => grad.zip_mut_with(z, |g, &zv| {
                let t = zv.tanh();
                *g *= 1.0 - t * t
            }),
        }
    }

    pub fn code(self) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::Tanh => 1.0,
        }
    }

    pub fn from_code(code: f64) -> Result<Self> {
        match code as i64 {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            _ => Err(Error::Checkpoint(format!("unknown activation code {code}"))),
        }
    }
}

/// Layer widths from input to output, plus the hidden activation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
}

impl NetSpec {
    pub fn new(layer_dims: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::domain("a network needs an input and an output width"));
        }
        if layer_dims.contains(&0) {
            return Err(Error::domain(format!("layer widths must be positive: {layer_dims:?}")));
        }
        Ok(Self { layer_dims, activation })
    }

    pub fn layers(&self) -> usize {
        self.layer_dims.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_in x fan_out`; inputs are row vectors.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Parameters of one multilayer perceptron. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// Access to every parameter tensor as a flat slice, in a fixed order.
pub trait Tensors {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(format!(
                "flat vector has {} entries, parameters have {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

impl Tensors for Params {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }
}

impl Params {
    pub fn zeros(spec: &NetSpec) -> Self {
        Self {
            layers: spec
                .layer_dims
                .windows(2)
                .map(|w| Layer {
                    weight: Array2::zeros((w[0], w[1])),
                    bias: Array1::zeros(w[1]),
                })
                .collect(),
            activation: spec.activation,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
            activation: self.activation,
        }
    }

    pub fn spec(&self) -> NetSpec {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.bias.len()));
        NetSpec {
            layer_dims: dims,
            activation: self.activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.nrows())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.bias.len())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, scale: f64, other: &Params) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.scaled_add(scale, &b.weight);
            a.bias.scaled_add(scale, &b.bias);
        }
    }
}

/// Glorot-uniform weights with bound `sqrt(6 / (fan_in + fan_out))` and
/// zero biases.
pub fn init_params<R: Rng + ?Sized>(spec: &NetSpec, rng: &mut R) -> Params {
    let mut params = Params::zeros(spec);
    for layer in &mut params.layers {
        let (fan_in, fan_out) = layer.weight.dim();
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        layer.weight.mapv_inplace(|_| rng.random_range(-bound..=bound));
    }
    params
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct GradTape {
    inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
    complete: bool,
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }
}

/// Gradients produced by [`backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Params,
    /// Gradient with respect to the network input, when requested.
    pub input: Option<Array2<f64>>,
}

/// Forward pass; the output layer is affine (logits).
pub fn mlp_forward(params: &Params, x: ArrayView2<f64>, mut tape: Option<&mut GradTape>) -> Result<Array2<f64>> {
    if x.ncols() != params.input_dim() {
        return Err(Error::shape(format!(
            "input has {} columns, network expects {}",
            x.ncols(),
            params.input_dim()
        )));
    }
    if let Some(t) = tape.as_deref_mut() {
        *t = GradTape::default();
    }
    let last = params.layers.len() - 1;
    let mut h = x.to_owned();
    for (l, layer) in params.layers.iter().enumerate() {
        let mut z = h.dot(&layer.weight);
        z += &layer.bias;
        let next = if l < last {
            params.activation.apply(&z)
        } else {
            z.clone()
        };
        if let Some(t) = tape.as_deref_mut() {
            t.inputs.push(h);
            if l < last {
                t.pre_activations.push(z);
            }
        }
        h = next;
    }
    if let Some(t) = tape {
        t.complete = true;
    }
    Ok(h)
}

/// Reverse pass through a recorded forward pass, seeded with the gradient of
/// a scalar loss with respect to the network output.
pub fn backward(params: &Params, tape: &GradTape, d_output: ArrayView2<f64>, want_input: bool) -> Result<Gradients> {
    if !tape.complete || tape.inputs.len() != params.layers.len() {
        return Err(Error::state("tape does not hold a completed forward pass"));
    }
    let n = tape.inputs[0].nrows();
    if d_output.dim() != (n, params.output_dim()) {
        return Err(Error::shape(format!(
            "output gradient is {:?}, expected ({n}, {})",
            d_output.dim(),
            params.output_dim()
        )));
    }
    let mut grads = params.zeros_like();
    let mut delta = d_output.to_owned();
    let mut input = None;
    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        grads.layers[l].weight = tape.inputs[l].t().dot(&delta);
        grads.layers[l].bias = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut dh = delta.dot(&layer.weight.t());
            params.activation.backprop(&tape.pre_activations[l - 1], &mut dh);
            delta = dh;
        } else if want_input {
            input = Some(delta.dot(&layer.weight.t()));
        }
    }
    Ok(Gradients { params: grads, input })
}
