//! Feed-forward network with an explicit activation tape.
//!
//! `forward` returns the output together with a [`Tape`] holding every layer
//! input and pre-activation; `backward` replays that tape to produce exact
//! reverse-mode gradients for the weights, the biases and the network input.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{axpy, Matrix};
use super::Parameters;
use crate::error::{Error, Result};
use crate::rng::normal_vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Relu),
            other => Err(Error::Format(format!("unknown activation tag {other}"))),
        }
    }
}

/// One affine layer; `weight` is `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

/// Activation cache from one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    shapes: Vec<(usize, usize)>,
    inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

impl Tape {
    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre_activations
    }
}

/// Gradients returned by [`MlpParams::backward`].
#[derive(Debug, Clone)]
pub struct MlpGradient {
    pub params: MlpParams,
    pub input: Vec<f64>,
}

impl MlpParams {
    /// Validates that layer shapes chain and that the last layer is affine.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::Dimension {
                    context: format!("bias of layer {i}"),
                    expected: layer.out_dim(),
                    actual: layer.bias.len(),
                });
            }
            if layer.bias.iter().any(|b| !b.is_finite()) || !layer.weight.is_finite() {
                return Err(Error::NonFinite(format!("parameters of layer {i}")));
            }
            if i > 0 && layers[i - 1].out_dim() != layer.in_dim() {
                return Err(Error::Dimension {
                    context: format!("input of layer {i}"),
                    expected: layers[i - 1].out_dim(),
                    actual: layer.in_dim(),
                });
            }
        }
        if layers.last().map(|l| l.activation) != Some(Activation::Identity) {
            return Err(Error::InvalidArgument(
                "final layer activation must be identity".into(),
            ));
        }
        Ok(Self { layers })
    }

    /// Random initialization: He-scaled weights for layers feeding a relu,
    /// `1/fan_in` variance otherwise; zero biases.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument("need at least input and output dims".into()));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (dims[i], dims[i + 1]);
                let activation = if i + 1 == n { Activation::Identity } else { hidden };
                let gain = if activation == Activation::Relu { 2.0 } else { 1.0 };
                let scale = (gain / fan_in.max(1) as f64).sqrt();
                let weight = Matrix::from_vec(fan_out, fan_in, normal_vec(rng, fan_in * fan_out, scale))
                    .expect("shape is consistent by construction");
                Layer {
                    weight,
                    bias: vec![0.0; fan_out],
                    activation,
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Matrix::zeros(l.out_dim(), l.in_dim()),
                    bias: vec![0.0; l.out_dim()],
                    activation: l.activation,
                })
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.out_dim(), l.in_dim())).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.out_dim() * (l.in_dim() + 1)).sum()
    }

    /// Forward pass without recording a tape.
    pub fn apply(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut a = input.to_vec();
        for layer in &self.layers {
            a = affine(layer, &a);
            if layer.activation == Activation::Relu {
                relu_in_place(&mut a);
            }
        }
        Ok(a)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut a = input.to_vec();
        for layer in &self.layers {
            let z = affine(layer, &a);
            let mut next = z.clone();
            if layer.activation == Activation::Relu {
                relu_in_place(&mut next);
            }
            inputs.push(std::mem::replace(&mut a, next));
            pre_activations.push(z);
        }
        let tape = Tape {
            shapes: self.shapes(),
            inputs,
            pre_activations,
        };
        Ok((a, tape))
    }

    pub fn backward(&self, tape: &Tape, output_gradient: &[f64]) -> Result<MlpGradient> {
        let mut params = self.zeros_like();
        let input = self.backward_accumulate(tape, output_gradient, &mut params)?;
        Ok(MlpGradient { params, input })
    }

    /// Adds the parameter gradient into `acc` and returns the input gradient.
    pub fn backward_accumulate(
        &self,
        tape: &Tape,
        output_gradient: &[f64],
        acc: &mut MlpParams,
    ) -> Result<Vec<f64>> {
        if tape.shapes != self.shapes() {
            return Err(Error::StaleTape("layer shapes differ from the network".into()));
        }
        if acc.shapes() != self.shapes() {
            return Err(Error::StaleTape("gradient buffer shapes differ from the network".into()));
        }
        if output_gradient.len() != self.output_dim() {
            return Err(Error::Dimension {
                context: "output gradient".into(),
                expected: self.output_dim(),
                actual: output_gradient.len(),
            });
        }
        let mut g = output_gradient.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                for (gi, zi) in g.iter_mut().zip(&tape.pre_activations[i]) {
                    if *zi <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            let grad_layer = &mut acc.layers[i];
            grad_layer.weight.add_outer(1.0, &g, &tape.inputs[i]);
            axpy(1.0, &g, &mut grad_layer.bias);
            g = layer.weight.transpose_matvec(&g);
        }
        Ok(g)
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension {
                context: "input of layer 0".into(),
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        Ok(())
    }
}

impl Parameters for MlpParams {
    fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.as_slice()])
            .collect()
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let Layer { weight, bias, .. } = l;
                [weight.data_mut(), bias.as_mut_slice()]
            })
            .collect()
    }
}

fn affine(layer: &Layer, a: &[f64]) -> Vec<f64> {
    let mut z = layer.weight.matvec(a);
    for (zi, bi) in z.iter_mut().zip(&layer.bias) {
        *zi += bi;
    }
    z
}

fn relu_in_place(v: &mut [f64]) {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}
