//! Dense ReLU network with hand-written reverse-mode gradients.
//!
//! Weights are stored `inputs × outputs`, so a batch forward pass is
//! `Z = X · W + b`. Hidden layers use ReLU with the subgradient at zero
//! taken as 0. The output layer is affine, optionally followed by a sigmoid.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::PipelineRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }
}

/// Gradients of every layer, same shapes as the parameters.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpFile", into = "MlpFile")]
pub struct Mlp {
    layers: Vec<Dense>,
    output: OutputActivation,
}

/// Activations recorded during a training forward pass.
pub struct Trace {
    /// Input to each layer (post-ReLU, post-dropout for hidden layers).
    inputs: Vec<Array2<f64>>,
    /// ReLU derivative times the dropout scale for each hidden layer.
    gates: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Mlp {
    /// He-uniform weights, zero biases.
    pub fn he_uniform(
        input: usize,
        hidden: &[usize],
        output: usize,
        activation: OutputActivation,
        rng: &mut PipelineRng,
    ) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let layers = widths
            .windows(2)
            .map(|w| {
                let limit = (6.0 / w[0] as f64).sqrt();
                let weights = Array2::from_shape_simple_fn((w[0], w[1]), || rng.random_range(-limit..limit));
                Dense {
                    weights,
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Self {
            layers,
            output: activation,
        }
    }

    pub fn from_layers(layers: Vec<Dense>, output: OutputActivation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.outputs() {
                return Err(Error::Shape {
                    expected: format!("bias of length {} in layer {i}", l.outputs()),
                    actual: l.bias.len().to_string(),
                });
            }
            if i > 0 && layers[i - 1].outputs() != l.inputs() {
                return Err(Error::Shape {
                    expected: format!("{} inputs to layer {i}", layers[i - 1].outputs()),
                    actual: l.inputs().to_string(),
                });
            }
        }
        Ok(Self { layers, output })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape {
                expected: format!("{} input columns", self.input_dim()),
                actual: x.ncols().to_string(),
            });
        }
        Ok(())
    }

    fn affine(layer: &Dense, a: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = a.dot(&layer.weights);
        z += &layer.bias;
        z
    }

    fn finish_output(&self, z: &mut Array2<f64>) {
        if self.output == OutputActivation::Sigmoid {
            z.mapv_inplace(sigmoid);
        }
    }

    /// Inference pass (no dropout).
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut a = Self::affine(&self.layers[0], &x);
        for layer in &self.layers[1..] {
            a.mapv_inplace(|v| v.max(0.0));
            a = Self::affine(layer, &a.view());
        }
        self.finish_output(&mut a);
        Ok(a)
    }

    /// Pre-activations of every layer for one batch, for kink diagnostics.
    pub fn pre_activations(&self, x: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        self.check_input(&x)?;
        let mut out = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = Self::affine(layer, &a.view());
            if i + 1 < self.layers.len() {
                a = z.mapv(|v| v.max(0.0));
            }
            out.push(z);
        }
        Ok(out)
    }

    /// Training pass with inverted dropout (rate `dropout`) on hidden activations.
    pub fn forward_train(&self, x: ArrayView2<f64>, dropout: f64, rng: &mut PipelineRng) -> Result<Trace> {
        self.check_input(&x)?;
        let keep_scale = 1.0 / (1.0 - dropout);
        let n_hidden = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut gates = Vec::with_capacity(n_hidden);
        let mut a = x.to_owned();
        for layer in &self.layers[..n_hidden] {
            let mut z = Self::affine(layer, &a.view());
            let mut gate = Array2::zeros(z.raw_dim());
            for (zv, g) in z.iter_mut().zip(gate.iter_mut()) {
                let kept = dropout == 0.0 || rng.random::<f64>() >= dropout;
                if *zv > 0.0 && kept {
                    *g = keep_scale;
                    *zv *= keep_scale;
                } else {
                    *zv = 0.0;
                }
            }
            inputs.push(std::mem::replace(&mut a, z));
            gates.push(gate);
        }
        let mut out = Self::affine(&self.layers[n_hidden], &a.view());
        inputs.push(a);
        self.finish_output(&mut out);
        Ok(Trace {
            inputs,
            gates,
            output: out,
        })
    }

    fn output_delta(&self, output: &Array2<f64>, mut d_out: Array2<f64>) -> Array2<f64> {
        if self.output == OutputActivation::Sigmoid {
            d_out.zip_mut_with(output, |d, &y| *d *= y * (1.0 - y));
        }
        d_out
    }

    /// Backpropagates `d_out = ∂L/∂output` through a recorded trace and
    /// returns the parameter gradients.
    pub fn backward(&self, trace: &Trace, d_out: Array2<f64>) -> Vec<LayerGrads> {
        let mut delta = self.output_delta(&trace.output, d_out);
        let mut grads = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let a = &trace.inputs[i];
            grads.push(LayerGrads {
                weights: a.t().dot(&delta).as_standard_layout().into_owned(),
                bias: delta.sum_axis(Axis(0)),
            });
            if i > 0 {
                let mut prev = delta.dot(&layer.weights.t());
                prev *= &trace.gates[i - 1];
                delta = prev;
            }
        }
        grads.reverse();
        grads
    }

    /// Inference pass followed by backpropagation to the inputs only.
    ///
    /// `d_loss` receives the network output and returns `∂L/∂output`.
    /// Returns the output and `∂L/∂X`.
    pub fn input_gradient_with<F>(&self, x: ArrayView2<f64>, d_loss: F) -> Result<(Array2<f64>, Array2<f64>)>
    where
        F: FnOnce(&Array2<f64>) -> Array2<f64>,
    {
        self.check_input(&x)?;
        let n_hidden = self.layers.len() - 1;
        let mut gates = Vec::with_capacity(n_hidden);
        let mut a = x.to_owned();
        for layer in &self.layers[..n_hidden] {
            let mut z = Self::affine(layer, &a.view());
            let gate = z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            z.mapv_inplace(|v| v.max(0.0));
            gates.push(gate);
            a = z;
        }
        let mut out = Self::affine(&self.layers[n_hidden], &a.view());
        self.finish_output(&mut out);
        let d_out = d_loss(&out);
        if d_out.dim() != out.dim() {
            return Err(Error::Shape {
                expected: format!("{:?} output gradient", out.dim()),
                actual: format!("{:?}", d_out.dim()),
            });
        }
        let mut delta = self.output_delta(&out, d_out);
        for i in (0..self.layers.len()).rev() {
            let mut prev = delta.dot(&self.layers[i].weights.t());
            if i > 0 {
                prev *= &gates[i - 1];
            }
            delta = prev;
        }
        Ok((out, delta))
    }

    /// Flat mutable views of all parameters: `[w0, b0, w1, b1, ...]`.
    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(l.weights.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MlpFile {
    output_activation: OutputActivation,
    layers: Vec<LayerFile>,
}

impl From<Mlp> for MlpFile {
    fn from(m: Mlp) -> Self {
        MlpFile {
            output_activation: m.output,
            layers: m
                .layers
                .into_iter()
                .map(|l| LayerFile {
                    inputs: l.inputs(),
                    outputs: l.outputs(),
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<MlpFile> for Mlp {
    type Error = Error;

    fn try_from(f: MlpFile) -> Result<Self> {
        let layers = f
            .layers
            .into_iter()
            .map(|l| {
                let weights = Array2::from_shape_vec((l.inputs, l.outputs), l.weights).map_err(|e| Error::Shape {
                    expected: format!("{}x{} weights", l.inputs, l.outputs),
                    actual: e.to_string(),
                })?;
                Ok(Dense {
                    weights,
                    bias: Array1::from(l.bias),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_layers(layers, f.output_activation)
    }
}
