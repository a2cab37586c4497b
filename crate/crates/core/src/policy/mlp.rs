//! Small fully connected networks with hand-written backpropagation, and
//! the Adam optimizer that trains them.
//!
//! Parameters live in one flat vector, layer by layer: the `out x in`
//! weight matrix (row-major) followed by the `out` biases. Gradients use the
//! same layout, which keeps the optimizer and finite-difference checks
//! trivial.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the activation's output `a`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl LayerShape {
    fn len(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    shapes: Vec<LayerShape>,
    params: Vec<f64>,
}

/// Inputs to every layer plus the final output, from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache holds at least the input")
    }
}

impl Mlp {
    /// Layers `sizes[0] -> sizes[1] -> ...`; hidden layers use `hidden`,
    /// the last uses `output`. Glorot-uniform weights, zero biases, and the
    /// last layer's weights scaled by `output_gain`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        output_gain: f64,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let n_layers = sizes.len() - 1;
        let shapes: Vec<LayerShape> = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerShape {
                inputs: w[0],
                outputs: w[1],
                activation: if i + 1 == n_layers { output } else { hidden },
            })
            .collect();
        let mut params = Vec::with_capacity(shapes.iter().map(LayerShape::len).sum());
        for (i, s) in shapes.iter().enumerate() {
            let limit = (6.0 / (s.inputs + s.outputs) as f64).sqrt();
            let gain = if i + 1 == n_layers { output_gain } else { 1.0 };
            params.extend((0..s.inputs * s.outputs).map(|_| gain * rng.random_range(-limit..=limit)));
            params.extend(std::iter::repeat_n(0.0, s.outputs));
        }
        Self { shapes, params }
    }

    pub fn from_parts(shapes: Vec<LayerShape>, params: Vec<f64>) -> Option<Self> {
        let expected: usize = shapes.iter().map(LayerShape::len).sum();
        let chained = shapes.windows(2).all(|w| w[0].outputs == w[1].inputs);
        (expected == params.len() && chained && !shapes.is_empty()).then_some(Self { shapes, params })
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_inputs(&self) -> usize {
        self.shapes[0].inputs
    }

    pub fn n_outputs(&self) -> usize {
        self.shapes.last().unwrap().outputs
    }

    /// Weights and biases of layer `i`.
    pub fn layer(&self, i: usize) -> (&[f64], &[f64]) {
        let offset: usize = self.shapes[..i].iter().map(LayerShape::len).sum();
        let s = self.shapes[i];
        let w = &self.params[offset..offset + s.inputs * s.outputs];
        let b = &self.params[offset + s.inputs * s.outputs..offset + s.len()];
        (w, b)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).activations.pop().unwrap()
    }

    pub fn forward_cached(&self, x: &[f64]) -> ForwardCache {
        assert_eq!(x.len(), self.n_inputs());
        let mut activations = Vec::with_capacity(self.shapes.len() + 1);
        activations.push(x.to_vec());
        let mut offset = 0;
        for s in &self.shapes {
            let input = activations.last().unwrap();
            let w = &self.params[offset..offset + s.inputs * s.outputs];
            let b = &self.params[offset + s.inputs * s.outputs..offset + s.len()];
            let out: Vec<f64> = (0..s.outputs)
                .map(|j| {
                    let row = &w[j * s.inputs..(j + 1) * s.inputs];
                    let z = b[j] + row.iter().zip(input).map(|(wi, xi)| wi * xi).sum::<f64>();
                    s.activation.apply(z)
                })
                .collect();
            activations.push(out);
            offset += s.len();
        }
        ForwardCache { activations }
    }

    /// Accumulates `dL/dparams` into `grads` given `dL/doutput`, and returns
    /// `dL/dinput`.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f64], grads: &mut [f64]) -> Vec<f64> {
        assert_eq!(grads.len(), self.params.len());
        let mut offset = self.params.len();
        let mut upstream = grad_output.to_vec();
        for (l, s) in self.shapes.iter().enumerate().rev() {
            offset -= s.len();
            let input = &cache.activations[l];
            let output = &cache.activations[l + 1];
            let delta: Vec<f64> = upstream
                .iter()
                .zip(output)
                .map(|(g, &a)| g * s.activation.derivative_from_output(a))
                .collect();
            let w = &self.params[offset..offset + s.inputs * s.outputs];
            let mut next = vec![0.0; s.inputs];
            for (j, d) in delta.iter().enumerate() {
                let row = j * s.inputs;
                for i in 0..s.inputs {
                    grads[offset + row + i] += d * input[i];
                    next[i] += d * w[row + i];
                }
                grads[offset + s.inputs * s.outputs + j] += d;
            }
            upstream = next;
        }
        upstream
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// `params -= lr * m_hat / (sqrt(v_hat) + eps)`; pass negated
    /// gradients to ascend.
    pub fn descend(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}
