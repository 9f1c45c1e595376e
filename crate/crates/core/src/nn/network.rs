use rand::Rng;

use crate::error::{Error, Result};

/// Fully connected layer. Weights are stored input-major: `weights[i * outputs + o]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.outputs..(i + 1) * self.outputs]
    }
}

/// Feed-forward action-value network: ReLU hidden layers, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    layers: Vec<Dense>,
}

/// One regression sample: only output `action` is pulled towards `target`.
#[derive(Debug, Clone, Copy)]
pub struct TrainingSample<'a> {
    pub obs: &'a [f64],
    pub action: usize,
    pub target: f64,
}

/// Gradients shaped like the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &QNetwork) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .flatten()
            .chain(self.biases.iter().flatten())
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

impl QNetwork {
    /// All-zero parameters.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::check_dims(dims)?;
        Ok(Self {
            layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        })
    }

    /// Uniform `±sqrt(6 / (fan_in + fan_out))` weights and zero biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        for layer in &mut net.layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::usage("a network needs at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].outputs != w[1].inputs {
                return Err(Error::usage("layer dimensions do not chain"));
            }
        }
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::usage("parameter array has the wrong length"));
            }
        }
        Ok(Self { layers })
    }

    fn check_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::usage(format!("invalid layer dimensions {dims:?}")));
        }
        Ok(())
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].inputs];
        d.extend(self.layers.iter().map(|l| l.outputs));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Overwrites all parameters with those of `other` (same shape).
    pub fn copy_from(&mut self, other: &QNetwork) {
        debug_assert_eq!(self.dims(), other.dims());
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            dst.weights.copy_from_slice(&src.weights);
            dst.bias.copy_from_slice(&src.bias);
        }
    }

    pub fn forward(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.forward_batch(obs, 1)
    }

    /// Forward pass over `n` row-major inputs; returns `n * output_dim` values.
    pub fn forward_batch(&self, inputs: &[f64], n: usize) -> Result<Vec<f64>> {
        self.check_input(inputs, n)?;
        let mut acts = inputs.to_vec();
        for (idx, layer) in self.layers.iter().enumerate() {
            acts = layer_forward(layer, &acts, n, idx + 1 < self.layers.len());
        }
        Ok(acts)
    }

    fn check_input(&self, inputs: &[f64], n: usize) -> Result<()> {
        if n == 0 || inputs.len() != n * self.input_dim() {
            return Err(Error::usage(format!(
                "expected {n} inputs of length {}, got {} values",
                self.input_dim(),
                inputs.len()
            )));
        }
        Ok(())
    }

    /// Gradients of `sum (target - Q(obs, action))^2` over the batch.
    ///
    /// Returns the gradients and the loss value.
    pub fn backward(&self, batch: &[TrainingSample<'_>]) -> Result<(Gradients, f64)> {
        if batch.is_empty() {
            return Err(Error::usage("backward needs a non-empty batch"));
        }
        let n = batch.len();
        let in_dim = self.input_dim();
        let out_dim = self.output_dim();
        let mut input = Vec::with_capacity(n * in_dim);
        for s in batch {
            if s.obs.len() != in_dim {
                return Err(Error::usage(format!(
                    "observation length {} does not match network input {in_dim}",
                    s.obs.len()
                )));
            }
            if s.action >= out_dim {
                return Err(Error::usage(format!("action {} out of range", s.action)));
            }
            input.extend_from_slice(s.obs);
        }

        let depth = self.layers.len();
        let mut acts = Vec::with_capacity(depth + 1);
        acts.push(input);
        for (idx, layer) in self.layers.iter().enumerate() {
            let next = layer_forward(layer, &acts[idx], n, idx + 1 < depth);
            acts.push(next);
        }

        let q = &acts[depth];
        let mut loss = 0.0;
        let mut delta = vec![0.0; n * out_dim];
        for (s, sample) in batch.iter().enumerate() {
            let residual = q[s * out_dim + sample.action] - sample.target;
            loss += residual * residual;
            delta[s * out_dim + sample.action] = 2.0 * residual;
        }

        let mut grads = Gradients::zeros_like(self);
        for l in (0..depth).rev() {
            let layer = &self.layers[l];
            let a_in = &acts[l];
            let (gw, gb) = (&mut grads.weights[l], &mut grads.biases[l]);
            let (fan_in, fan_out) = (layer.inputs, layer.outputs);
            for s in 0..n {
                let d = &delta[s * fan_out..(s + 1) * fan_out];
                axpy(gb, 1.0, d);
                let a = &a_in[s * fan_in..(s + 1) * fan_in];
                for (i, &x) in a.iter().enumerate() {
                    if x != 0.0 {
                        axpy(&mut gw[i * fan_out..(i + 1) * fan_out], x, d);
                    }
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; n * fan_in];
                for s in 0..n {
                    let d = &delta[s * fan_out..(s + 1) * fan_out];
                    let a = &a_in[s * fan_in..(s + 1) * fan_in];
                    let p = &mut prev[s * fan_in..(s + 1) * fan_in];
                    for i in 0..fan_in {
                        // ReLU derivative: the unit was active iff its output is positive.
                        if a[i] > 0.0 {
                            p[i] = dot(layer.row(i), d);
                        }
                    }
                }
                delta = prev;
            }
        }
        Ok((grads, loss))
    }

    /// The same loss as [`QNetwork::backward`], forward pass only.
    pub fn loss(&self, batch: &[TrainingSample<'_>]) -> Result<f64> {
        let mut total = 0.0;
        for s in batch {
            let q = self.forward(s.obs)?;
            let r = s.target - q[s.action];
            total += r * r;
        }
        Ok(total)
    }
}

fn layer_forward(layer: &Dense, input: &[f64], n: usize, relu: bool) -> Vec<f64> {
    let (fan_in, fan_out) = (layer.inputs, layer.outputs);
    let mut out = vec![0.0; n * fan_out];
    for s in 0..n {
        let row = &mut out[s * fan_out..(s + 1) * fan_out];
        row.copy_from_slice(&layer.bias);
        let x = &input[s * fan_in..(s + 1) * fan_in];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                axpy(row, xi, layer.row(i));
            }
        }
        if relu {
            for v in row.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }
    out
}
