use serde::{Deserialize, Serialize};

use super::network::{Gradients, QNetwork};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    /// Added under the square root.
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            decay: 0.9,
            epsilon: 1e-8,
        }
    }
}

/// Squared-gradient accumulators for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub config: RmsPropConfig,
    sq_weights: Vec<Vec<f64>>,
    sq_biases: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(net: &QNetwork, config: RmsPropConfig) -> Self {
        Self {
            config,
            sq_weights: net
                .layers()
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            sq_biases: net
                .layers()
                .iter()
                .map(|l| vec![0.0; l.bias.len()])
                .collect(),
        }
    }

    pub fn accumulators(&self) -> impl Iterator<Item = &f64> {
        self.sq_weights
            .iter()
            .flatten()
            .chain(self.sq_biases.iter().flatten())
    }

    /// `acc = decay * acc + (1 - decay) g^2; p -= lr * g / sqrt(acc + eps)`.
    pub fn step(&mut self, net: &mut QNetwork, grads: &Gradients) -> Result<()> {
        if grads.weights.len() != self.sq_weights.len() {
            return Err(Error::usage(
                "gradient shape does not match optimizer state",
            ));
        }
        let RmsPropConfig {
            learning_rate,
            decay,
            epsilon,
        } = self.config;
        let update = |params: &mut [f64], acc: &mut [f64], g: &[f64]| {
            for ((p, a), &gi) in params.iter_mut().zip(acc.iter_mut()).zip(g) {
                *a = decay * *a + (1.0 - decay) * gi * gi;
                *p -= learning_rate * gi / (*a + epsilon).sqrt();
            }
        };
        for (l, layer) in net.layers_mut().iter_mut().enumerate() {
            if grads.weights[l].len() != layer.weights.len()
                || grads.biases[l].len() != layer.bias.len()
            {
                return Err(Error::usage("gradient shape does not match network"));
            }
            update(
                &mut layer.weights,
                &mut self.sq_weights[l],
                &grads.weights[l],
            );
            update(&mut layer.bias, &mut self.sq_biases[l], &grads.biases[l]);
        }
        Ok(())
    }
}
