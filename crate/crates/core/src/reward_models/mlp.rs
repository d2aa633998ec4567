use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    /// Linear hidden layer; used to check homogeneity of the network.
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn slope(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Parameters of a `d -> h -> out` perceptron with one hidden layer.
///
/// All parameters live in one flat vector laid out as
/// `[W1 (h×d, row-major) | b1 (h) | W2 (out×h, row-major) | b2 (out)]`,
/// which is also the layout of gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    d: usize,
    h: usize,
    out: usize,
    activation: Activation,
    weights: Vec<f64>,
}

/// Hidden activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

impl MlpParams {
    pub fn param_count(d: usize, h: usize, out: usize) -> usize {
        h * d + h + out * h + out
    }

    pub fn zeros(d: usize, h: usize, out: usize) -> Result<Self> {
        if d < 1 || h < 1 || out < 1 {
            return Err(Error::arg(format!(
                "network dimensions must be positive, got d={d} h={h} out={out}"
            )));
        }
        Ok(Self {
            d,
            h,
            out,
            activation: Activation::Tanh,
            weights: vec![0.0; Self::param_count(d, h, out)],
        })
    }

    pub fn from_flat(
        d: usize,
        h: usize,
        out: usize,
        activation: Activation,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let mut p = Self::zeros(d, h, out)?;
        if weights.len() != p.weights.len() {
            return Err(Error::Shape {
                expected: p.weights.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::arg("network weights must be finite"));
        }
        p.weights = weights;
        p.activation = activation;
        Ok(p)
    }

    /// Uniform `±1/sqrt(fan_in)` weights, uniform first-layer biases and zero
    /// output biases.
    pub fn random<R: Rng + ?Sized>(d: usize, h: usize, out: usize, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(d, h, out)?;
        let b_in = 1.0 / (d as f64).sqrt();
        let b_hid = 1.0 / (h as f64).sqrt();
        let (w1_end, b1_end, w2_end) = p.offsets();
        for w in &mut p.weights[..b1_end] {
            *w = rng.random_range(-b_in..b_in);
        }
        debug_assert_eq!(w1_end, h * d);
        for w in &mut p.weights[b1_end..w2_end] {
            *w = rng.random_range(-b_hid..b_hid);
        }
        Ok(p)
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let w1 = self.h * self.d;
        let b1 = w1 + self.h;
        let w2 = b1 + self.out * self.h;
        (w1, b1, w2)
    }

    pub fn input_dim(&self) -> usize {
        self.d
    }

    pub fn hidden_dim(&self) -> usize {
        self.h
    }

    pub fn output_dim(&self) -> usize {
        self.out
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn first_layer(&self) -> &[f64] {
        &self.weights[..self.h * self.d]
    }

    /// Mutable view of the output bias vector.
    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let (_, _, w2) = self.offsets();
        &mut self.weights[w2..]
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::Shape {
                expected: self.d,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardCache> {
        self.check_input(x)?;
        let (w1_end, b1_end, w2_end) = self.offsets();
        let w1 = &self.weights[..w1_end];
        let b1 = &self.weights[w1_end..b1_end];
        let w2 = &self.weights[b1_end..w2_end];
        let b2 = &self.weights[w2_end..];
        let hidden: Vec<f64> = (0..self.h)
            .map(|j| {
                let row = &w1[j * self.d..(j + 1) * self.d];
                let pre = b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                self.activation.apply(pre)
            })
            .collect();
        let output = (0..self.out)
            .map(|k| {
                let row = &w2[k * self.h..(k + 1) * self.h];
                b2[k] + row.iter().zip(&hidden).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect();
        Ok(ForwardCache { hidden, output })
    }

    /// Accumulates `d_out · ∂output/∂params` into `grads`.
    pub fn backward(&self, x: &[f64], cache: &ForwardCache, d_out: &[f64], grads: &mut [f64]) {
        debug_assert_eq!(grads.len(), self.weights.len());
        debug_assert_eq!(d_out.len(), self.out);
        let (w1_end, b1_end, w2_end) = self.offsets();
        let w2 = &self.weights[b1_end..w2_end];
        let mut d_hidden = vec![0.0; self.h];
        for (k, &g) in d_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grads[w2_end + k] += g;
            let row = &w2[k * self.h..(k + 1) * self.h];
            let grow = &mut grads[b1_end + k * self.h..b1_end + (k + 1) * self.h];
            for j in 0..self.h {
                grow[j] += g * cache.hidden[j];
                d_hidden[j] += g * row[j];
            }
        }
        for j in 0..self.h {
            let d_pre = d_hidden[j] * self.activation.slope(cache.hidden[j]);
            if d_pre == 0.0 {
                continue;
            }
            grads[w1_end + j] += d_pre;
            let grow = &mut grads[j * self.d..(j + 1) * self.d];
            for (gw, xi) in grow.iter_mut().zip(x) {
                *gw += d_pre * xi;
            }
        }
    }
}
