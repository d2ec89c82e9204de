use serde::{Deserialize, Serialize};

use super::{glorot_uniform, Parameterized};
use crate::diffmath::{Tape, Tensor, Var};
use crate::error::{LatteError, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Softplus,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Softplus => tape.softplus(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    weight: Tensor,
    bias: Tensor,
}

/// Multi-layer perceptron. Layer i maps dims[i] to dims[i+1]; the hidden
/// activation follows every layer but the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    prefix: String,
    layers: Vec<Dense>,
    hidden: Activation,
    output: Activation,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new(
        prefix: impl Into<String>,
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        Self::check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| Dense {
                weight: glorot_uniform(w[0], w[1], rng),
                bias: Tensor::zeros(&[w[1]]),
            })
            .collect();
        Ok(Self {
            prefix: prefix.into(),
            layers,
            hidden,
            output,
        })
    }

    pub fn zeros(prefix: impl Into<String>, dims: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        Self::check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| Dense {
                weight: Tensor::zeros(&[w[0], w[1]]),
                bias: Tensor::zeros(&[w[1]]),
            })
            .collect();
        Ok(Self {
            prefix: prefix.into(),
            layers,
            hidden,
            output,
        })
    }

    fn check_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 {
            return Err(LatteError::contract(format!(
                "an MLP needs at least input and output sizes, got {dims:?}"
            )));
        }
        if dims.contains(&0) {
            return Err(LatteError::contract(format!("zero-width MLP layer in {dims:?}")));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.shape()[1]
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.weight.shape()[1]));
        d
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn weight(&self, layer: usize) -> &Tensor {
        &self.layers[layer].weight
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Tensor {
        &mut self.layers[layer].weight
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Tensor {
        &mut self.layers[layer].bias
    }

    /// Zeroes the last layer so the network outputs exactly 0 at init.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().unwrap();
        last.weight.data_mut().fill(0.0);
        last.bias.data_mut().fill(0.0);
    }

    fn names(&self, i: usize) -> (String, String) {
        (
            format!("{}.{}.weight", self.prefix, i),
            format!("{}.{}.bias", self.prefix, i),
        )
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<BoundMlp> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let (wn, bn) = self.names(i);
            layers.push((tape.param(wn, &l.weight)?, tape.param(bn, &l.bias)?));
        }
        Ok(BoundMlp {
            layers,
            in_dim: self.input_dim(),
            hidden: self.hidden,
            output: self.output,
        })
    }

    /// Binds and runs in one call.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.bind(tape)?.forward(tape, x)
    }
}

impl Parameterized for Mlp {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, l) in self.layers.iter().enumerate() {
            let (wn, bn) = self.names(i);
            f(&wn, &l.weight);
            f(&bn, &l.bias);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for i in 0..self.layers.len() {
            let (wn, bn) = self.names(i);
            f(&wn, &mut self.layers[i].weight);
            f(&bn, &mut self.layers[i].bias);
        }
    }
}

/// An [`Mlp`] whose parameters live on a tape.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    layers: Vec<(Var, Var)>,
    in_dim: usize,
    hidden: Activation,
    output: Activation,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let shape = tape.shape(x);
        if shape.len() != 2 || shape[1] != self.in_dim {
            return Err(LatteError::dim(format!(
                "MLP expects [batch, {}] input, got {:?}",
                self.in_dim, shape
            )));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let z = tape.matmul(h, w)?;
            let z = tape.add(z, b)?;
            let act = if i == last { self.output } else { self.hidden };
            h = act.apply(tape, z)?;
        }
        Ok(h)
    }
}
