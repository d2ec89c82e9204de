//! Feed-forward and recurrent building blocks, plus the optimizer.

mod adam;
mod mlp;
mod rnn;

pub use adam::{AdamConfig, AdamState};
pub use mlp::{Activation, BoundMlp, Mlp};
pub use rnn::{BoundRnn, CellKind, HiddenState, LayerState, Rnn};

use crate::diffmath::Tensor;
use crate::rng::SeededRng;

/// Anything holding named trainable tensors.
///
/// Names are stable: they are what the tape registers, what gradients are
/// keyed by, and what checkpoints store.
pub trait Parameterized {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |n, _| names.push(n.to_string()));
        names
    }

    fn param_count(&self) -> usize {
        let mut count = 0;
        self.visit_params(&mut |_, t| count += t.numel());
        count
    }
}

/// Glorot-uniform matrix: U(-l, l) with l = sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.uniform_range(-limit, limit))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("finite glorot draw")
}
