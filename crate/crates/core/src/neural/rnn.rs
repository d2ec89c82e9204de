use serde::{Deserialize, Serialize};

use super::{glorot_uniform, Parameterized};
use crate::diffmath::{Tape, Tensor, Var};
use crate::error::{LatteError, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    #[default]
    Gru,
    Lstm,
}

impl CellKind {
    fn gate_names(self) -> &'static [&'static str] {
        match self {
            CellKind::Gru => &["z", "r", "h"],
            CellKind::Lstm => &["i", "f", "g", "o"],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Gate {
    input: Tensor,
    recurrent: Tensor,
    bias: Tensor,
}

/// Stacked GRU or LSTM. Gates use the row-vector convention
/// `x · W + h · U + b`.
///
/// GRU update:
/// z = σ(xW_z + hU_z + b_z), r = σ(xW_r + hU_r + b_r),
/// h̃ = tanh(xW_h + (r⊙h)U_h + b_h), h' = (1 − z)⊙h + z⊙h̃.
#[derive(Debug, Clone, PartialEq)]
pub struct Rnn {
    prefix: String,
    kind: CellKind,
    input_dim: usize,
    hidden_dim: usize,
    layers: Vec<Vec<Gate>>,
}

impl Rnn {
    pub fn new(
        prefix: impl Into<String>,
        kind: CellKind,
        input_dim: usize,
        hidden_dim: usize,
        num_layers: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        Self::build(prefix, kind, input_dim, hidden_dim, num_layers, |i, o| {
            glorot_uniform(i, o, rng)
        })
    }

    pub fn zeros(
        prefix: impl Into<String>,
        kind: CellKind,
        input_dim: usize,
        hidden_dim: usize,
        num_layers: usize,
    ) -> Result<Self> {
        Self::build(prefix, kind, input_dim, hidden_dim, num_layers, |i, o| {
            Tensor::zeros(&[i, o])
        })
    }

    fn build(
        prefix: impl Into<String>,
        kind: CellKind,
        input_dim: usize,
        hidden_dim: usize,
        num_layers: usize,
        mut init: impl FnMut(usize, usize) -> Tensor,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || num_layers == 0 {
            return Err(LatteError::contract(format!(
                "RNN sizes must be positive (input {input_dim}, hidden {hidden_dim}, layers {num_layers})"
            )));
        }
        let layers = (0..num_layers)
            .map(|l| {
                let in_dim = if l == 0 { input_dim } else { hidden_dim };
                kind.gate_names()
                    .iter()
                    .map(|_| Gate {
                        input: init(in_dim, hidden_dim),
                        recurrent: init(hidden_dim, hidden_dim),
                        bias: Tensor::zeros(&[hidden_dim]),
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            prefix: prefix.into(),
            kind,
            input_dim,
            hidden_dim,
            layers,
        })
    }

    pub fn kind(&self) -> CellKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    fn names(&self, layer: usize, gate: usize) -> [String; 3] {
        let g = self.kind.gate_names()[gate];
        [
            format!("{}.{}.{}.input", self.prefix, layer, g),
            format!("{}.{}.{}.recurrent", self.prefix, layer, g),
            format!("{}.{}.{}.bias", self.prefix, layer, g),
        ]
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<BoundRnn> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (l, gates) in self.layers.iter().enumerate() {
            let mut bound = Vec::with_capacity(gates.len());
            for (g, gate) in gates.iter().enumerate() {
                let [wn, un, bn] = self.names(l, g);
                bound.push([
                    tape.param(wn, &gate.input)?,
                    tape.param(un, &gate.recurrent)?,
                    tape.param(bn, &gate.bias)?,
                ]);
            }
            layers.push(bound);
        }
        Ok(BoundRnn {
            kind: self.kind,
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            layers,
        })
    }
}

impl Parameterized for Rnn {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (l, gates) in self.layers.iter().enumerate() {
            for (g, gate) in gates.iter().enumerate() {
                let [wn, un, bn] = self.names(l, g);
                f(&wn, &gate.input);
                f(&un, &gate.recurrent);
                f(&bn, &gate.bias);
            }
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for l in 0..self.layers.len() {
            for g in 0..self.layers[l].len() {
                let [wn, un, bn] = self.names(l, g);
                let gate = &mut self.layers[l][g];
                f(&wn, &mut gate.input);
                f(&un, &mut gate.recurrent);
                f(&bn, &mut gate.bias);
            }
        }
    }
}

/// Per-layer recurrent state. `cell` is only present for LSTM.
#[derive(Debug, Clone, Copy)]
pub struct LayerState {
    pub h: Var,
    pub cell: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct HiddenState {
    pub layers: Vec<LayerState>,
}

impl HiddenState {
    /// Output of the top layer.
    pub fn top(&self) -> Var {
        self.layers.last().expect("non-empty state").h
    }
}

/// An [`Rnn`] whose parameters live on a tape.
#[derive(Debug, Clone)]
pub struct BoundRnn {
    kind: CellKind,
    input_dim: usize,
    hidden_dim: usize,
    layers: Vec<Vec<[Var; 3]>>,
}

impl BoundRnn {
    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    /// All-zero initial state for `batch` rows.
    pub fn zero_state(&self, tape: &mut Tape, batch: usize) -> Result<HiddenState> {
        let zeros = tape.constant(Tensor::zeros(&[batch, self.hidden_dim]))?;
        let cell = match self.kind {
            CellKind::Gru => None,
            CellKind::Lstm => Some(zeros),
        };
        Ok(HiddenState {
            layers: vec![LayerState { h: zeros, cell }; self.layers.len()],
        })
    }

    fn gate(&self, tape: &mut Tape, gate: [Var; 3], x: Var, h: Var) -> Result<Var> {
        let [w, u, b] = gate;
        let xw = tape.matmul(x, w)?;
        let hu = tape.matmul(h, u)?;
        let s = tape.add(xw, hu)?;
        tape.add(s, b)
    }

    /// One recurrent update over every layer.
    pub fn step(&self, tape: &mut Tape, x: Var, prev: &HiddenState) -> Result<HiddenState> {
        let xs = tape.shape(x).to_vec();
        if xs.len() != 2 || xs[1] != self.input_dim {
            return Err(LatteError::dim(format!(
                "RNN expects [batch, {}] input, got {:?}",
                self.input_dim, xs
            )));
        }
        if prev.layers.len() != self.layers.len() {
            return Err(LatteError::dim(format!(
                "hidden state has {} layers, cell has {}",
                prev.layers.len(),
                self.layers.len()
            )));
        }
        let mut input = x;
        let mut next = Vec::with_capacity(self.layers.len());
        for (gates, state) in self.layers.iter().zip(&prev.layers) {
            let hs = tape.shape(state.h);
            if hs != [xs[0], self.hidden_dim] {
                return Err(LatteError::dim(format!(
                    "hidden state shape {:?}, expected [{}, {}]",
                    hs, xs[0], self.hidden_dim
                )));
            }
            let layer = match self.kind {
                CellKind::Gru => self.gru_layer(tape, gates, input, state.h)?,
                CellKind::Lstm => {
                    let c = state
                        .cell
                        .ok_or_else(|| LatteError::contract("LSTM state without cell"))?;
                    self.lstm_layer(tape, gates, input, state.h, c)?
                }
            };
            input = layer.h;
            next.push(layer);
        }
        Ok(HiddenState { layers: next })
    }

    fn gru_layer(&self, tape: &mut Tape, g: &[[Var; 3]], x: Var, h: Var) -> Result<LayerState> {
        let z_pre = self.gate(tape, g[0], x, h)?;
        let z = tape.sigmoid(z_pre)?;
        let r_pre = self.gate(tape, g[1], x, h)?;
        let r = tape.sigmoid(r_pre)?;
        let rh = tape.mul(r, h)?;
        let cand_pre = self.gate(tape, g[2], x, rh)?;
        let cand = tape.tanh(cand_pre)?;
        let keep = tape.one_minus(z)?;
        let kept = tape.mul(keep, h)?;
        let written = tape.mul(z, cand)?;
        let h_new = tape.add(kept, written)?;
        Ok(LayerState { h: h_new, cell: None })
    }

    fn lstm_layer(&self, tape: &mut Tape, g: &[[Var; 3]], x: Var, h: Var, c: Var) -> Result<LayerState> {
        let i_pre = self.gate(tape, g[0], x, h)?;
        let i = tape.sigmoid(i_pre)?;
        let f_pre = self.gate(tape, g[1], x, h)?;
        let f = tape.sigmoid(f_pre)?;
        let g_pre = self.gate(tape, g[2], x, h)?;
        let cand = tape.tanh(g_pre)?;
        let o_pre = self.gate(tape, g[3], x, h)?;
        let o = tape.sigmoid(o_pre)?;
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, cand)?;
        let c_new = tape.add(fc, ig)?;
        let tc = tape.tanh(c_new)?;
        let h_new = tape.mul(o, tc)?;
        Ok(LayerState {
            h: h_new,
            cell: Some(c_new),
        })
    }
}
