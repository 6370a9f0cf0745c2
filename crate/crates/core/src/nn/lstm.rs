//! LSTM cells on the tape, single- or multi-layer.

use rand::Rng;

use crate::nn::params::{Init, MatId, ParamStore, VecId};
use crate::nn::tape::{NodeId, Tape};

/// Weights for one LSTM layer: a combined 4H x (in + H) matrix over
/// [input; hidden] and a 4H bias, gate order i, f, o, g.
#[derive(Debug, Clone, Copy)]
pub struct LstmLayer {
    pub w: MatId,
    pub b: VecId,
    pub hidden: usize,
}

impl LstmLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add_matrix(&format!("{name}.w"), 4 * hidden, input_dim + hidden, Init::Glorot, rng);
        let b = store.add_vector(&format!("{name}.b"), 4 * hidden);
        LstmLayer { w, b, hidden }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: NodeId,
    pub c: NodeId,
}

pub fn lstm_step(tape: &mut Tape, layer: &LstmLayer, x: NodeId, prev: LstmState) -> LstmState {
    let hidden = layer.hidden;
    let xh = tape.concat2(x, prev.h);
    let lin = tape.matvec(layer.w, xh);
    let pre = tape.add_param_vec(lin, layer.b);
    let i_pre = tape.slice(pre, 0, hidden);
    let f_pre = tape.slice(pre, hidden, hidden);
    let o_pre = tape.slice(pre, 2 * hidden, hidden);
    let g_pre = tape.slice(pre, 3 * hidden, hidden);
    let i = tape.sigmoid(i_pre);
    let f = tape.sigmoid(f_pre);
    let o = tape.sigmoid(o_pre);
    let g = tape.tanh(g_pre);
    let fc = tape.mul(f, prev.c);
    let ig = tape.mul(i, g);
    let c = tape.add(fc, ig);
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc);
    LstmState { h, c }
}

/// A stack of LSTM layers stepped together; layer k consumes layer k-1's
/// hidden state.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub layers: Vec<LstmLayer>,
}

impl LstmCell {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        num_layers: usize,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let in_dim = if l == 0 { input_dim } else { hidden };
            layers.push(LstmLayer::new(store, &format!("{name}.l{l}"), in_dim, hidden, rng));
        }
        LstmCell { layers }
    }

    pub fn hidden(&self) -> usize {
        self.layers.last().expect("at least one layer").hidden
    }

    pub fn zero_state(&self, tape: &mut Tape) -> Vec<LstmState> {
        self.layers
            .iter()
            .map(|l| {
                let h = tape.zeros(l.hidden);
                let c = tape.zeros(l.hidden);
                LstmState { h, c }
            })
            .collect()
    }

    pub fn step(&self, tape: &mut Tape, x: NodeId, prev: &[LstmState]) -> Vec<LstmState> {
        debug_assert_eq!(prev.len(), self.layers.len());
        let mut states = Vec::with_capacity(self.layers.len());
        let mut input = x;
        for (layer, p) in self.layers.iter().zip(prev) {
            let s = lstm_step(tape, layer, input, *p);
            input = s.h;
            states.push(s);
        }
        states
    }

    /// Hidden state of the top layer.
    pub fn summary(states: &[LstmState]) -> NodeId {
        states.last().expect("at least one layer").h
    }
}
