//! Stack-LSTM: an LSTM whose hidden-state history forms a stack.
//!
//! `push` extends the chain from the current top; `pop` discards the top and
//! exposes the state that preceded the matching push, bit for bit. Values
//! live on the tape, so popping never recomputes anything.

use crate::nn::lstm::{LstmCell, LstmState};
use crate::nn::tape::{NodeId, Tape};

pub struct StackRnn<'c> {
    cell: &'c LstmCell,
    base: Vec<LstmState>,
    history: Vec<Vec<LstmState>>,
}

impl<'c> StackRnn<'c> {
    pub fn new(cell: &'c LstmCell, tape: &mut Tape) -> Self {
        let base = cell.zero_state(tape);
        StackRnn { cell, base, history: Vec::new() }
    }

    pub fn depth(&self) -> usize {
        self.history.len()
    }

    pub fn push(&mut self, tape: &mut Tape, x: NodeId) {
        let prev = self.history.last().unwrap_or(&self.base);
        let next = self.cell.step(tape, x, prev);
        self.history.push(next);
    }

    pub fn pop(&mut self) {
        self.history.pop().expect("pop on empty StackRnn");
    }

    /// Hidden state of the top layer at the stack top (the zero state when
    /// the stack is empty).
    pub fn summary(&self) -> NodeId {
        LstmCell::summary(self.history.last().unwrap_or(&self.base))
    }
}
