//! Generative transition model p(x, a): GEN emits the next observed token
//! (teacher forcing), the reduces mirror the encoder automaton, and the
//! joint log-probability accumulates action and word terms.
//!
//! The decoder regenerates exactly the stream the encoder consumed: the POS
//! stream in unlexicalized mode, the word stream in lexicalized mode.

use rand::{Rng, SeedableRng};

use crate::compose::{ArcDirection, Composer};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::lstm::{LstmCell, LstmState};
use crate::nn::params::{Init, MatId, ParamStore, VecId};
use crate::nn::stack_rnn::StackRnn;
use crate::nn::tape::{NodeId, Tape};
use crate::transition::{
    apply_action_mut, initial_state, valid_mask, Action, ParserState, Sentence,
};

pub struct DecoderModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    emit_vocab: usize,
    token_emb: MatId,
    stack_cell: LstmCell,
    output_cell: LstmCell,
    composer: Composer,
    act_w: MatId,
    act_b: VecId,
    word_w: MatId,
    word_b: VecId,
}

impl DecoderModel {
    pub fn new<R: Rng>(
        config: &ModelConfig,
        pos_vocab: usize,
        word_vocab: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let emit_vocab = if config.lexicalized { word_vocab } else { pos_vocab };
        if emit_vocab == 0 {
            return Err(Error::Config("decoder needs a non-empty emission vocabulary".into()));
        }
        let mut store = ParamStore::new();
        let input_dim = config.decoder_input_dim();
        let hidden = config.decoder_hidden;
        let token_emb = store.add_matrix("dec.token_emb", emit_vocab, input_dim, Init::Glorot, rng);
        let stack_cell = LstmCell::new(&mut store, "dec.stack", input_dim, hidden, config.layers, rng);
        let output_cell = LstmCell::new(&mut store, "dec.output", input_dim, hidden, config.layers, rng);
        let composer = Composer::new(&mut store, "dec.comp", input_dim, rng);
        let act_w = store.add_matrix("dec.act.w", Action::COUNT, 2 * hidden, Init::Glorot, rng);
        let act_b = store.add_vector("dec.act.b", Action::COUNT);
        let word_w = store.add_matrix("dec.word.w", emit_vocab, 2 * hidden, Init::Glorot, rng);
        let word_b = store.add_vector("dec.word.b", emit_vocab);
        Ok(DecoderModel {
            config: config.clone(),
            store,
            emit_vocab,
            token_emb,
            stack_cell,
            output_cell,
            composer,
            act_w,
            act_b,
            word_w,
            word_b,
        })
    }

    pub fn emit_vocab(&self) -> usize {
        self.emit_vocab
    }

    /// Id of the stream token the decoder must regenerate at each GEN.
    fn emit_id(&self, sentence: &Sentence, position: usize) -> Result<usize> {
        let t = sentence.token(position);
        let id = if self.config.lexicalized { t.word } else { t.pos };
        if id >= self.emit_vocab {
            return Err(Error::Vocab(format!(
                "token id {id} at position {position} outside emission vocabulary of size {}",
                self.emit_vocab
            )));
        }
        Ok(id)
    }

    pub fn start_run<'m>(&'m self, tape: &mut Tape, sentence: &Sentence) -> DecoderRun<'m> {
        let n = sentence.len();
        let stack = StackRnn::new(&self.stack_cell, tape);
        let output_state = self.output_cell.zero_state(tape);
        DecoderRun {
            model: self,
            stack,
            reprs: Vec::with_capacity(n),
            output_state,
            state: initial_state(n).expect("sentence is non-empty"),
            n,
            train: false,
            generated: 0,
        }
    }

    /// Joint log p(x, a) as a tape node: per-step action terms plus a word
    /// term for every GEN, scored against the observed stream in order.
    pub fn joint_log_prob_node<R: Rng>(
        &self,
        tape: &mut Tape,
        sentence: &Sentence,
        actions: &[Action],
        train: bool,
        rng: &mut R,
    ) -> Result<NodeId> {
        let mut run = self.start_run(tape, sentence);
        run.train = train;
        let mut terms = Vec::with_capacity(2 * actions.len());
        for (i, &a) in actions.iter().enumerate() {
            if run.is_terminal() {
                return Err(Error::Derivation {
                    step: i,
                    reason: "sequence continues past the terminal state".into(),
                });
            }
            if !run.mask()[a.index()] {
                return Err(Error::Derivation {
                    step: i,
                    reason: format!("{} is not valid here", a.name()),
                });
            }
            let (action_logp, word_logp) = run.log_distributions(tape, rng)?;
            terms.push(tape.pick(action_logp, a.index()));
            if a == Action::Shift {
                let emit = self.emit_id(sentence, run.generated)?;
                terms.push(tape.pick(word_logp, emit));
            }
            run.advance(tape, sentence, a, rng)?;
        }
        if !run.is_terminal() {
            return Err(Error::Derivation {
                step: actions.len(),
                reason: "sequence is incomplete".into(),
            });
        }
        Ok(tape.sum_scalars(&terms))
    }

    /// Log p(x, a) as a plain value (dropout off).
    pub fn joint_log_prob(&self, sentence: &Sentence, actions: &[Action]) -> Result<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new(&self.store);
        let node = self.joint_log_prob_node(&mut tape, sentence, actions, false, &mut rng)?;
        Ok(tape.scalar(node))
    }
}

/// One in-flight decoder pass. GEN is represented by [`Action::Shift`]; the
/// automaton is identical to the encoder's with the buffer cursor counting
/// generated tokens.
pub struct DecoderRun<'m> {
    model: &'m DecoderModel,
    stack: StackRnn<'m>,
    reprs: Vec<NodeId>,
    output_state: Vec<LstmState>,
    state: ParserState,
    n: usize,
    train: bool,
    generated: usize,
}

impl<'m> DecoderRun<'m> {
    pub fn is_terminal(&self) -> bool {
        self.state.is_terminal(self.n)
    }

    /// GEN is valid while fewer than n tokens have been generated; the
    /// reduces need two stack items, exactly as on the encoder side.
    pub fn mask(&self) -> [bool; Action::COUNT] {
        valid_mask(&self.state, self.n)
    }

    /// Transitional state embedding u_t = [stack summary; output buffer].
    fn step_embedding<R: Rng>(&mut self, tape: &mut Tape, rng: &mut R) -> NodeId {
        let stack_summary = self.stack.summary();
        let out = LstmCell::summary(&self.output_state);
        let u = tape.concat2(stack_summary, out);
        if self.train {
            tape.dropout(u, self.model.config.dropout, rng)
        } else {
            u
        }
    }

    /// Masked action log-distribution and the full-vocabulary word
    /// log-distribution at the current state.
    pub fn log_distributions<R: Rng>(
        &mut self,
        tape: &mut Tape,
        rng: &mut R,
    ) -> Result<(NodeId, NodeId)> {
        if self.is_terminal() {
            return Err(Error::Contract("decoder distribution requested at terminal state".into()));
        }
        let u = self.step_embedding(tape, rng);
        let act_lin = tape.matvec(self.model.act_w, u);
        let act_logits = tape.add_param_vec(act_lin, self.model.act_b);
        let action_logp = tape.masked_log_softmax(act_logits, &self.mask())?;
        let word_lin = tape.matvec(self.model.word_w, u);
        let word_logits = tape.add_param_vec(word_lin, self.model.word_b);
        let word_logp = tape.masked_log_softmax(word_logits, &vec![true; self.model.emit_vocab])?;
        Ok((action_logp, word_logp))
    }

    /// Probability-space (action, word) distributions.
    pub fn distributions<R: Rng>(
        &mut self,
        tape: &mut Tape,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let (a, w) = self.log_distributions(tape, rng)?;
        let to_probs = |tape: &Tape, id: NodeId| {
            tape.value(id)
                .iter()
                .map(|lp| if *lp == f64::NEG_INFINITY { 0.0 } else { lp.exp() })
                .collect()
        };
        Ok((to_probs(tape, a), to_probs(tape, w)))
    }

    pub fn advance<R: Rng>(
        &mut self,
        tape: &mut Tape,
        sentence: &Sentence,
        action: Action,
        rng: &mut R,
    ) -> Result<()> {
        if !self.mask()[action.index()] {
            return Err(Error::Transition {
                action: action.name(),
                step: self.state.step(),
                reason: "action masked out",
            });
        }
        match action {
            Action::Shift => {
                let emit = self.model.emit_id(sentence, self.generated)?;
                let raw = tape.embed_row(self.model.token_emb, emit);
                let emb = if self.train {
                    tape.dropout(raw, self.model.config.dropout, rng)
                } else {
                    raw
                };
                self.stack.push(tape, emb);
                self.reprs.push(emb);
                self.output_state = self.model.output_cell.step(tape, emb, &self.output_state);
                self.generated += 1;
            }
            Action::LeftReduce | Action::RightReduce => {
                let s0 = self.reprs.pop().expect("mask guarantees depth 2");
                let s1 = self.reprs.pop().expect("mask guarantees depth 2");
                let (head, dep, dir) = if action == Action::LeftReduce {
                    (s0, s1, ArcDirection::Left)
                } else {
                    (s1, s0, ArcDirection::Right)
                };
                let composed = self.model.composer.compose(tape, head, dep, dir);
                let composed = if self.train {
                    tape.dropout(composed, self.model.config.dropout, rng)
                } else {
                    composed
                };
                self.stack.pop();
                self.stack.pop();
                self.stack.push(tape, composed);
                self.reprs.push(composed);
            }
        }
        apply_action_mut(&mut self.state, action)
    }
}
