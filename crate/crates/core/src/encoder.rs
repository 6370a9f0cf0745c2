//! Discriminative transition model q(a|x): per-step action distributions
//! over SHIFT / LEFT-REDUCE / RIGHT-REDUCE, sequence log-probabilities,
//! ancestral sampling, and greedy parsing. This is the component that
//! parses at run time.

use rand::{Rng, SeedableRng};

use crate::compose::{ArcDirection, Composer};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::lstm::LstmCell;
use crate::nn::params::{Init, MatId, ParamStore, VecId};
use crate::nn::stack_rnn::StackRnn;
use crate::nn::tape::{NodeId, Tape};
use crate::transition::{
    actions_to_tree, apply_action_mut, initial_state, valid_mask, Action, DepTree, ParserState,
    Sentence, Token,
};

pub struct EncoderModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pos_emb: MatId,
    word_emb: Option<MatId>,
    cluster_emb: Option<MatId>,
    stack_cell: LstmCell,
    buffer_cell: LstmCell,
    composer: Composer,
    act_w: MatId,
    act_b: VecId,
}

impl EncoderModel {
    pub fn new<R: Rng>(
        config: &ModelConfig,
        pos_vocab: usize,
        word_vocab: usize,
        cluster_vocab: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let pos_emb = store.add_matrix("enc.pos_emb", pos_vocab, config.pos_dim, Init::Glorot, rng);
        let word_emb = config
            .lexicalized
            .then(|| store.add_matrix("enc.word_emb", word_vocab, config.word_dim, Init::Glorot, rng));
        let cluster_emb = (config.lexicalized && config.cluster_dim > 0).then(|| {
            store.add_matrix("enc.cluster_emb", cluster_vocab, config.cluster_dim, Init::Glorot, rng)
        });
        let input_dim = config.encoder_input_dim();
        let hidden = config.encoder_hidden;
        let stack_cell = LstmCell::new(&mut store, "enc.stack", input_dim, hidden, config.layers, rng);
        let buffer_cell = LstmCell::new(&mut store, "enc.buffer", input_dim, hidden, config.layers, rng);
        let composer = Composer::new(&mut store, "enc.comp", input_dim, rng);
        let act_w = store.add_matrix("enc.act.w", Action::COUNT, 2 * hidden, Init::Glorot, rng);
        let act_b = store.add_vector("enc.act.b", Action::COUNT);
        Ok(EncoderModel {
            config: config.clone(),
            store,
            pos_emb,
            word_emb,
            cluster_emb,
            stack_cell,
            buffer_cell,
            composer,
            act_w,
            act_b,
        })
    }

    fn input_embedding<R: Rng>(
        &self,
        tape: &mut Tape,
        token: Token,
        train: bool,
        rng: &mut R,
    ) -> NodeId {
        let pos = tape.embed_row(self.pos_emb, token.pos);
        let raw = match (self.word_emb, self.cluster_emb) {
            (None, _) => pos,
            (Some(w), None) => {
                let word = tape.embed_row(w, token.word);
                tape.concat2(word, pos)
            }
            (Some(w), Some(c)) => {
                let word = tape.embed_row(w, token.word);
                let cluster = tape.embed_row(c, token.word);
                tape.concat3(word, pos, cluster)
            }
        };
        if train {
            tape.dropout(raw, self.config.dropout, rng)
        } else {
            raw
        }
    }

    /// Starts a run over one sentence: embeds the tokens, precomputes the
    /// right-to-left buffer encoding, and initializes the automaton.
    pub fn start_run<'m, R: Rng>(
        &'m self,
        tape: &mut Tape,
        sentence: &Sentence,
        train: bool,
        rng: &mut R,
    ) -> EncoderRun<'m> {
        let n = sentence.len();
        let embeddings: Vec<NodeId> = sentence
            .tokens()
            .iter()
            .map(|&t| self.input_embedding(tape, t, train, rng))
            .collect();
        // buffer_enc[i] summarizes tokens i..n scanned right to left;
        // buffer_enc[n] is the zero state (empty buffer).
        let mut buffer_enc = vec![0; n + 1];
        let mut state = self.buffer_cell.zero_state(tape);
        buffer_enc[n] = LstmCell::summary(&state);
        for i in (0..n).rev() {
            state = self.buffer_cell.step(tape, embeddings[i], &state);
            buffer_enc[i] = LstmCell::summary(&state);
        }
        let stack = StackRnn::new(&self.stack_cell, tape);
        EncoderRun {
            model: self,
            embeddings,
            buffer_enc,
            stack,
            reprs: Vec::with_capacity(n),
            state: initial_state(n).expect("sentence is non-empty"),
            n,
            train,
        }
    }

    /// Sum over steps of the chosen-action log-probabilities, as a tape node.
    pub fn sequence_log_prob_node<R: Rng>(
        &self,
        tape: &mut Tape,
        sentence: &Sentence,
        actions: &[Action],
        train: bool,
        rng: &mut R,
    ) -> Result<NodeId> {
        let mut run = self.start_run(tape, sentence, train, rng);
        let mut terms = Vec::with_capacity(actions.len());
        for (i, &a) in actions.iter().enumerate() {
            if run.is_terminal() {
                return Err(Error::Derivation {
                    step: i,
                    reason: "sequence continues past the terminal state".into(),
                });
            }
            let logp = run.action_log_probs(tape, rng)?;
            if !run.mask()[a.index()] {
                return Err(Error::Derivation {
                    step: i,
                    reason: format!("{} is not valid here", a.name()),
                });
            }
            terms.push(tape.pick(logp, a.index()));
            run.advance(tape, a, rng)?;
        }
        if !run.is_terminal() {
            return Err(Error::Derivation {
                step: actions.len(),
                reason: "sequence is incomplete".into(),
            });
        }
        Ok(tape.sum_scalars(&terms))
    }

    /// Log q(a|x) as a plain value (dropout off).
    pub fn sequence_log_prob(&self, sentence: &Sentence, actions: &[Action]) -> Result<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new(&self.store);
        let node = self.sequence_log_prob_node(&mut tape, sentence, actions, false, &mut rng)?;
        Ok(tape.scalar(node))
    }

    /// Ancestral sampling of one complete action sequence. Returns the
    /// actions and the log q node; its value matches what
    /// `sequence_log_prob_node` computes for the same actions and masks.
    pub fn sample_sequence_node<R: Rng>(
        &self,
        tape: &mut Tape,
        sentence: &Sentence,
        train: bool,
        rng: &mut R,
    ) -> Result<(Vec<Action>, NodeId)> {
        let mut run = self.start_run(tape, sentence, train, rng);
        let mut actions = Vec::with_capacity(2 * run.n - 1);
        let mut terms = Vec::with_capacity(2 * run.n - 1);
        while !run.is_terminal() {
            let logp = run.action_log_probs(tape, rng)?;
            let mask = run.mask();
            let probs: Vec<f64> = tape
                .value(logp)
                .iter()
                .zip(mask.iter())
                .map(|(lp, &m)| if m { lp.exp() } else { 0.0 })
                .collect();
            let u: f64 = rng.random();
            let mut cum = 0.0;
            let mut chosen = None;
            for a in Action::ALL {
                cum += probs[a.index()];
                if u < cum {
                    chosen = Some(a);
                    break;
                }
            }
            // Rounding can leave cum slightly below 1; fall back to the last
            // valid action in canonical order.
            let action = chosen.unwrap_or_else(|| {
                Action::ALL
                    .into_iter()
                    .rev()
                    .find(|a| mask[a.index()])
                    .expect("non-terminal state has a valid action")
            });
            terms.push(tape.pick(logp, action.index()));
            actions.push(action);
            run.advance(tape, action, rng)?;
        }
        let logq = tape.sum_scalars(&terms);
        Ok((actions, logq))
    }

    /// Draws M independent sequences with their log q values. Deterministic
    /// for a given rng state; dropout off.
    pub fn sample_sequences<R: Rng>(
        &self,
        sentence: &Sentence,
        m: usize,
        rng: &mut R,
    ) -> Result<Vec<(Vec<Action>, f64)>> {
        (0..m)
            .map(|_| {
                let mut tape = Tape::new(&self.store);
                let (actions, logq) = self.sample_sequence_node(&mut tape, sentence, false, rng)?;
                Ok((actions, tape.scalar(logq)))
            })
            .collect()
    }

    /// Greedy decoding: at every step take the most probable valid action,
    /// breaking ties in canonical order. Completes in exactly 2n-1 steps.
    pub fn greedy_parse(&self, sentence: &Sentence) -> Result<DepTree> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new(&self.store);
        let mut run = self.start_run(&mut tape, sentence, false, &mut rng);
        let mut actions = Vec::with_capacity(2 * run.n - 1);
        while !run.is_terminal() {
            let logp = run.action_log_probs(&mut tape, &mut rng)?;
            let mask = run.mask();
            let scores = tape.value(logp);
            let mut best = None;
            for a in Action::ALL {
                if !mask[a.index()] {
                    continue;
                }
                let s = scores[a.index()];
                if best.map_or(true, |(_, bs)| s > bs) {
                    best = Some((a, s));
                }
            }
            let (action, _) = best.expect("non-terminal state has a valid action");
            actions.push(action);
            run.advance(&mut tape, action, &mut rng)?;
        }
        actions_to_tree(sentence.len(), &actions)
    }
}

/// One in-flight encoder pass over a sentence.
pub struct EncoderRun<'m> {
    model: &'m EncoderModel,
    embeddings: Vec<NodeId>,
    buffer_enc: Vec<NodeId>,
    stack: StackRnn<'m>,
    /// Subtree representations parallel to the automaton stack.
    reprs: Vec<NodeId>,
    state: ParserState,
    n: usize,
    train: bool,
}

impl<'m> EncoderRun<'m> {
    pub fn is_terminal(&self) -> bool {
        self.state.is_terminal(self.n)
    }

    pub fn mask(&self) -> [bool; Action::COUNT] {
        valid_mask(&self.state, self.n)
    }

    pub fn state(&self) -> &ParserState {
        &self.state
    }

    /// Transitional state embedding v_t = [stack summary; buffer encoding].
    pub fn step_embedding<R: Rng>(&mut self, tape: &mut Tape, rng: &mut R) -> NodeId {
        let stack_summary = self.stack.summary();
        let buf = self.buffer_enc[self.state.buffer_pos()];
        let v = tape.concat2(stack_summary, buf);
        if self.train {
            tape.dropout(v, self.model.config.dropout, rng)
        } else {
            v
        }
    }

    /// Masked log-distribution over the three actions at the current state.
    pub fn action_log_probs<R: Rng>(&mut self, tape: &mut Tape, rng: &mut R) -> Result<NodeId> {
        if self.is_terminal() {
            return Err(Error::Contract("action distribution requested at terminal state".into()));
        }
        let v = self.step_embedding(tape, rng);
        let lin = tape.matvec(self.model.act_w, v);
        let logits = tape.add_param_vec(lin, self.model.act_b);
        tape.masked_log_softmax(logits, &self.mask())
    }

    /// Probability-space action distribution (spec-facing convenience).
    pub fn action_distribution<R: Rng>(&mut self, tape: &mut Tape, rng: &mut R) -> Result<Vec<f64>> {
        let logp = self.action_log_probs(tape, rng)?;
        Ok(tape
            .value(logp)
            .iter()
            .map(|lp| if *lp == f64::NEG_INFINITY { 0.0 } else { lp.exp() })
            .collect())
    }

    pub fn advance<R: Rng>(&mut self, tape: &mut Tape, action: Action, rng: &mut R) -> Result<()> {
        if !self.mask()[action.index()] {
            return Err(Error::Transition {
                action: action.name(),
                step: self.state.step(),
                reason: "action masked out",
            });
        }
        match action {
            Action::Shift => {
                let emb = self.embeddings[self.state.buffer_pos()];
                self.stack.push(tape, emb);
                self.reprs.push(emb);
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transition::enumerate_action_sequences;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            pos_dim: 5,
            word_dim: 4,
            encoder_hidden: 6,
            decoder_hidden: 6,
            dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    fn tags(n: usize) -> Sentence {
        Sentence::from_tags(&vec![0; n], 0).unwrap()
    }

    fn model(seed: u64) -> EncoderModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EncoderModel::new(&tiny_config(), 3, 1, 0, &mut rng).unwrap()
    }

    #[test]
    fn masks_force_probabilities() {
        let m = model(1);
        let s = tags(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new(&m.store);
        let mut run = m.start_run(&mut tape, &s, false, &mut rng);

        // |stack| < 2: probability 1 on SHIFT
        let p = run.action_distribution(&mut tape, &mut rng).unwrap();
        assert_eq!(p[Action::Shift.index()], 1.0);
        assert_eq!(p[Action::LeftReduce.index()], 0.0);

        run.advance(&mut tape, Action::Shift, &mut rng).unwrap();
        run.advance(&mut tape, Action::Shift, &mut rng).unwrap();
        run.advance(&mut tape, Action::Shift, &mut rng).unwrap();
        // buffer empty: SHIFT probability 0, both reduces positive
        let p = run.action_distribution(&mut tape, &mut rng).unwrap();
        assert_eq!(p[Action::Shift.index()], 0.0);
        assert!(p[Action::LeftReduce.index()] > 0.0);
        assert!(p[Action::RightReduce.index()] > 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn untrained_net_gives_full_support_mid_parse() {
        let m = model(2);
        let s = tags(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new(&m.store);
        let mut run = m.start_run(&mut tape, &s, false, &mut rng);
        run.advance(&mut tape, Action::Shift, &mut rng).unwrap();
        run.advance(&mut tape, Action::Shift, &mut rng).unwrap();
        // stack >= 2, buffer non-empty: all three actions possible
        let p = run.action_distribution(&mut tape, &mut rng).unwrap();
        assert!(p.iter().all(|&x| x > 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn terminal_state_rejects_distribution() {
        let m = model(3);
        let s = tags(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new(&m.store);
        let mut run = m.start_run(&mut tape, &s, false, &mut rng);
        run.advance(&mut tape, Action::Shift, &mut rng).unwrap();
        assert!(run.is_terminal());
        assert!(run.action_log_probs(&mut tape, &mut rng).is_err());
    }

    #[test]
    fn single_token_sequence_has_log_prob_zero() {
        let m = model(4);
        let s = tags(1);
        assert_eq!(m.sequence_log_prob(&s, &[Action::Shift]).unwrap(), 0.0);
    }

    #[test]
    fn normalization_over_enumerated_sequences() {
        // log-sum-exp over all complete sequences must be 0 for n = 2 and 3
        for (seed, n) in [(5u64, 2usize), (6, 3), (7, 4)] {
            let m = model(seed);
            let s = tags(n);
            let mut lse = f64::NEG_INFINITY;
            for seq in enumerate_action_sequences(n).unwrap() {
                let lp = m.sequence_log_prob(&s, &seq).unwrap();
                assert!(lp <= 0.0);
                lse = if lse == f64::NEG_INFINITY {
                    lp
                } else {
                    let hi = lse.max(lp);
                    hi + ((lse - hi).exp() + (lp - hi).exp()).ln()
                };
            }
            assert!(lse.abs() < 1e-10, "n={n}: total probability off by {lse:+e}");
        }
    }

    #[test]
    fn invalid_sequence_rejected() {
        let m = model(8);
        let s = tags(2);
        let err = m
            .sequence_log_prob(&s, &[Action::LeftReduce, Action::Shift, Action::Shift])
            .unwrap_err();
        assert!(matches!(err, Error::Derivation { step: 0, .. }));
        // incomplete
        let err = m.sequence_log_prob(&s, &[Action::Shift]).unwrap_err();
        assert!(matches!(err, Error::Derivation { step: 1, .. }));
    }

    #[test]
    fn sampling_is_deterministic_and_consistent_with_scoring() {
        let m = model(9);
        let s = tags(3);
        let mut rng1 = ChaCha8Rng::seed_from_u64(123);
        let samples1 = m.sample_sequences(&s, 5, &mut rng1).unwrap();
        let mut rng2 = ChaCha8Rng::seed_from_u64(123);
        let samples2 = m.sample_sequences(&s, 5, &mut rng2).unwrap();
        assert_eq!(samples1, samples2);
        for (actions, logq) in samples1 {
            let rescored = m.sequence_log_prob(&s, &actions).unwrap();
            assert_eq!(logq, rescored);
        }
    }

    #[test]
    fn single_token_sampling_returns_the_forced_sequence() {
        let m = model(10);
        let s = tags(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let samples = m.sample_sequences(&s, 3, &mut rng).unwrap();
        for (actions, logq) in samples {
            assert_eq!(actions, vec![Action::Shift]);
            assert_eq!(logq, 0.0);
        }
    }

    #[test]
    fn greedy_parse_examples() {
        let m = model(11);
        assert_eq!(m.greedy_parse(&tags(1)).unwrap().heads(), &[0]);
        // completes for a range of n and always yields a projective tree
        for n in 2..8 {
            let t = m.greedy_parse(&tags(n)).unwrap();
            assert_eq!(t.len(), n);
            assert!(t.is_projective());
        }
    }

    #[test]
    fn forced_left_reduce_yields_left_chain() {
        let mut m = model(12);
        // LEFT-REDUCE logit forced high wherever valid
        let act_b = m
            .store
            .vec_ids()
            .find(|&id| m.store.vec_name(id) == "enc.act.b")
            .unwrap();
        m.store.vec_mut(act_b)[Action::LeftReduce.index()] = 1e6;
        let t = m.greedy_parse(&tags(3)).unwrap();
        assert_eq!(t.heads(), &[2, 3, 0]);
    }
}
