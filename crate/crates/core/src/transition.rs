//! Arc-standard transition system for projective dependency trees.
//!
//! The automaton operates on a stack of token indices and a buffer cursor.
//! SHIFT moves the next buffer token onto the stack; LEFT-REDUCE and
//! RIGHT-REDUCE pop the top two stack items and add an arc between them.
//! A complete derivation for an n-token sentence has exactly n shifts and
//! n-1 reduces; the surviving stack item is attached to the artificial
//! root (head index 0).

use crate::error::{Error, Result};

/// A token as indices into the word and POS vocabularies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub word: usize,
    pub pos: usize,
}

/// A non-empty sentence of vocabulary-indexed tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(tokens: Vec<Token>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidInput("sentence must contain at least one token".into()));
        }
        Ok(Sentence { tokens })
    }

    /// Unlexicalized construction: every word id is the reserved placeholder.
    pub fn from_tags(tags: &[usize], placeholder_word: usize) -> Result<Self> {
        Sentence::new(
            tags.iter()
                .map(|&pos| Token { word: placeholder_word, pos })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn token(&self, i: usize) -> Token {
        self.tokens[i]
    }
}

/// Transition action. `Shift` doubles as the decoder's GEN step, which
/// consumes the next observed token under teacher forcing.
///
/// The derived `Ord` is the canonical tie-breaking order:
/// SHIFT/GEN < LEFT-REDUCE < RIGHT-REDUCE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    Shift,
    LeftReduce,
    RightReduce,
}

impl Action {
    pub const COUNT: usize = 3;
    pub const ALL: [Action; 3] = [Action::Shift, Action::LeftReduce, Action::RightReduce];

    pub fn index(self) -> usize {
        match self {
            Action::Shift => 0,
            Action::LeftReduce => 1,
            Action::RightReduce => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Shift => "SHIFT",
            Action::LeftReduce => "LEFT-REDUCE",
            Action::RightReduce => "RIGHT-REDUCE",
        }
    }
}

/// Stack/buffer configuration of the arc-standard automaton plus the
/// partial arc set. Token indices are 0-based internally.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParserState {
    stack: Vec<usize>,
    buffer_pos: usize,
    heads: Vec<Option<usize>>,
    step: usize,
}

impl ParserState {
    pub fn stack(&self) -> &[usize] {
        &self.stack
    }

    pub fn buffer_pos(&self) -> usize {
        self.buffer_pos
    }

    /// Partial arc set: `heads()[d]` is the 0-based head of dependent `d`.
    pub fn heads(&self) -> &[Option<usize>] {
        &self.heads
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn is_terminal(&self, n: usize) -> bool {
        self.buffer_pos == n && self.stack.len() == 1
    }
}

/// Empty stack, buffer at the first token, no arcs.
pub fn initial_state(n: usize) -> Result<ParserState> {
    if n == 0 {
        return Err(Error::InvalidInput("cannot initialize parser state for n = 0".into()));
    }
    Ok(ParserState {
        stack: Vec::with_capacity(n),
        buffer_pos: 0,
        heads: vec![None; n],
        step: 0,
    })
}

/// Validity mask indexed by `Action::index()`.
pub fn valid_mask(state: &ParserState, n: usize) -> [bool; Action::COUNT] {
    let can_shift = state.buffer_pos < n;
    let can_reduce = state.stack.len() >= 2;
    [can_shift, can_reduce, can_reduce]
}

/// Valid actions in canonical order. Empty iff the state is terminal.
pub fn valid_actions(state: &ParserState, n: usize) -> Vec<Action> {
    let mask = valid_mask(state, n);
    Action::ALL
        .iter()
        .copied()
        .filter(|a| mask[a.index()])
        .collect()
}

/// In-place transition. Errors name the violated mask.
pub fn apply_action_mut(state: &mut ParserState, action: Action) -> Result<()> {
    let n = state.heads.len();
    match action {
        Action::Shift => {
            if state.buffer_pos >= n {
                return Err(Error::Transition {
                    action: action.name(),
                    step: state.step,
                    reason: "buffer is empty",
                });
            }
            state.stack.push(state.buffer_pos);
            state.buffer_pos += 1;
        }
        Action::LeftReduce | Action::RightReduce => {
            if state.stack.len() < 2 {
                return Err(Error::Transition {
                    action: action.name(),
                    step: state.step,
                    reason: "stack holds fewer than two items",
                });
            }
            let s0 = state.stack.pop().expect("stack len checked");
            let s1 = state.stack.pop().expect("stack len checked");
            if action == Action::LeftReduce {
                // Left arc: s0 heads s1.
                state.heads[s1] = Some(s0);
                state.stack.push(s0);
            } else {
                // Right arc: s1 heads s0.
                state.heads[s0] = Some(s1);
                state.stack.push(s1);
            }
        }
    }
    state.step += 1;
    Ok(())
}

/// Pure transition: returns the successor state.
pub fn apply_action(state: &ParserState, action: Action) -> Result<ParserState> {
    let mut next = state.clone();
    apply_action_mut(&mut next, action)?;
    Ok(next)
}

/// Dependency tree as a head array. `heads[i]` is the 1-based head of
/// token `i` (0-based position); 0 denotes the artificial root. Exactly
/// one token is attached to the root, and the structure is acyclic.
/// Projectivity is *not* required here: gold treebank trees may be
/// non-projective, and [`tree_to_actions`] rejects those explicitly.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DepTree {
    heads: Vec<usize>,
}

impl DepTree {
    pub fn new(heads: Vec<usize>) -> Result<Self> {
        let n = heads.len();
        if n == 0 {
            return Err(Error::InvalidInput("tree must have at least one node".into()));
        }
        let mut roots = 0;
        for (i, &h) in heads.iter().enumerate() {
            if h > n {
                return Err(Error::InvalidInput(format!(
                    "head {h} of token {} out of range 0..={n}",
                    i + 1
                )));
            }
            if h == i + 1 {
                return Err(Error::InvalidInput(format!("token {} is its own head", i + 1)));
            }
            if h == 0 {
                roots += 1;
            }
        }
        if roots != 1 {
            return Err(Error::InvalidInput(format!("expected exactly one root, found {roots}")));
        }
        // Acyclicity: every node must reach the root in at most n hops.
        for start in 0..n {
            let mut cur = heads[start];
            let mut hops = 0;
            while cur != 0 {
                cur = heads[cur - 1];
                hops += 1;
                if hops > n {
                    return Err(Error::InvalidInput(format!(
                        "cycle detected through token {}",
                        start + 1
                    )));
                }
            }
        }
        Ok(DepTree { heads })
    }

    pub fn heads(&self) -> &[usize] {
        &self.heads
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// First pair of crossing arcs, as 1-based (head, dependent) pairs.
    /// The artificial root participates at position 0, so an arc covering
    /// the root-attached token is reported as crossing the root arc.
    pub fn find_crossing(&self) -> Option<((usize, usize), (usize, usize))> {
        let arcs: Vec<(usize, usize)> = self
            .heads
            .iter()
            .enumerate()
            .map(|(d, &h)| (h, d + 1))
            .collect();
        for (i, &(h1, d1)) in arcs.iter().enumerate() {
            let (lo1, hi1) = (h1.min(d1), h1.max(d1));
            for &(h2, d2) in &arcs[i + 1..] {
                let (lo2, hi2) = (h2.min(d2), h2.max(d2));
                let crossing = (lo1 < lo2 && lo2 < hi1 && hi1 < hi2)
                    || (lo2 < lo1 && lo1 < hi2 && hi2 < hi1);
                if crossing {
                    return Some(((h1, d1), (h2, d2)));
                }
            }
        }
        None
    }

    pub fn is_projective(&self) -> bool {
        self.find_crossing().is_none()
    }
}

/// Replays a complete action sequence and builds the head array, attaching
/// the surviving stack element to the artificial root.
pub fn actions_to_tree(n: usize, actions: &[Action]) -> Result<DepTree> {
    let mut state = initial_state(n)?;
    for (i, &a) in actions.iter().enumerate() {
        if !valid_mask(&state, n)[a.index()] {
            return Err(Error::Derivation {
                step: i,
                reason: format!("{} is not valid here", a.name()),
            });
        }
        apply_action_mut(&mut state, a)?;
    }
    if !state.is_terminal(n) {
        return Err(Error::Derivation {
            step: actions.len(),
            reason: format!(
                "sequence incomplete: buffer at {}/{}, stack depth {}",
                state.buffer_pos,
                n,
                state.stack.len()
            ),
        });
    }
    let root = state.stack[0];
    let heads = state
        .heads
        .iter()
        .enumerate()
        .map(|(i, h)| match h {
            Some(h) => h + 1,
            None => {
                debug_assert_eq!(i, root);
                0
            }
        })
        .collect();
    DepTree::new(heads)
}

/// Canonical derivation oracle: attaches eagerly, so each head collects its
/// left children before its right children, innermost first. Inverse of
/// [`actions_to_tree`] on projective trees.
pub fn tree_to_actions(tree: &DepTree) -> Result<Vec<Action>> {
    if let Some((a, b)) = tree.find_crossing() {
        return Err(Error::NonProjective { a, b });
    }
    let n = tree.len();
    let heads = tree.heads();
    // remaining[h] = unattached dependents of 1-based node h (0 = root).
    let mut remaining = vec![0usize; n + 1];
    for &h in heads {
        remaining[h] += 1;
    }
    let mut stack: Vec<usize> = Vec::with_capacity(n); // 1-based token ids
    let mut actions = Vec::with_capacity(2 * n - 1);
    let mut next = 1usize;
    loop {
        let depth = stack.len();
        if depth >= 2 {
            let s0 = stack[depth - 1];
            let s1 = stack[depth - 2];
            if heads[s1 - 1] == s0 && remaining[s1] == 0 {
                actions.push(Action::LeftReduce);
                stack.remove(depth - 2);
                remaining[s0] -= 1;
                continue;
            }
            if heads[s0 - 1] == s1 && remaining[s0] == 0 {
                actions.push(Action::RightReduce);
                stack.pop();
                remaining[s1] -= 1;
                continue;
            }
        }
        if next <= n {
            actions.push(Action::Shift);
            stack.push(next);
            next += 1;
            continue;
        }
        break;
    }
    if stack.len() == 1 && heads[stack[0] - 1] == 0 {
        Ok(actions)
    } else {
        // Unreachable for projective input; the crossing check above fires first.
        Err(Error::Derivation {
            step: actions.len(),
            reason: "oracle stuck; tree is not derivable".into(),
        })
    }
}

/// Largest sentence length accepted by [`enumerate_action_sequences`].
pub const ENUM_MAX_N: usize = 8;

/// All complete valid action sequences for an n-token sentence. There are
/// Catalan(n-1) * 2^(n-1) of them, which stays tractable up to n = 8.
pub fn enumerate_action_sequences(n: usize) -> Result<Vec<Vec<Action>>> {
    if n == 0 || n > ENUM_MAX_N {
        return Err(Error::EnumerationGuard { n, max: ENUM_MAX_N });
    }
    let mut out = Vec::new();
    let state = initial_state(n)?;
    let mut prefix = Vec::with_capacity(2 * n - 1);
    enumerate_rec(&state, n, &mut prefix, &mut out);
    Ok(out)
}

fn enumerate_rec(
    state: &ParserState,
    n: usize,
    prefix: &mut Vec<Action>,
    out: &mut Vec<Vec<Action>>,
) {
    if state.is_terminal(n) {
        out.push(prefix.clone());
        return;
    }
    for action in valid_actions(state, n) {
        let next = apply_action(state, action).expect("action from valid set");
        prefix.push(action);
        enumerate_rec(&next, n, prefix, out);
        prefix.pop();
    }
}
