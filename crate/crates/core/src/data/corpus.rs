//! Surface-level corpus representation shared by the loaders, the
//! evaluator, and the synthetic generator.

use crate::error::{Error, Result};
use crate::transition::{DepTree, Sentence};

use super::vocab::Vocab;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSentence {
    pub forms: Vec<String>,
    pub tags: Vec<String>,
    /// Gold heads when the source is annotated.
    pub gold: Option<DepTree>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub sentences: Vec<CorpusSentence>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(|s| s.forms.len()).sum()
    }

    pub fn gold_trees(&self) -> Result<Vec<&DepTree>> {
        self.sentences
            .iter()
            .map(|s| {
                s.gold
                    .as_ref()
                    .ok_or_else(|| Error::Config("corpus has no gold annotation".into()))
            })
            .collect()
    }

    pub fn encode(&self, vocab: &Vocab, lexicalized: bool) -> Result<Vec<Sentence>> {
        self.sentences
            .iter()
            .map(|s| vocab.encode(&s.forms, &s.tags, lexicalized))
            .collect()
    }

    /// Deterministic split by index stride, e.g. every k-th sentence to the
    /// held-out part.
    pub fn split_holdout(&self, every: usize) -> (Corpus, Corpus) {
        let mut train = Corpus::default();
        let mut held = Corpus::default();
        for (i, s) in self.sentences.iter().enumerate() {
            if every > 0 && (i + 1) % every == 0 {
                held.sentences.push(s.clone());
            } else {
                train.sentences.push(s.clone());
            }
        }
        (train, held)
    }
}
