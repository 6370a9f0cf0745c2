//! Word and POS vocabularies with frequency-based UNK mapping.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transition::{Sentence, Token};

use super::corpus::Corpus;

/// Reserved word index for unknown / rare words.
pub const UNK_WORD: usize = 0;
/// Reserved word index used in unlexicalized mode, where the model never
/// looks at word identities.
pub const PLACEHOLDER_WORD: usize = 1;

pub const UNK_WORD_FORM: &str = "<unk>";
pub const PLACEHOLDER_FORM: &str = "<none>";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    pos: Vec<String>,
    word_counts: Vec<usize>,
    #[serde(skip)]
    word_index: HashMap<String, usize>,
    #[serde(skip)]
    pos_index: HashMap<String, usize>,
}

impl Vocab {
    /// Words seen fewer than `min_count` times map to UNK; POS tags are
    /// never UNKed.
    pub fn build(corpus: &Corpus, min_count: usize) -> Self {
        let mut word_freq: HashMap<&str, usize> = HashMap::new();
        let mut pos_seen: Vec<&str> = Vec::new();
        for s in &corpus.sentences {
            for form in &s.forms {
                *word_freq.entry(form.as_str()).or_insert(0) += 1;
            }
            for tag in &s.tags {
                if !pos_seen.contains(&tag.as_str()) {
                    pos_seen.push(tag.as_str());
                }
            }
        }
        let mut words = vec![UNK_WORD_FORM.to_string(), PLACEHOLDER_FORM.to_string()];
        let mut word_counts = vec![0usize, 0];
        // deterministic order: first occurrence in the corpus
        let mut added: HashMap<&str, usize> = HashMap::new();
        for s in &corpus.sentences {
            for form in &s.forms {
                let count = word_freq[form.as_str()];
                if count >= min_count && !added.contains_key(form.as_str()) {
                    added.insert(form.as_str(), words.len());
                    words.push(form.clone());
                    word_counts.push(count);
                }
            }
        }
        let unk_total: usize = word_freq
            .iter()
            .filter(|(_, &c)| c < min_count)
            .map(|(_, &c)| c)
            .sum();
        word_counts[UNK_WORD] = unk_total;
        let pos: Vec<String> = pos_seen.into_iter().map(str::to_string).collect();
        let mut v = Vocab { words, pos, word_counts, word_index: HashMap::new(), pos_index: HashMap::new() };
        v.rebuild_indices();
        v
    }

    /// Restores the lookup tables after deserialization.
    pub fn rebuild_indices(&mut self) {
        self.word_index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        self.pos_index = self.pos.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn num_pos(&self) -> usize {
        self.pos.len()
    }

    pub fn word_id(&self, form: &str) -> usize {
        self.word_index.get(form).copied().unwrap_or(UNK_WORD)
    }

    pub fn known_word_id(&self, form: &str) -> Option<usize> {
        self.word_index.get(form).copied()
    }

    pub fn pos_id(&self, tag: &str) -> Option<usize> {
        self.pos_index.get(tag).copied()
    }

    pub fn pos_name(&self, id: usize) -> &str {
        &self.pos[id]
    }

    pub fn word_form(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn pos_names(&self) -> &[String] {
        &self.pos
    }

    pub fn word_count(&self, id: usize) -> usize {
        self.word_counts[id]
    }

    /// Maps a surface sentence to vocabulary ids. Unknown words become UNK
    /// (or the placeholder when `lexicalized` is off); unknown POS tags are
    /// an error naming the missing symbol.
    pub fn encode(&self, forms: &[String], tags: &[String], lexicalized: bool) -> Result<Sentence> {
        let tokens = forms
            .iter()
            .zip(tags)
            .map(|(form, tag)| {
                let pos = self.pos_id(tag).ok_or_else(|| {
                    Error::Vocab(format!("POS tag `{tag}` not present in the model vocabulary"))
                })?;
                let word = if lexicalized { self.word_id(form) } else { PLACEHOLDER_WORD };
                Ok(Token { word, pos })
            })
            .collect::<Result<Vec<_>>>()?;
        Sentence::new(tokens)
    }
}
