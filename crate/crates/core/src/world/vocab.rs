use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::grammar;
use super::WorldError;

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
const RESERVED: [&str; 3] = ["<pad>", "<bos>", "<eos>"];

/// Word-level vocabulary over the closed grammar lexicon.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary::from_grammar()
    }
}

/// Lowercases and collapses whitespace.
pub fn normalize(text: &str) -> String {
    text.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

impl Vocabulary {
    pub fn from_grammar() -> Self {
        Vocabulary::from_words(grammar::lexicon().into_iter().map(String::from))
    }

    pub fn from_words(words: impl IntoIterator<Item = String>) -> Self {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        for w in words {
            if !all.contains(&w) {
                all.push(w);
            }
        }
        let ids = all.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary { words: all, ids }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.ids.get(word).copied().filter(|&i| i >= RESERVED.len())
    }

    pub fn word(&self, id: TokenId) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    /// `[bos, words..., eos]`; unknown words are rejected by name.
    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, WorldError> {
        let norm = normalize(text);
        let mut out = vec![BOS];
        for w in norm.split(' ').filter(|w| !w.is_empty()) {
            out.push(self.id(w).ok_or_else(|| WorldError::UnknownWord(w.to_string()))?);
        }
        out.push(EOS);
        Ok(out)
    }

    /// Joins the words of `ids`, skipping reserved tokens and stopping at eos.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        self.words_of(ids).join(" ")
    }

    pub fn words_of<'a>(&'a self, ids: &[TokenId]) -> Vec<&'a str> {
        ids.iter()
            .skip_while(|&&i| i == BOS)
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i >= RESERVED.len())
            .filter_map(|&i| self.word(i))
            .collect()
    }

    /// Stable fingerprint of the id assignment.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.words {
            h.update(w.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}
