use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Embedding, EncodeError};
use crate::seeds;
use crate::world::grammar::{is_shape_word, word_meaning};
use crate::world::{Caption, TokenId, Vocabulary, BOS, EOS, PAD};

/// Number of object slots a word can be attributed to (0..=3).
pub const SLOTS: usize = 4;

/// Weights of the frozen synthetic text encoder.
///
/// Each word contributes `w * (lexeme + slot_weight * salt[slot] + surface_weight * surface)`:
/// `lexeme` is shared by synonyms, `salt[slot]` is keyed on the word's
/// meaning and the object slot it belongs to (how many shape nouns precede
/// it), and `surface` is specific to the exact word form. `w` is
/// `content_weight` for attribute-bearing words and `function_weight` otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextEncoderConfig {
    pub d: usize,
    pub seed: u64,
    pub content_weight: f32,
    pub function_weight: f32,
    pub slot_weight: f32,
    pub surface_weight: f32,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        TextEncoderConfig {
            d: 64,
            seed: 1234,
            content_weight: 1.0,
            function_weight: 0.35,
            slot_weight: 1.0,
            surface_weight: 0.25,
        }
    }
}

fn gaussian(seed: u64, purpose: &str, d: usize) -> Vec<f32> {
    let mut rng = seeds::stream(seed, purpose, 0);
    let s = 1.0 / (d as f32).sqrt();
    (0..d).map(|_| rng.sample::<f32, _>(StandardNormal) * s).collect()
}

/// Deterministic bag-of-lexemes projection with slot salt; no trainable state.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    config: TextEncoderConfig,
    vocab: Vocabulary,
    /// `[token][slot] -> contribution`, precomputed.
    table: Vec<Vec<Vec<f32>>>,
    shape_token: Vec<bool>,
}

impl TextEncoder {
    pub fn new(config: TextEncoderConfig, vocab: &Vocabulary) -> Result<Self, EncodeError> {
        if config.d == 0 {
            return Err(EncodeError::InvalidConfig("d must be positive".into()));
        }
        let d = config.d;
        let mut table = Vec::with_capacity(vocab.len());
        let mut shape_token = Vec::with_capacity(vocab.len());
        for id in 0..vocab.len() {
            let word = vocab.word(id).unwrap_or("");
            if vocab.id(word).is_none() {
                table.push(vec![vec![0.0; d]; SLOTS]);
                shape_token.push(false);
                continue;
            }
            let meaning = word_meaning(word);
            let w = if meaning.content { config.content_weight } else { config.function_weight };
            let lexeme = gaussian(config.seed, &format!("lexeme:{}", meaning.key), d);
            let surface = gaussian(config.seed, &format!("surface:{word}"), d);
            let per_slot = (0..SLOTS)
                .map(|slot| {
                    let salt = gaussian(config.seed, &format!("salt:{slot}:{}", meaning.key), d);
                    (0..d)
                        .map(|j| w * (lexeme[j] + config.slot_weight * salt[j] + config.surface_weight * surface[j]))
                        .collect()
                })
                .collect();
            table.push(per_slot);
            shape_token.push(is_shape_word(word));
        }
        Ok(TextEncoder { config, vocab: vocab.clone(), table, shape_token })
    }

    pub fn config(&self) -> &TextEncoderConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.d
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn encode_tokens(&self, tokens: &[TokenId]) -> Result<Embedding, EncodeError> {
        let d = self.config.d;
        let mut acc = vec![0.0f64; d];
        let mut slot = 0usize;
        for &t in tokens {
            if t == BOS || t == EOS || t == PAD {
                continue;
            }
            let per_slot = self.table.get(t).ok_or(EncodeError::TokenOutOfRange(t))?;
            let contrib = &per_slot[slot.min(SLOTS - 1)];
            acc.iter_mut().zip(contrib).for_each(|(a, &c)| *a += c as f64);
            if self.shape_token[t] {
                slot += 1;
            }
        }
        Ok(Embedding::normalized_from_f64(&acc))
    }

    pub fn encode_text(&self, caption: &Caption) -> Result<Embedding, EncodeError> {
        self.encode_tokens(&caption.tokens)
    }

    pub fn encode_str(&self, text: &str) -> Result<Embedding, EncodeError> {
        let tokens = self.vocab.tokenize(text)?;
        self.encode_tokens(&tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enc() -> TextEncoder {
        TextEncoder::new(TextEncoderConfig::default(), &Vocabulary::from_grammar()).unwrap()
    }

    #[test]
    fn deterministic_and_unit_norm() {
        let e = enc();
        let a = e.encode_str("a big red circle above a small blue square").unwrap();
        let b = e.encode_str("a big red circle above a small blue square").unwrap();
        assert_eq!(a, b);
        assert!((a.l2_norm() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn binding_is_encoded() {
        let e = enc();
        let a = e.encode_str("a big red circle above a small blue square").unwrap();
        let b = e.encode_str("a big blue circle above a small red square").unwrap();
        assert!(a.cosine(&b) < 0.9);
    }

    #[test]
    fn independent_encoders_agree() {
        assert_eq!(enc().encode_str("we see a tiny green star").unwrap(), enc().encode_str("we see a tiny green star").unwrap());
    }
}
