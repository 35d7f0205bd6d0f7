//! Synthetic ground-truth world: scenes, a paraphrasing caption grammar with
//! style variants, a closed word-level tokenizer, and corpus persistence.

pub mod corpus;
pub mod grammar;
pub mod scene;
pub mod vocab;

pub use corpus::{generate_corpus, read_corpus, read_scenes, write_corpus, write_scenes, Caption, Corpus, CorpusSpec, SceneRecord, Split};
pub use grammar::{marker_style, parse_caption, Parsed};
pub use scene::{chance_attribute_rate, AttributeItem, Attributes, Color, Relation, Scene, SceneObject, Shape, Size, Style};
pub use vocab::{normalize, TokenId, Vocabulary, BOS, EOS, PAD};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("out-of-vocabulary word `{0}`")]
    UnknownWord(String),
    #[error("scene {scene_id}: {requested} captions requested but the grammar only has {capacity}")]
    CapacityExceeded { scene_id: u64, requested: usize, capacity: u64 },
    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Attributes a caption asserts, or `Unparseable` for text outside the grammar.
pub fn attributes_of(caption: &Caption, vocab: &Vocabulary) -> Parsed {
    parse_caption(&vocab.words_of(&caption.tokens))
}
