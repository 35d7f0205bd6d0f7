//! Caption generation, caption metrics, the modality-offset baseline and
//! the noise-sweep harness.

mod decode;
mod metrics;
mod sweep;

pub use decode::{generate, DecodeConfig, Strategy};
pub use metrics::{
    compute_metrics, corpus_bleu, cider, rouge_l, MetricsReport, Sample, SampleScore, CIDER_MAX_N, METRIC_NAMES, ROUGE_BETA,
};
pub use sweep::{
    noise_sweep, read_sweep_csv, render_charts, write_sweep_csv, GridPointFailure, Method, SweepConfig, SweepContext, SweepInputs,
    SweepResult, SweepRow, DEFAULT_GRID,
};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::encode::{EncodeError, ImageEncoder, TextEncoder};
use crate::model::{CaptionModel, ModelError};
use crate::train::TrainError;
use crate::world::{attributes_of, Caption, Scene, TokenId, Vocabulary, BOS, EOS, PAD};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no references for: {}", .0.join(", "))]
    MissingReferences(Vec<String>),
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("empty embedding set")]
    EmptySet,
    #[error("reference caption for scene {0} is outside the grammar")]
    UnparseableReference(u64),
    #[error("invalid eval config: {0}")]
    InvalidConfig(String),
    #[error("chart rendering failed: {0}")]
    Chart(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Generates a caption for one embedding; errors if its dimension is not the model's.
pub fn caption_image(model: &CaptionModel, embedding: &[f32], cfg: &DecodeConfig) -> Result<Vec<TokenId>, EvalError> {
    let expected = model.config().d_embed;
    if embedding.len() != expected {
        return Err(EvalError::DimensionMismatch { expected, found: embedding.len() });
    }
    generate(model, embedding, cfg)
}

/// Decodes `image + offset`.
pub fn offset_corrected_caption(
    model: &CaptionModel,
    image: &[f32],
    offset: &[f32],
    cfg: &DecodeConfig,
) -> Result<Vec<TokenId>, EvalError> {
    if image.len() != offset.len() {
        return Err(EvalError::DimensionMismatch { expected: image.len(), found: offset.len() });
    }
    let shifted: Vec<f32> = image.iter().zip(offset).map(|(a, b)| a + b).collect();
    caption_image(model, &shifted, cfg)
}

fn mean(set: &[Vec<f32>]) -> Result<Vec<f64>, EvalError> {
    let d = set.first().ok_or(EvalError::EmptySet)?.len();
    let mut acc = vec![0.0f64; d];
    for v in set {
        if v.len() != d {
            return Err(EvalError::DimensionMismatch { expected: d, found: v.len() });
        }
        acc.iter_mut().zip(v).for_each(|(a, &x)| *a += x as f64);
    }
    Ok(acc.into_iter().map(|a| a / set.len() as f64).collect())
}

/// `mean(text) - mean(image)`; the two sets need not be paired.
pub fn compute_modality_offset(text: &[Vec<f32>], image: &[Vec<f32>]) -> Result<Vec<f32>, EvalError> {
    let t = mean(text)?;
    let i = mean(image)?;
    if t.len() != i.len() {
        return Err(EvalError::DimensionMismatch { expected: t.len(), found: i.len() });
    }
    Ok(t.iter().zip(&i).map(|(a, b)| (a - b) as f32).collect())
}

/// Words of a token sequence with bos, eos and padding removed.
pub fn content_words(tokens: &[TokenId], vocab: &Vocabulary) -> Vec<String> {
    tokens
        .iter()
        .filter(|&&t| t != BOS && t != EOS && t != PAD)
        .map(|&t| vocab.word(t).unwrap_or("<unk>").to_string())
        .collect()
}

/// References per scene id, from every caption of that scene in `captions`.
pub fn references_by_scene<'a>(captions: impl IntoIterator<Item = &'a Caption>, vocab: &Vocabulary) -> BTreeMap<u64, Vec<Vec<String>>> {
    let mut m: BTreeMap<u64, Vec<Vec<String>>> = BTreeMap::new();
    for c in captions {
        m.entry(c.scene_id).or_default().push(content_words(&c.tokens, vocab));
    }
    m
}

/// Captions every scene from its image embedding (optionally shifted by
/// `offset`) and scores against that scene's references.
pub fn image_captioning_eval(
    model: &CaptionModel,
    scenes: &[&Scene],
    references: &BTreeMap<u64, Vec<Vec<String>>>,
    encoder: &ImageEncoder,
    offset: Option<&[f32]>,
    cfg: &DecodeConfig,
) -> Result<MetricsReport, EvalError> {
    let vocab = encoder.text_encoder().vocab();
    let mut samples = Vec::with_capacity(scenes.len());
    for scene in scenes {
        let image = encoder.encode_image(scene)?;
        let tokens = match offset {
            Some(o) => offset_corrected_caption(model, &image.values, o, cfg)?,
            None => caption_image(model, &image.values, cfg)?,
        };
        samples.push(Sample {
            id: scene.scene_id.to_string(),
            candidate: content_words(&tokens, vocab),
            references: references.get(&scene.scene_id).cloned().unwrap_or_default(),
            truth: scene.attributes(),
        });
    }
    compute_metrics(&samples, &model.config().fingerprint())
}

/// Decodes each caption's clean text embedding and scores it against that caption.
pub fn text_reconstruction_eval(
    model: &CaptionModel,
    captions: &[&Caption],
    encoder: &TextEncoder,
    cfg: &DecodeConfig,
) -> Result<MetricsReport, EvalError> {
    let vocab = encoder.vocab();
    let mut samples = Vec::with_capacity(captions.len());
    for (i, c) in captions.iter().enumerate() {
        let truth = attributes_of(c, vocab).attributes().cloned().ok_or(EvalError::UnparseableReference(c.scene_id))?;
        let emb = encoder.encode_text(c)?;
        let tokens = caption_image(model, &emb.values, cfg)?;
        samples.push(Sample {
            id: format!("{}:{i}", c.scene_id),
            candidate: content_words(&tokens, vocab),
            references: vec![content_words(&c.tokens, vocab)],
            truth,
        });
    }
    compute_metrics(&samples, &model.config().fingerprint())
}
