//! Noise-injected text-only training and the paired supervised baseline,
//! which share one optimization loop.

mod noise;

pub use noise::{epsilon_from_embeddings, estimate_epsilon, inject_noise, NoiseConfig, NoiseSource};

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{adamw_step, clip_grad_norm, AdamWConfig, AutodiffError, OptimizerState, Tape};
use crate::encode::{EncodeError, ImageEncoder, TextEncoder};
use crate::model::{BatchInput, CaptionModel, ModelError};
use crate::seeds;
use crate::world::{Caption, Scene, TokenId, PAD};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("caption group {group} has {size} captions; at least 2 are needed")]
    GroupTooSmall { group: usize, size: usize },
    #[error("no training examples")]
    EmptyTrainingSet,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("scene {0} has no embedding")]
    MissingScene(u64),
    #[error("training diverged at step {step} (loss {loss}); last finite model retained")]
    Diverged { step: u64, loss: f32, last_good: Box<CaptionModel> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        TrainError::Model(ModelError::Autodiff(e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f32,
    pub warmup_steps: u64,
    pub weight_decay: f32,
    pub seed: u64,
    /// Validation checks without improvement before stopping; 0 disables early stopping.
    pub patience: usize,
    pub val_every: u64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f32,
    /// Skips noise entirely, regardless of epsilon.
    pub disable_noise: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 3000,
            batch_size: 32,
            lr: 2e-3,
            warmup_steps: 100,
            weight_decay: 0.01,
            seed: 0,
            patience: 0,
            val_every: 250,
            clip_norm: 1.0,
            disable_noise: false,
        }
    }
}

impl TrainConfig {
    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig { lr: self.lr, warmup_steps: self.warmup_steps, weight_decay: self.weight_decay, ..Default::default() }
    }

    fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.val_every == 0 {
            return Err(TrainError::InvalidConfig("batch_size and val_every must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0 && self.weight_decay >= 0.0 && self.clip_norm >= 0.0) {
            return Err(TrainError::InvalidConfig("lr, weight_decay and clip_norm must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// One conditioning vector and the caption it should decode to.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub embedding: Vec<f32>,
    pub tokens: Vec<TokenId>,
}

/// Text-only examples: each caption conditions on its own clean text embedding.
pub fn text_examples<'a>(
    captions: impl IntoIterator<Item = &'a Caption>,
    encoder: &TextEncoder,
) -> Result<Vec<Example>, TrainError> {
    captions
        .into_iter()
        .map(|c| Ok(Example { embedding: encoder.encode_text(c)?.values, tokens: c.tokens.clone() }))
        .collect()
}

/// Paired examples: each caption conditions on its scene's image embedding.
pub fn paired_examples<'a>(
    captions: impl IntoIterator<Item = &'a Caption>,
    scenes: &[Scene],
    encoder: &ImageEncoder,
) -> Result<Vec<Example>, TrainError> {
    let mut cache = std::collections::HashMap::new();
    let mut out = Vec::new();
    for c in captions {
        if !cache.contains_key(&c.scene_id) {
            let scene = scenes.iter().find(|s| s.scene_id == c.scene_id).ok_or(TrainError::MissingScene(c.scene_id))?;
            cache.insert(c.scene_id, encoder.encode_image(scene)?.values);
        }
        out.push(Example { embedding: cache[&c.scene_id].clone(), tokens: c.tokens.clone() });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub loss: f32,
    pub val_loss: Option<f32>,
    pub lr: f32,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f32> {
        self.rows.iter().map(|r| r.loss).collect()
    }

    /// Writes `step,loss,val_loss,lr`; wall time is left out so the file is
    /// a pure function of the run's inputs.
    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "step,loss,val_loss,lr")?;
        for r in &self.rows {
            let val = r.val_loss.map(|v| format!("{v:.6}")).unwrap_or_default();
            writeln!(w, "{},{:.6},{},{:e}", r.step, r.loss, val, r.lr)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub struct TrainOutcome {
    /// Parameters with the lowest validation loss (the final ones if no validation ran).
    pub model: CaptionModel,
    pub optimizer: OptimizerState,
    pub log: TrainLog,
    pub best_val_loss: Option<f32>,
    pub steps_run: u64,
    pub epsilon: f32,
}

/// Where an optimization run starts.
pub enum Start {
    Fresh(CaptionModel),
    /// Continues a run; the step counter inside the optimizer state selects
    /// the next batch and noise draw, so resumption replays the same sequence.
    Resume(CaptionModel, OptimizerState),
}

/// Token-weighted mean cross-entropy over `examples`, with noise drawn from
/// the stream identified by `(seed, noise_index)`.
pub fn mean_loss(
    model: &CaptionModel,
    examples: &[Example],
    epsilon: f32,
    seed: u64,
    noise_index: u64,
    batch_size: usize,
) -> Result<f32, TrainError> {
    let mut rng = seeds::stream(seed, "val-noise", noise_index);
    let mut total = 0.0f64;
    let mut count = 0usize;
    for chunk in examples.chunks(batch_size.max(1)) {
        let mut emb = Vec::with_capacity(chunk.len() * model.config().d_embed);
        for e in chunk {
            let start = emb.len();
            emb.extend_from_slice(&e.embedding);
            noise::add_noise_in_place(&mut emb[start..], epsilon, &mut rng);
        }
        let seqs: Vec<Vec<TokenId>> = chunk.iter().map(|e| e.tokens.clone()).collect();
        let mut tape = Tape::new();
        let (loss, out) = model.batch_loss(&mut tape, &BatchInput { embeddings: &emb, sequences: &seqs })?;
        let n = out.targets.iter().filter(|&&t| t != PAD).count();
        total += tape.value(loss).data()[0] as f64 * n as f64;
        count += n;
    }
    if count == 0 {
        return Err(TrainError::EmptyTrainingSet);
    }
    Ok((total / count as f64) as f32)
}

/// Minimizes teacher-forced cross-entropy of `train` captions decoded from
/// their conditioning embeddings plus fresh Gaussian noise of std `epsilon`.
pub fn optimize(
    start: Start,
    train: &[Example],
    val: &[Example],
    epsilon: f32,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(TrainError::InvalidConfig(format!("epsilon {epsilon} must be finite and non-negative")));
    }
    let eps = if cfg.disable_noise { 0.0 } else { epsilon };
    let (mut model, mut opt) = match start {
        Start::Fresh(m) => {
            let opt = OptimizerState::new(cfg.optimizer(), &m.params.tensors);
            (m, opt)
        }
        Start::Resume(m, opt) => (m, opt),
    };
    let d = model.config().d_embed;
    if let Some(e) = train.iter().chain(val).find(|e| e.embedding.len() != d) {
        return Err(ModelError::EmbeddingDim { expected: d, found: e.embedding.len() }.into());
    }
    let batch = cfg.batch_size.min(train.len());
    let clock = Instant::now();
    let mut log = TrainLog::default();
    let mut best: Option<(f32, CaptionModel)> = None;
    let mut stale = 0usize;
    let first = opt.step;

    while opt.step < cfg.steps {
        let step = opt.step;
        let mut order = seeds::stream(cfg.seed, "order", step);
        let picks = index::sample(&mut order, train.len(), batch);
        let mut noise_rng = seeds::stream(cfg.seed, "noise", step);
        let mut emb = Vec::with_capacity(batch * d);
        let mut seqs = Vec::with_capacity(batch);
        for i in picks.iter() {
            let start = emb.len();
            emb.extend_from_slice(&train[i].embedding);
            noise::add_noise_in_place(&mut emb[start..], eps, &mut noise_rng);
            seqs.push(train[i].tokens.clone());
        }
        let mut tape = Tape::new();
        let (loss, out) = model.batch_loss(&mut tape, &BatchInput { embeddings: &emb, sequences: &seqs })?;
        let loss_value = tape.value(loss).data()[0];
        if !loss_value.is_finite() {
            return Err(TrainError::Diverged { step: step + 1, loss: loss_value, last_good: Box::new(model) });
        }
        tape.backward(loss)?;
        let mut grads: Vec<Vec<f32>> = out
            .params
            .iter()
            .zip(&model.params.tensors)
            .map(|(&v, t)| tape.grad(v).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect();
        drop(tape);
        if cfg.clip_norm > 0.0 {
            clip_grad_norm(&mut grads, cfg.clip_norm);
        }
        let snapshot = model.params.tensors.clone();
        let lr = match adamw_step(&mut model.params.tensors, &model.params.names, &grads, &mut opt) {
            Ok(lr) => lr,
            Err(AutodiffError::NonFiniteGradient { .. }) => {
                model.params.tensors = snapshot;
                return Err(TrainError::Diverged { step: step + 1, loss: loss_value, last_good: Box::new(model) });
            }
            Err(e) => return Err(e.into()),
        };
        if model.params.tensors.iter().any(|t| !t.is_finite()) {
            model.params.tensors = snapshot;
            return Err(TrainError::Diverged { step: step + 1, loss: loss_value, last_good: Box::new(model) });
        }

        let done = opt.step;
        let mut val_loss = None;
        if !val.is_empty() && (done % cfg.val_every == 0 || done == cfg.steps) {
            let v = mean_loss(&model, val, eps, cfg.seed, done, cfg.batch_size)?;
            val_loss = Some(v);
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.clone()));
                stale = 0;
            } else {
                stale += 1;
            }
        }
        log.rows.push(LogRow { step: done, loss: loss_value, val_loss, lr, wall_ms: clock.elapsed().as_millis() as u64 });
        if cfg.patience > 0 && stale >= cfg.patience {
            break;
        }
    }
    let steps_run = opt.step - first;
    let (best_val_loss, model) = match best {
        Some((v, m)) => (Some(v), m),
        None => (None, model),
    };
    Ok(TrainOutcome { model, optimizer: opt, log, best_val_loss, steps_run, epsilon: eps })
}

/// Text-only training: reconstruct each caption from its noised text embedding.
pub fn train_text_only<'a>(
    train: impl IntoIterator<Item = &'a Caption>,
    val: impl IntoIterator<Item = &'a Caption>,
    encoder: &TextEncoder,
    model: CaptionModel,
    noise: &NoiseConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let tr = text_examples(train, encoder)?;
    let va = text_examples(val, encoder)?;
    optimize(Start::Fresh(model), &tr, &va, noise.epsilon, cfg)
}

/// Paired baseline: the same loop conditioned on noised image embeddings.
pub fn supervised_paired_train<'a>(
    train: impl IntoIterator<Item = &'a Caption>,
    val: impl IntoIterator<Item = &'a Caption>,
    scenes: &[Scene],
    encoder: &ImageEncoder,
    model: CaptionModel,
    noise: &NoiseConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let tr = paired_examples(train, scenes, encoder)?;
    let va = paired_examples(val, scenes, encoder)?;
    optimize(Start::Fresh(model), &tr, &va, noise.epsilon, cfg)
}
