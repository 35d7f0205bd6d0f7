// Checkpoint file layout (integers little-endian):
//
//   magic     "GDCK"               4 bytes
//   version   u32
//   meta_len  u64
//   meta      UTF-8 JSON           meta_len bytes
//   params    f32 per scalar, tensors in parameter order
//   moments   (optional) first then second moment per tensor, same order

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CaptionModel, ModelConfig, ModelError, ParamStore};
use crate::autodiff::{AdamWConfig, Moments, OptimizerState, Tensor};
use crate::world::Vocabulary;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub fingerprint: String,
    pub vocab_hash: String,
    pub step: u64,
    pub epsilon: f32,
    pub names: Vec<String>,
    /// Present when optimizer moments follow the parameters.
    pub optimizer: Option<AdamWConfig>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: CaptionModel,
    pub meta: CheckpointMeta,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn new(model: CaptionModel, vocab: &Vocabulary, step: u64, epsilon: f32, optimizer: Option<OptimizerState>) -> Self {
        let meta = CheckpointMeta {
            config: model.config().clone(),
            fingerprint: model.config().fingerprint(),
            vocab_hash: vocab.hash(),
            step,
            epsilon,
            names: model.params.names.clone(),
            optimizer: optimizer.as_ref().map(|o| o.config.clone()),
        };
        Checkpoint { model, meta, optimizer }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::with_capacity(16 + meta.len() + self.model.param_count() * 12);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        let mut put = |xs: &[f32]| xs.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        for t in &self.model.params.tensors {
            put(t.data());
        }
        if let Some(opt) = &self.optimizer {
            for m in &opt.moments {
                put(&m.first);
                put(&m.second);
            }
        }
        Ok(out)
    }

    /// Parses a checkpoint and refuses it unless it was built for `vocab`.
    pub fn from_bytes(bytes: &[u8], vocab: &Vocabulary) -> Result<Self, ModelError> {
        let bad = |m: String| ModelError::BadCheckpoint(m);
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("missing GDCK magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let meta_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let meta_end = 16usize.checked_add(meta_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated metadata".into()))?;
        let meta: CheckpointMeta = serde_json::from_slice(&bytes[16..meta_end])?;
        let runtime = vocab.hash();
        if meta.vocab_hash != runtime {
            return Err(ModelError::VocabularyMismatch { checkpoint: meta.vocab_hash, runtime });
        }
        if meta.fingerprint != meta.config.fingerprint() {
            return Err(bad("config fingerprint does not match its config".into()));
        }
        let template = CaptionModel::new(meta.config.clone(), 0)?;
        let mut floats = bytes[meta_end..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        if (bytes.len() - meta_end) % 4 != 0 {
            return Err(bad("payload is not a whole number of floats".into()));
        }
        let mut take = |n: usize| -> Result<Vec<f32>, ModelError> {
            let v: Vec<f32> = floats.by_ref().take(n).collect();
            if v.len() == n {
                Ok(v)
            } else {
                Err(ModelError::BadCheckpoint("truncated parameter payload".into()))
            }
        };
        let mut tensors = Vec::with_capacity(template.params.len());
        for t in &template.params.tensors {
            tensors.push(Tensor::new(t.shape().to_vec(), take(t.numel())?)?);
        }
        let optimizer = match &meta.optimizer {
            None => None,
            Some(cfg) => {
                let mut moments = Vec::with_capacity(tensors.len());
                for t in &tensors {
                    moments.push(Moments { first: take(t.numel())?, second: take(t.numel())? });
                }
                Some(OptimizerState { config: cfg.clone(), step: meta.step, moments })
            }
        };
        if floats.next().is_some() {
            return Err(bad("trailing bytes after payload".into()));
        }
        let params = ParamStore { names: meta.names.clone(), tensors };
        let model = CaptionModel::from_parts(meta.config.clone(), params)?;
        Ok(Checkpoint { model, meta, optimizer })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), ModelError> {
    fs::write(path, checkpoint.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, vocab: &Vocabulary) -> Result<Checkpoint, ModelError> {
    Checkpoint::from_bytes(&fs::read(path)?, vocab)
}
