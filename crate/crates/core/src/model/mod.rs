//! The trainable captioner: a mapping network that turns one embedding into
//! `prefix_len` vectors, and a small pre-norm causal transformer decoder that
//! predicts tokens conditioned on that prefix.

mod checkpoint;
mod forward;
mod infer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{BatchInput, ForwardOutput};
pub use infer::DecodeState;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tensor};
use crate::seeds;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("token id {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("teacher sequence must start with bos")]
    MissingBos,
    #[error("embedding dimension {found} does not match model input {expected}")]
    EmbeddingDim { expected: usize, found: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("vocabulary hash mismatch: checkpoint {checkpoint}, runtime {runtime}")]
    VocabularyMismatch { checkpoint: String, runtime: String },
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Gelu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapperKind {
    /// Two-layer perceptron straight to `prefix_len * d_model`.
    Mlp,
    /// Projected embedding tokens followed by `prefix_len` learned constant
    /// tokens, mixed by bidirectional attention; the constants' outputs form the prefix.
    Transformer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapperConfig {
    pub kind: MapperKind,
    pub hidden: usize,
    pub activation: Activation,
    pub layers: usize,
}

impl Default for MapperConfig {
    fn default() -> Self {
        MapperConfig { kind: MapperKind::Mlp, hidden: 256, activation: Activation::Relu, layers: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_embed: usize,
    pub d_model: usize,
    pub prefix_len: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_mult: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub mapper: MapperConfig,
    pub init_std: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_embed: 64,
            d_model: 64,
            prefix_len: 8,
            n_layers: 2,
            n_heads: 4,
            ffn_mult: 4,
            vocab_size: 0,
            max_seq_len: 24,
            mapper: MapperConfig::default(),
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.into()));
        if self.d_embed == 0 || self.d_model == 0 || self.prefix_len == 0 || self.ffn_mult == 0 {
            return bad("dimensions must be positive");
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad("d_model must be divisible by n_heads");
        }
        if self.vocab_size < 4 {
            return bad("vocab_size must cover the reserved tokens");
        }
        if self.max_seq_len < 2 {
            return bad("max_seq_len must be at least 2");
        }
        if self.mapper.kind == MapperKind::Mlp && self.mapper.hidden == 0 {
            return bad("mapper.hidden must be positive");
        }
        Ok(())
    }

    /// Total trainable scalars; equals `param_count_formula` evaluated on this config.
    pub fn param_count(&self) -> usize {
        let (d, k, v, f) = (self.d_model, self.prefix_len, self.vocab_size, self.ffn_mult);
        let block = 4 * d + d * 3 * d + 3 * d + d * d + d + d * f * d + f * d + f * d * d + d;
        let mapper = match self.mapper.kind {
            MapperKind::Mlp => {
                let h = self.mapper.hidden;
                self.d_embed * h + h + h * k * d + k * d
            }
            MapperKind::Transformer => self.d_embed * k * d + k * d + k * d + 2 * k * d + self.mapper.layers * block,
        };
        mapper + v * d + (k + self.max_seq_len) * d + self.n_layers * block + 2 * d + d * v + v
    }

    /// Human-readable parameter-count formula recorded in manifests.
    pub fn param_count_formula(&self) -> &'static str {
        match self.mapper.kind {
            MapperKind::Mlp => {
                "E*H + H + H*K*D + K*D + V*D + (K+S)*D + N*(4D + 4D^2 + 4D + 2F*D^2 + F*D + D) + 2D + D*V + V"
            }
            MapperKind::Transformer => {
                "E*K*D + 4K*D + M*(block) + V*D + (K+S)*D + N*(4D + 4D^2 + 4D + 2F*D^2 + F*D + D) + 2D + D*V + V, block = 4D + 4D^2 + 4D + 2F*D^2 + F*D + D"
            }
        }
    }

    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct BlockIdx {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub w_qkv: usize,
    pub b_qkv: usize,
    pub w_o: usize,
    pub b_o: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w_fc1: usize,
    pub b_fc1: usize,
    pub w_fc2: usize,
    pub b_fc2: usize,
}

#[derive(Clone, Debug)]
pub(crate) enum MapperIdx {
    Mlp { w1: usize, b1: usize, w2: usize, b2: usize },
    Transformer { w_in: usize, b_in: usize, constants: usize, pos: usize, blocks: Vec<BlockIdx> },
}

/// Index of every parameter tensor inside [`ParamStore`].
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub mapper: MapperIdx,
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub blocks: Vec<BlockIdx>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub w_out: usize,
    pub b_out: usize,
}

#[derive(Clone, Copy, PartialEq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

struct Builder {
    specs: Vec<(String, Vec<usize>, Init)>,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push((name, shape, init));
        self.specs.len() - 1
    }

    fn block(&mut self, prefix: &str, d: usize, f: usize) -> BlockIdx {
        BlockIdx {
            ln1_g: self.add(format!("{prefix}.ln1.gain"), vec![d], Init::Ones),
            ln1_b: self.add(format!("{prefix}.ln1.bias"), vec![d], Init::Zeros),
            w_qkv: self.add(format!("{prefix}.attn.w_qkv"), vec![d, 3 * d], Init::Normal),
            b_qkv: self.add(format!("{prefix}.attn.b_qkv"), vec![3 * d], Init::Zeros),
            w_o: self.add(format!("{prefix}.attn.w_o"), vec![d, d], Init::Normal),
            b_o: self.add(format!("{prefix}.attn.b_o"), vec![d], Init::Zeros),
            ln2_g: self.add(format!("{prefix}.ln2.gain"), vec![d], Init::Ones),
            ln2_b: self.add(format!("{prefix}.ln2.bias"), vec![d], Init::Zeros),
            w_fc1: self.add(format!("{prefix}.mlp.w_fc1"), vec![d, f * d], Init::Normal),
            b_fc1: self.add(format!("{prefix}.mlp.b_fc1"), vec![f * d], Init::Zeros),
            w_fc2: self.add(format!("{prefix}.mlp.w_fc2"), vec![f * d, d], Init::Normal),
            b_fc2: self.add(format!("{prefix}.mlp.b_fc2"), vec![d], Init::Zeros),
        }
    }
}

fn plan(cfg: &ModelConfig) -> (Layout, Vec<(String, Vec<usize>, Init)>) {
    let (d, k, v, f) = (cfg.d_model, cfg.prefix_len, cfg.vocab_size, cfg.ffn_mult);
    let mut b = Builder { specs: Vec::new() };
    let mapper = match cfg.mapper.kind {
        MapperKind::Mlp => {
            let h = cfg.mapper.hidden;
            MapperIdx::Mlp {
                w1: b.add("mapper.w1".into(), vec![cfg.d_embed, h], Init::Normal),
                b1: b.add("mapper.b1".into(), vec![h], Init::Zeros),
                w2: b.add("mapper.w2".into(), vec![h, k * d], Init::Normal),
                b2: b.add("mapper.b2".into(), vec![k * d], Init::Zeros),
            }
        }
        MapperKind::Transformer => MapperIdx::Transformer {
            w_in: b.add("mapper.w_in".into(), vec![cfg.d_embed, k * d], Init::Normal),
            b_in: b.add("mapper.b_in".into(), vec![k * d], Init::Zeros),
            constants: b.add("mapper.constants".into(), vec![k, d], Init::Normal),
            pos: b.add("mapper.pos".into(), vec![2 * k, d], Init::Normal),
            blocks: (0..cfg.mapper.layers).map(|i| b.block(&format!("mapper.block{i}"), d, f)).collect(),
        },
    };
    let tok_emb = b.add("decoder.tok_emb".into(), vec![v, d], Init::Normal);
    let pos_emb = b.add("decoder.pos_emb".into(), vec![k + cfg.max_seq_len, d], Init::Normal);
    let blocks = (0..cfg.n_layers).map(|i| b.block(&format!("decoder.block{i}"), d, f)).collect();
    let lnf_g = b.add("decoder.ln_f.gain".into(), vec![d], Init::Ones);
    let lnf_b = b.add("decoder.ln_f.bias".into(), vec![d], Init::Zeros);
    let w_out = b.add("decoder.w_out".into(), vec![d, v], Init::Normal);
    let b_out = b.add("decoder.b_out".into(), vec![v], Init::Zeros);
    (Layout { mapper, tok_emb, pos_emb, blocks, lnf_g, lnf_b, w_out, b_out }, b.specs)
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }
}

/// Mapping network plus causal decoder.
#[derive(Clone, Debug)]
pub struct CaptionModel {
    config: ModelConfig,
    pub(crate) layout: Layout,
    pub params: ParamStore,
}

impl PartialEq for CaptionModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

impl CaptionModel {
    /// Scaled-Gaussian weights, zero biases, unit norm gains.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let (layout, specs) = plan(&config);
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for (i, (name, shape, init)) in specs.into_iter().enumerate() {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Normal => {
                    let mut rng = seeds::stream(seed, "init", i as u64);
                    (0..n).map(|_| rng.sample::<f32, _>(StandardNormal) * config.init_std).collect()
                }
            };
            tensors.push(Tensor::new(shape, data)?);
            names.push(name);
        }
        Ok(CaptionModel { config, layout, params: ParamStore { names, tensors } })
    }

    pub(crate) fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self, ModelError> {
        config.validate()?;
        let (layout, specs) = plan(&config);
        if specs.len() != params.len() {
            return Err(ModelError::BadCheckpoint(format!("expected {} tensors, found {}", specs.len(), params.len())));
        }
        for ((name, shape, _), (pn, pt)) in specs.iter().zip(params.names.iter().zip(&params.tensors)) {
            if name != pn || shape.as_slice() != pt.shape() {
                return Err(ModelError::BadCheckpoint(format!("tensor {pn} {:?} where {name} {shape:?} expected", pt.shape())));
            }
        }
        Ok(CaptionModel { config, layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(kind: MapperKind) -> ModelConfig {
        ModelConfig { vocab_size: 40, mapper: MapperConfig { kind, layers: 2, ..Default::default() }, ..Default::default() }
    }

    #[test]
    fn param_count_formula_matches_allocation() {
        for kind in [MapperKind::Mlp, MapperKind::Transformer] {
            let c = cfg(kind);
            let m = CaptionModel::new(c.clone(), 1).unwrap();
            assert_eq!(m.param_count(), c.param_count(), "{kind:?}");
        }
    }

    #[test]
    fn init_follows_convention() {
        let m = CaptionModel::new(cfg(MapperKind::Mlp), 1).unwrap();
        assert!(m.params.get("decoder.block0.ln1.gain").unwrap().data().iter().all(|&x| x == 1.0));
        assert!(m.params.get("decoder.b_out").unwrap().data().iter().all(|&x| x == 0.0));
        let w = m.params.get("decoder.w_out").unwrap().data();
        let std = (w.iter().map(|x| x * x).sum::<f32>() / w.len() as f32).sqrt();
        assert!((std - 0.02).abs() < 0.003, "{std}");
    }

    #[test]
    fn heads_must_divide_width() {
        let c = ModelConfig { n_heads: 5, ..cfg(MapperKind::Mlp) };
        assert!(CaptionModel::new(c, 1).is_err());
    }
}
