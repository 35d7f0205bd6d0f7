// Tape-free incremental decoding. Mirrors the arithmetic of the tape forward
// pass row by row and caches per-layer keys and values.

use super::{Activation, BlockIdx, CaptionModel, MapperIdx, ModelError};
use crate::autodiff::{gelu, gemm, normalize_row, softmax_in_place, Tensor};
use crate::world::TokenId;

/// Keys and values of every position decoded so far, per decoder layer.
#[derive(Clone, Debug)]
pub struct DecodeState {
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    len: usize,
}

impl DecodeState {
    /// Positions consumed so far, prefix included.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

fn linear(x: &[f32], rows: usize, w: &Tensor, b: &Tensor) -> Vec<f32> {
    let (k, n) = w.as_matrix_dims();
    let mut out = Vec::with_capacity(rows * n);
    for _ in 0..rows {
        out.extend_from_slice(b.data());
    }
    let mut prod = vec![0.0f32; rows * n];
    gemm(rows, k, n, x, (k as isize, 1), w.data(), (n as isize, 1), &mut prod, 0.0);
    // Same rounding order as the tape: product first, then bias.
    out.iter_mut().zip(&prod).for_each(|(o, &p)| *o = p + *o);
    out
}

fn norm_affine(x: &[f32], width: usize, g: &Tensor, b: &Tensor) -> Vec<f32> {
    let mut out = x.to_vec();
    for row in out.chunks_mut(width) {
        normalize_row(row);
        row.iter_mut().zip(g.data()).for_each(|(v, &s)| *v *= s);
        row.iter_mut().zip(b.data()).for_each(|(v, &s)| *v += s);
    }
    out
}

fn activate(x: &mut [f32], act: Activation) {
    match act {
        Activation::Relu => x.iter_mut().for_each(|v| *v = v.max(0.0)),
        Activation::Gelu => x.iter_mut().for_each(|v| *v = gelu(*v)),
    }
}

impl CaptionModel {
    fn t(&self, i: usize) -> &Tensor {
        &self.params.tensors[i]
    }

    /// Runs `rows` new positions through one block, appending their keys and
    /// values to the cache. New row `i` attends to every cached position and,
    /// when `causal`, to new rows `<= i`; otherwise to all new rows.
    fn block_rows(
        &self,
        x: &mut [f32],
        rows: usize,
        b: &BlockIdx,
        act: Activation,
        keys: &mut Vec<f32>,
        values: &mut Vec<f32>,
        causal: bool,
    ) {
        let d = self.config().d_model;
        let heads = self.config().n_heads;
        let hd = d / heads;
        let scale = 1.0 / (hd as f32).sqrt();
        let n = norm_affine(x, d, self.t(b.ln1_g), self.t(b.ln1_b));
        let qkv = linear(&n, rows, self.t(b.w_qkv), self.t(b.b_qkv));
        let cached = keys.len() / d;
        for r in 0..rows {
            keys.extend_from_slice(&qkv[r * 3 * d + d..r * 3 * d + 2 * d]);
            values.extend_from_slice(&qkv[r * 3 * d + 2 * d..r * 3 * d + 3 * d]);
        }
        let total = cached + rows;
        let mut attn = vec![0.0f32; rows * d];
        let mut scores = vec![0.0f32; total];
        for r in 0..rows {
            let span = if causal { cached + r + 1 } else { total };
            for h in 0..heads {
                let q = &qkv[r * 3 * d + h * hd..][..hd];
                for (s, sc) in scores[..span].iter_mut().enumerate() {
                    *sc = crate::autodiff::dot(q, &keys[s * d + h * hd..][..hd]) * scale;
                }
                softmax_in_place(&mut scores[..span]);
                let o = &mut attn[r * d + h * hd..][..hd];
                for (s, &p) in scores[..span].iter().enumerate() {
                    o.iter_mut().zip(&values[s * d + h * hd..][..hd]).for_each(|(o, &v)| *o += p * v);
                }
            }
        }
        let a = linear(&attn, rows, self.t(b.w_o), self.t(b.b_o));
        x.iter_mut().zip(&a).for_each(|(x, &a)| *x += a);
        let n = norm_affine(x, d, self.t(b.ln2_g), self.t(b.ln2_b));
        let mut f = linear(&n, rows, self.t(b.w_fc1), self.t(b.b_fc1));
        activate(&mut f, act);
        let f = linear(&f, rows, self.t(b.w_fc2), self.t(b.b_fc2));
        x.iter_mut().zip(&f).for_each(|(x, &f)| *x += f);
    }

    /// Prefix vectors `[prefix_len, d_model]` for one embedding.
    pub fn prefix(&self, embedding: &[f32]) -> Result<Vec<f32>, ModelError> {
        let cfg = self.config();
        if embedding.len() != cfg.d_embed {
            return Err(ModelError::EmbeddingDim { expected: cfg.d_embed, found: embedding.len() });
        }
        let (d, k) = (cfg.d_model, cfg.prefix_len);
        match &self.layout.mapper {
            MapperIdx::Mlp { w1, b1, w2, b2 } => {
                let mut h = linear(embedding, 1, self.t(*w1), self.t(*b1));
                activate(&mut h, cfg.mapper.activation);
                Ok(linear(&h, 1, self.t(*w2), self.t(*b2)))
            }
            MapperIdx::Transformer { w_in, b_in, constants, pos, blocks } => {
                let mut x = linear(embedding, 1, self.t(*w_in), self.t(*b_in));
                x.extend_from_slice(self.t(*constants).data());
                x.iter_mut().zip(self.t(*pos).data()).for_each(|(x, &p)| *x += p);
                for blk in blocks {
                    let (mut ks, mut vs) = (Vec::new(), Vec::new());
                    self.block_rows(&mut x, 2 * k, blk, cfg.mapper.activation, &mut ks, &mut vs, false);
                }
                Ok(x[k * d..].to_vec())
            }
        }
    }

    /// Consumes the prefix for `embedding`; the next call to [`Self::step`]
    /// should feed bos.
    pub fn start(&self, embedding: &[f32]) -> Result<DecodeState, ModelError> {
        let cfg = self.config();
        let k = cfg.prefix_len;
        let mut x = self.prefix(embedding)?;
        x.iter_mut().zip(self.t(self.layout.pos_emb).data()).for_each(|(x, &p)| *x += p);
        let mut state = DecodeState { keys: vec![Vec::new(); cfg.n_layers], values: vec![Vec::new(); cfg.n_layers], len: k };
        for (i, blk) in self.layout.blocks.iter().enumerate() {
            self.block_rows(&mut x, k, blk, Activation::Gelu, &mut state.keys[i], &mut state.values[i], true);
        }
        Ok(state)
    }

    /// Feeds one token and returns next-token logits over the vocabulary.
    pub fn step(&self, state: &mut DecodeState, token: TokenId) -> Result<Vec<f32>, ModelError> {
        let cfg = self.config();
        let d = cfg.d_model;
        if token >= cfg.vocab_size {
            return Err(ModelError::TokenOutOfRange { token, vocab: cfg.vocab_size });
        }
        if state.len >= cfg.prefix_len + cfg.max_seq_len {
            return Err(ModelError::SequenceTooLong { len: state.len - cfg.prefix_len + 1, max: cfg.max_seq_len });
        }
        let l = &self.layout;
        let mut x = self.t(l.tok_emb).data()[token * d..(token + 1) * d].to_vec();
        x.iter_mut().zip(&self.t(l.pos_emb).data()[state.len * d..]).for_each(|(x, &p)| *x += p);
        for (i, blk) in l.blocks.iter().enumerate() {
            self.block_rows(&mut x, 1, blk, Activation::Gelu, &mut state.keys[i], &mut state.values[i], true);
        }
        state.len += 1;
        let n = norm_affine(&x, d, self.t(l.lnf_g), self.t(l.lnf_b));
        Ok(linear(&n, 1, self.t(l.w_out), self.t(l.b_out)))
    }
}
