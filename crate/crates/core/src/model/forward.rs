use super::{Activation, BlockIdx, CaptionModel, MapperIdx, ModelError};
use crate::autodiff::{AttentionLayout, Tape, Tensor, Var};
use crate::world::{TokenId, BOS, PAD};

/// A teacher-forced batch: one conditioning embedding per sequence.
#[derive(Clone, Debug)]
pub struct BatchInput<'a> {
    /// Row-major `[batch, d_embed]`.
    pub embeddings: &'a [f32],
    /// Each sequence starts with bos; lengths may differ.
    pub sequences: &'a [Vec<TokenId>],
}

/// Result of a batched forward pass recorded on a tape.
pub struct ForwardOutput {
    /// `[batch * seq_len, vocab]`; row `b * seq_len + i` predicts token `i` of sequence `b`.
    pub logits: Var,
    pub seq_len: usize,
    /// Per-row targets: the teacher token, or pad for bos and padding rows.
    pub targets: Vec<TokenId>,
    /// Parameter leaves in [`super::ParamStore`] order.
    pub params: Vec<Var>,
}

impl CaptionModel {
    fn check_batch(&self, input: &BatchInput) -> Result<usize, ModelError> {
        let cfg = self.config();
        let batch = input.sequences.len();
        if batch == 0 || input.embeddings.len() != batch * cfg.d_embed {
            return Err(ModelError::EmbeddingDim {
                expected: cfg.d_embed,
                found: input.embeddings.len() / batch.max(1),
            });
        }
        for seq in input.sequences {
            if seq.first() != Some(&BOS) {
                return Err(ModelError::MissingBos);
            }
            if seq.len() > cfg.max_seq_len {
                return Err(ModelError::SequenceTooLong { len: seq.len(), max: cfg.max_seq_len });
            }
            if let Some(&t) = seq.iter().find(|&&t| t >= cfg.vocab_size) {
                return Err(ModelError::TokenOutOfRange { token: t, vocab: cfg.vocab_size });
            }
        }
        Ok(batch)
    }

    /// Records the teacher-forced forward pass for a batch on `tape`.
    ///
    /// Rows of one sequence never depend on another sequence or on padding.
    pub fn forward_batch(&self, tape: &mut Tape, input: &BatchInput) -> Result<ForwardOutput, ModelError> {
        let batch = self.check_batch(input)?;
        let cfg = self.config();
        let (d, k) = (cfg.d_model, cfg.prefix_len);
        let params: Vec<Var> = self.params.tensors.iter().map(|t| tape.param(t.clone())).collect();
        let l = &self.layout;

        let emb = tape.leaf(Tensor::matrix(batch, cfg.d_embed, input.embeddings.to_vec())?);
        let prefix = self.map_prefix(tape, &params, emb, batch)?;

        let seq_len = input.sequences.iter().map(Vec::len).max().unwrap_or(1);
        let steps = seq_len - 1;
        let total = k + steps;
        let x = if steps > 0 {
            let mut ids = Vec::with_capacity(batch * steps);
            for seq in input.sequences {
                ids.extend((0..steps).map(|i| if i + 1 < seq.len() { seq[i] } else { PAD }));
            }
            let tokens = tape.embedding_gather(params[l.tok_emb], &ids)?;
            let stacked = tape.concat_rows(&[prefix, tokens])?;
            let order: Vec<usize> = (0..batch)
                .flat_map(|b| (0..k).map(move |j| b * k + j).chain((0..steps).map(move |i| batch * k + b * steps + i)))
                .collect();
            tape.gather_rows(stacked, &order)?
        } else {
            prefix
        };
        let pos_ids: Vec<usize> = (0..batch).flat_map(|_| 0..total).collect();
        let pos = tape.gather_rows(params[l.pos_emb], &pos_ids)?;
        let mut h = tape.add(x, pos)?;
        let layout = AttentionLayout { batch, seq: total, heads: cfg.n_heads, causal: true };
        for blk in &l.blocks {
            h = block(tape, &params, blk, h, layout, Activation::Gelu)?;
        }
        let out_rows: Vec<usize> = (0..batch).flat_map(|b| (0..seq_len).map(move |i| b * total + k - 1 + i)).collect();
        let h = tape.gather_rows(h, &out_rows)?;
        let h = affine_norm(tape, h, params[l.lnf_g], params[l.lnf_b])?;
        let logits = tape.matmul(h, params[l.w_out])?;
        let logits = tape.add(logits, params[l.b_out])?;

        let mut targets = Vec::with_capacity(batch * seq_len);
        for seq in input.sequences {
            targets.extend((0..seq_len).map(|i| if i == 0 || i >= seq.len() { PAD } else { seq[i] }));
        }
        debug_assert_eq!(d, tape.value(h).shape()[1]);
        Ok(ForwardOutput { logits, seq_len, targets, params })
    }

    /// Mean teacher-forced cross-entropy over the batch's supervised tokens.
    pub fn batch_loss(&self, tape: &mut Tape, input: &BatchInput) -> Result<(Var, ForwardOutput), ModelError> {
        let out = self.forward_batch(tape, input)?;
        let loss = tape.cross_entropy(out.logits, &out.targets, PAD)?;
        Ok((loss, out))
    }

    /// Teacher-forced logits `[S, V]` for one embedding and sequence.
    pub fn forward(&self, embedding: &[f32], teacher: &[TokenId]) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let seqs = [teacher.to_vec()];
        let out = self.forward_batch(&mut tape, &BatchInput { embeddings: embedding, sequences: &seqs })?;
        Ok(tape.value(out.logits).clone())
    }

    /// Mapping network: `[batch, d_embed]` to `[batch * prefix_len, d_model]`.
    fn map_prefix(&self, tape: &mut Tape, p: &[Var], emb: Var, batch: usize) -> Result<Var, ModelError> {
        let cfg = self.config();
        let (d, k) = (cfg.d_model, cfg.prefix_len);
        let act = cfg.mapper.activation;
        match &self.layout.mapper {
            MapperIdx::Mlp { w1, b1, w2, b2 } => {
                let h = tape.matmul(emb, p[*w1])?;
                let h = tape.add(h, p[*b1])?;
                let h = activate(tape, h, act);
                let o = tape.matmul(h, p[*w2])?;
                let o = tape.add(o, p[*b2])?;
                Ok(tape.reshape(o, vec![batch * k, d])?)
            }
            MapperIdx::Transformer { w_in, b_in, constants, pos, blocks } => {
                let o = tape.matmul(emb, p[*w_in])?;
                let o = tape.add(o, p[*b_in])?;
                let projected = tape.reshape(o, vec![batch * k, d])?;
                let stacked = tape.concat_rows(&[projected, p[*constants]])?;
                let order: Vec<usize> =
                    (0..batch).flat_map(|b| (0..k).map(move |j| b * k + j).chain((0..k).map(move |j| batch * k + j))).collect();
                let x = tape.gather_rows(stacked, &order)?;
                let pos_ids: Vec<usize> = (0..batch).flat_map(|_| 0..2 * k).collect();
                let pe = tape.gather_rows(p[*pos], &pos_ids)?;
                let mut h = tape.add(x, pe)?;
                let layout = AttentionLayout { batch, seq: 2 * k, heads: cfg.n_heads, causal: false };
                for blk in blocks {
                    h = block(tape, p, blk, h, layout, act)?;
                }
                let take: Vec<usize> = (0..batch).flat_map(|b| (0..k).map(move |j| b * 2 * k + k + j)).collect();
                Ok(tape.gather_rows(h, &take)?)
            }
        }
    }
}

fn activate(tape: &mut Tape, x: Var, act: Activation) -> Var {
    match act {
        Activation::Relu => tape.relu(x),
        Activation::Gelu => tape.gelu(x),
    }
}

fn affine_norm(tape: &mut Tape, x: Var, gain: Var, bias: Var) -> Result<Var, ModelError> {
    let n = tape.layer_norm(x);
    let n = tape.mul(n, gain)?;
    Ok(tape.add(n, bias)?)
}

/// Pre-norm residual block: attention then feed-forward.
fn block(
    tape: &mut Tape,
    p: &[Var],
    b: &BlockIdx,
    x: Var,
    layout: AttentionLayout,
    act: Activation,
) -> Result<Var, ModelError> {
    let n = affine_norm(tape, x, p[b.ln1_g], p[b.ln1_b])?;
    let qkv = tape.matmul(n, p[b.w_qkv])?;
    let qkv = tape.add(qkv, p[b.b_qkv])?;
    let a = tape.attention(qkv, layout)?;
    let a = tape.matmul(a, p[b.w_o])?;
    let a = tape.add(a, p[b.b_o])?;
    let x = tape.add(x, a)?;
    let n = affine_norm(tape, x, p[b.ln2_g], p[b.ln2_b])?;
    let f = tape.matmul(n, p[b.w_fc1])?;
    let f = tape.add(f, p[b.b_fc1])?;
    let f = activate(tape, f, act);
    let f = tape.matmul(f, p[b.w_fc2])?;
    let f = tape.add(f, p[b.b_fc2])?;
    Ok(tape.add(x, f)?)
}
