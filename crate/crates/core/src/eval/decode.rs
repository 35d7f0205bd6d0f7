use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::model::{CaptionModel, DecodeState};
use crate::world::{TokenId, BOS, EOS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    Beam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub beam_width: usize,
    /// Maximum sequence length including bos and eos.
    pub max_len: usize,
    /// Finished hypotheses are ranked by `log_prob / generated_len^length_penalty`.
    pub length_penalty: f32,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { strategy: Strategy::Beam, beam_width: 5, max_len: 24, length_penalty: 0.7 }
    }
}

impl DecodeConfig {
    pub fn greedy() -> Self {
        DecodeConfig { strategy: Strategy::Greedy, ..Default::default() }
    }

    pub fn validate(&self, model: &CaptionModel) -> Result<(), EvalError> {
        if self.beam_width == 0 {
            return Err(EvalError::InvalidConfig("beam_width must be at least 1".into()));
        }
        if self.max_len < 2 || self.max_len > model.config().max_seq_len {
            return Err(EvalError::InvalidConfig(format!(
                "max_len {} must lie in [2, {}]",
                self.max_len,
                model.config().max_seq_len
            )));
        }
        Ok(())
    }
}

/// Index of the largest value; ties resolve to the lowest index.
fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn log_softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let lse = max as f64 + logits.iter().map(|&x| ((x - max) as f64).exp()).sum::<f64>().ln();
    logits.iter().map(|&x| (x as f64 - lse) as f32).collect()
}

/// Decodes a token sequence (bos first, eos last unless cut at `max_len`).
pub fn generate(model: &CaptionModel, embedding: &[f32], cfg: &DecodeConfig) -> Result<Vec<TokenId>, EvalError> {
    cfg.validate(model)?;
    let mut state = model.start(embedding)?;
    let logits = model.step(&mut state, BOS)?;
    match cfg.strategy {
        Strategy::Greedy => greedy(model, state, logits, cfg.max_len),
        Strategy::Beam => beam(model, state, logits, cfg),
    }
}

fn greedy(model: &CaptionModel, mut state: DecodeState, mut logits: Vec<f32>, max_len: usize) -> Result<Vec<TokenId>, EvalError> {
    let mut tokens = vec![BOS];
    loop {
        let next = argmax(&logits);
        tokens.push(next);
        if next == EOS || tokens.len() >= max_len {
            return Ok(tokens);
        }
        logits = model.step(&mut state, next)?;
    }
}

struct Hypothesis {
    tokens: Vec<TokenId>,
    log_prob: f64,
    state: DecodeState,
    logits: Vec<f32>,
}

fn beam(model: &CaptionModel, state: DecodeState, logits: Vec<f32>, cfg: &DecodeConfig) -> Result<Vec<TokenId>, EvalError> {
    let width = cfg.beam_width;
    let mut live = vec![Hypothesis { tokens: vec![BOS], log_prob: 0.0, state, logits }];
    let mut finished: Vec<(Vec<TokenId>, f64)> = Vec::new();
    let score = |lp: f64, len: usize| lp / (len.max(1) as f64).powf(cfg.length_penalty as f64);
    while !live.is_empty() && finished.len() < width {
        // Candidates in (parent order, token rank) order so a stable sort
        // breaks ties toward earlier parents and lower token ids.
        let mut cands: Vec<(usize, TokenId, f64)> = Vec::with_capacity(live.len() * width);
        for (pi, h) in live.iter().enumerate() {
            let lp = log_softmax(&h.logits);
            let mut order: Vec<usize> = (0..lp.len()).collect();
            order.sort_by(|&a, &b| h.logits[b].total_cmp(&h.logits[a]).then(a.cmp(&b)));
            cands.extend(order.into_iter().take(width).map(|t| (pi, t, h.log_prob + lp[t] as f64)));
        }
        cands.sort_by(|a, b| b.2.total_cmp(&a.2));
        let mut next = Vec::with_capacity(width);
        for (pi, tok, lp) in cands.into_iter().take(width) {
            let parent = &live[pi];
            let mut tokens = parent.tokens.clone();
            tokens.push(tok);
            if tok == EOS || tokens.len() >= cfg.max_len {
                let generated = tokens.len() - 1;
                finished.push((tokens, score(lp, generated)));
            } else {
                let mut state = parent.state.clone();
                let logits = model.step(&mut state, tok)?;
                next.push(Hypothesis { tokens, log_prob: lp, state, logits });
            }
        }
        live = next;
    }
    let mut best: Option<(Vec<TokenId>, f64)> = None;
    for (t, s) in finished {
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((t, s));
        }
    }
    Ok(best.map(|(t, _)| t).unwrap_or_else(|| vec![BOS, EOS]))
}
