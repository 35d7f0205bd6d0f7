//! Plain f64 reimplementation of the primitives and of the full captioning
//! model, written from the architecture description without the tape.

use std::collections::HashMap;

use noisecap::model::{Activation, CaptionModel, MapperKind, ModelConfig};

pub const LN_EPS: f64 = 1e-5;

/// Row-major matrix.
#[derive(Clone, Debug)]
pub struct M {
    pub r: usize,
    pub c: usize,
    pub v: Vec<f64>,
}

impl M {
    pub fn new(r: usize, c: usize, v: Vec<f64>) -> M {
        assert_eq!(v.len(), r * c);
        M { r, c, v }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.v[i * self.c + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.v[i * self.c..(i + 1) * self.c]
    }

    pub fn rows(&self, idx: impl IntoIterator<Item = usize>) -> M {
        let mut v = Vec::new();
        let mut r = 0;
        for i in idx {
            v.extend_from_slice(self.row(i));
            r += 1;
        }
        M::new(r, self.c, v)
    }
}

pub fn matmul(a: &M, b: &M) -> M {
    assert_eq!(a.c, b.r);
    let mut v = vec![0.0; a.r * b.c];
    for i in 0..a.r {
        for j in 0..b.c {
            v[i * b.c + j] = (0..a.c).map(|k| a.at(i, k) * b.at(k, j)).sum();
        }
    }
    M::new(a.r, b.c, v)
}

pub fn add_row(a: &M, b: &[f64]) -> M {
    M::new(a.r, a.c, a.v.iter().enumerate().map(|(i, x)| x + b[i % a.c]).collect())
}

pub fn mul_row(a: &M, b: &[f64]) -> M {
    M::new(a.r, a.c, a.v.iter().enumerate().map(|(i, x)| x * b[i % a.c]).collect())
}

pub fn add(a: &M, b: &M) -> M {
    M::new(a.r, a.c, a.v.iter().zip(&b.v).map(|(x, y)| x + y).collect())
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

pub fn map(a: &M, f: fn(f64) -> f64) -> M {
    M::new(a.r, a.c, a.v.iter().map(|&x| f(x)).collect())
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn softmax_rows(a: &M) -> M {
    M::new(a.r, a.c, (0..a.r).flat_map(|i| softmax(a.row(i))).collect())
}

pub fn layer_norm(a: &M) -> M {
    let mut v = Vec::with_capacity(a.v.len());
    for i in 0..a.r {
        let row = a.row(i);
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        v.extend(row.iter().map(|x| (x - mean) / (var + LN_EPS).sqrt()));
    }
    M::new(a.r, a.c, v)
}

/// Multi-head attention over packed `[q | k | v]` rows of `batch` sequences.
pub fn attention(qkv: &M, batch: usize, seq: usize, heads: usize, causal: bool) -> M {
    let w = qkv.c / 3;
    let hd = w / heads;
    let mut out = vec![0.0; batch * seq * w];
    for b in 0..batch {
        for h in 0..heads {
            for t in 0..seq {
                let q = &qkv.row(b * seq + t)[h * hd..(h + 1) * hd];
                let span = if causal { t + 1 } else { seq };
                let scores: Vec<f64> = (0..span)
                    .map(|s| {
                        let k = &qkv.row(b * seq + s)[w + h * hd..w + (h + 1) * hd];
                        q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / (hd as f64).sqrt()
                    })
                    .collect();
                let p = softmax(&scores);
                for (s, ps) in p.iter().enumerate() {
                    let v = &qkv.row(b * seq + s)[2 * w + h * hd..2 * w + (h + 1) * hd];
                    for j in 0..hd {
                        out[(b * seq + t) * w + h * hd + j] += ps * v[j];
                    }
                }
            }
        }
    }
    M::new(batch * seq, w, out)
}

/// Mean negative log-likelihood of `targets` over rows whose target is not `pad`.
pub fn cross_entropy(logits: &M, targets: &[usize], pad: usize) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    for (i, &t) in targets.iter().enumerate() {
        if t == pad {
            continue;
        }
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        total += lse - row[t];
        n += 1;
    }
    total / n as f64
}

/// Named parameters as f64 matrices (vectors are 1 x n).
pub struct Params {
    pub map: HashMap<String, M>,
}

impl Params {
    fn m(&self, name: &str) -> &M {
        self.map.get(name).unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    fn v(&self, name: &str) -> &[f64] {
        &self.m(name).v
    }
}

impl Params {
    /// f64 copy of a model's parameters; vectors become single-row matrices.
    pub fn from_model(model: &CaptionModel) -> Params {
        let mut map = HashMap::new();
        for (name, t) in model.params.names.iter().zip(&model.params.tensors) {
            let (r, c) = t.as_matrix_dims();
            map.insert(name.clone(), M::new(r, c, t.data().iter().map(|&x| x as f64).collect()));
        }
        Params { map }
    }
}

fn affine_norm(p: &Params, x: &M, prefix: &str) -> M {
    add_row(&mul_row(&layer_norm(x), p.v(&format!("{prefix}.gain"))), p.v(&format!("{prefix}.bias")))
}

fn act_fn(a: Activation) -> fn(f64) -> f64 {
    match a {
        Activation::Relu => relu,
        Activation::Gelu => gelu,
    }
}

fn block(p: &Params, name: &str, x: &M, heads: usize, causal: bool, act: Activation) -> M {
    let n = affine_norm(p, x, &format!("{name}.ln1"));
    let qkv = add_row(&matmul(&n, p.m(&format!("{name}.attn.w_qkv"))), p.v(&format!("{name}.attn.b_qkv")));
    let a = attention(&qkv, 1, x.r, heads, causal);
    let a = add_row(&matmul(&a, p.m(&format!("{name}.attn.w_o"))), p.v(&format!("{name}.attn.b_o")));
    let x = add(x, &a);
    let n = affine_norm(p, &x, &format!("{name}.ln2"));
    let f = add_row(&matmul(&n, p.m(&format!("{name}.mlp.w_fc1"))), p.v(&format!("{name}.mlp.b_fc1")));
    let f = map(&f, act_fn(act));
    let f = add_row(&matmul(&f, p.m(&format!("{name}.mlp.w_fc2"))), p.v(&format!("{name}.mlp.b_fc2")));
    add(&x, &f)
}

/// Prefix rows `[prefix_len, d_model]` for one conditioning vector.
pub fn prefix(cfg: &ModelConfig, p: &Params, emb: &[f64]) -> M {
    let (d, k) = (cfg.d_model, cfg.prefix_len);
    let e = M::new(1, emb.len(), emb.to_vec());
    match cfg.mapper.kind {
        MapperKind::Mlp => {
            let h = map(&add_row(&matmul(&e, p.m("mapper.w1")), p.v("mapper.b1")), act_fn(cfg.mapper.activation));
            let o = add_row(&matmul(&h, p.m("mapper.w2")), p.v("mapper.b2"));
            M::new(k, d, o.v)
        }
        MapperKind::Transformer => {
            let o = add_row(&matmul(&e, p.m("mapper.w_in")), p.v("mapper.b_in"));
            let mut v = o.v;
            v.extend_from_slice(&p.m("mapper.constants").v);
            let mut x = add(&M::new(2 * k, d, v), &p.m("mapper.pos").rows(0..2 * k));
            for i in 0..cfg.mapper.layers {
                x = block(p, &format!("mapper.block{i}"), &x, cfg.n_heads, false, cfg.mapper.activation);
            }
            x.rows(k..2 * k)
        }
    }
}

/// Summed NLL over the supervised tokens of one sequence and their count.
pub fn sequence_nll(cfg: &ModelConfig, p: &Params, emb: &[f64], seq: &[usize], pad: usize) -> (f64, usize) {
    let k = cfg.prefix_len;
    let pre = prefix(cfg, p, emb);
    let inputs = &seq[..seq.len() - 1];
    let mut v = pre.v.clone();
    for &t in inputs {
        v.extend_from_slice(p.m("decoder.tok_emb").row(t));
    }
    let total = k + inputs.len();
    let mut x = add(&M::new(total, cfg.d_model, v), &p.m("decoder.pos_emb").rows(0..total));
    for i in 0..cfg.n_layers {
        x = block(p, &format!("decoder.block{i}"), &x, cfg.n_heads, true, Activation::Gelu);
    }
    let h = affine_norm(p, &x.rows(k - 1..total), "decoder.ln_f");
    let logits = add_row(&matmul(&h, p.m("decoder.w_out")), p.v("decoder.b_out"));
    let targets: Vec<usize> = (0..seq.len()).map(|i| if i == 0 { pad } else { seq[i] }).collect();
    let n = targets.iter().filter(|&&t| t != pad).count();
    (cross_entropy(&logits, &targets, pad) * n as f64, n)
}

/// Mean teacher-forced NLL over a batch, pooled over tokens.
pub fn batch_loss(cfg: &ModelConfig, p: &Params, embs: &[Vec<f64>], seqs: &[Vec<usize>], pad: usize) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    for (e, s) in embs.iter().zip(seqs) {
        let (l, c) = sequence_nll(cfg, p, e, s, pad);
        total += l;
        n += c;
    }
    total / n as f64
}
