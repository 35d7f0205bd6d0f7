// Reverse-mode tape. Every primitive appends one node holding its output
// value; `backward` walks the nodes in reverse insertion order, which is a
// valid topological order because inputs always precede their consumers.

use super::tensor::Tensor;
use super::AutodiffError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const LAYER_NORM_EPS: f32 = 1e-5;

const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)
const GELU_K: f32 = 0.044_715;

/// Primitive selector for [`Tape::apply`].
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Mul,
    Relu,
    Gelu,
    Softmax,
    LayerNorm,
    EmbeddingGather(Vec<usize>),
    Concat,
    Slice { start: usize, len: usize },
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add { a: Var, b: Var, broadcast: bool },
    Mul { a: Var, b: Var, broadcast: bool },
    Scale { a: Var, factor: f32 },
    Gelu { a: Var, tanh: Vec<f32> },
    Relu { a: Var },
    Softmax { a: Var },
    LayerNorm { a: Var, inv_std: Vec<f32> },
    GatherRows { table: Var, ids: Vec<usize> },
    Concat { parts: Vec<Var> },
    Slice { a: Var, start: usize },
    Reshape { a: Var },
    Sum { a: Var },
    Attention { qkv: Var, layout: AttentionLayout, probs: Vec<f32> },
    CrossEntropy { logits: Var, targets: Vec<usize>, pad_id: usize, count: usize, probs: Vec<f32> },
}

/// Shape of a packed multi-head attention input: `batch * seq` rows of
/// `[q | k | v]`, each `heads * head_dim` wide.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionLayout {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    pub causal: bool,
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
}

/// Records primitive operations for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input tensor; it takes part in backprop iff `requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, requires_grad)
    }

    /// Adds a trainable input.
    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_grad(true))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes[v.0].value.shape().to_vec()
    }

    /// Generic dispatch over the core primitive set.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var, AutodiffError> {
        let arity = match kind {
            OpKind::MatMul | OpKind::Add | OpKind::Mul => 2,
            OpKind::Concat => inputs.len().max(1),
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(AutodiffError::Arity { op: format!("{kind:?}"), expected: arity, got: inputs.len() });
        }
        match kind {
            OpKind::MatMul => self.matmul(inputs[0], inputs[1]),
            OpKind::Add => self.add(inputs[0], inputs[1]),
            OpKind::Mul => self.mul(inputs[0], inputs[1]),
            OpKind::Relu => Ok(self.relu(inputs[0])),
            OpKind::Gelu => Ok(self.gelu(inputs[0])),
            OpKind::Softmax => Ok(self.softmax(inputs[0])),
            OpKind::LayerNorm => Ok(self.layer_norm(inputs[0])),
            OpKind::EmbeddingGather(ids) => self.gather_rows(inputs[0], &ids),
            OpKind::Concat => self.concat_rows(inputs),
            OpKind::Slice { start, len } => self.slice_rows(inputs[0], start, len),
        }
    }

    /// `a @ b`; leading dims of `a` are flattened, `b` must be 2-D.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let k = *sa.last().unwrap();
        if sb.len() != 2 || sb[0] != k {
            return Err(AutodiffError::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        let n = sb[1];
        let m = self.nodes[a.0].value.numel() / k;
        let mut out = vec![0.0f32; m * n];
        gemm(
            m,
            k,
            n,
            self.nodes[a.0].value.data(),
            (k as isize, 1),
            self.nodes[b.0].value.data(),
            (n as isize, 1),
            &mut out,
            0.0,
        );
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a, b, m, k, n }, rg))
    }

    fn broadcast_check(&self, op: &'static str, a: Var, b: Var) -> Result<bool, AutodiffError> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb {
            return Ok(false);
        }
        if sb.len() == 1 && sa.last() == Some(&sb[0]) {
            return Ok(true);
        }
        Err(AutodiffError::ShapeMismatch { op, lhs: sa, rhs: sb })
    }

    /// Elementwise sum; `b` may also be a row vector broadcast over `a`'s rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let broadcast = self.broadcast_check("add", a, b)?;
        let av = &self.nodes[a.0].value;
        let bd = self.nodes[b.0].value.data();
        let cols = bd.len();
        let mut out = av.data().to_vec();
        if broadcast {
            for row in out.chunks_mut(cols) {
                row.iter_mut().zip(bd).for_each(|(o, &x)| *o += x);
            }
        } else {
            out.iter_mut().zip(bd).for_each(|(o, &x)| *o += x);
        }
        let t = Tensor::new(av.shape().to_vec(), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add { a, b, broadcast }, rg))
    }

    /// Elementwise product; `b` may be a broadcast row vector.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let broadcast = self.broadcast_check("mul", a, b)?;
        let av = &self.nodes[a.0].value;
        let bd = self.nodes[b.0].value.data();
        let cols = bd.len();
        let mut out = av.data().to_vec();
        if broadcast {
            for row in out.chunks_mut(cols) {
                row.iter_mut().zip(bd).for_each(|(o, &x)| *o *= x);
            }
        } else {
            out.iter_mut().zip(bd).for_each(|(o, &x)| *o *= x);
        }
        let t = Tensor::new(av.shape().to_vec(), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul { a, b, broadcast }, rg))
    }

    pub fn scale(&mut self, a: Var, factor: f32) -> Var {
        let av = &self.nodes[a.0].value;
        let out: Vec<f32> = av.data().iter().map(|&x| x * factor).collect();
        let t = Tensor::new(av.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(a);
        self.push(t, Op::Scale { a, factor }, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let out: Vec<f32> = av.data().iter().map(|&x| x.max(0.0)).collect();
        let t = Tensor::new(av.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(a);
        self.push(t, Op::Relu { a }, rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let tanh: Vec<f32> = av.data().iter().map(|&x| gelu_tanh(x)).collect();
        let out: Vec<f32> = av.data().iter().zip(&tanh).map(|(&x, &t)| 0.5 * x * (1.0 + t)).collect();
        let t = Tensor::new(av.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(a);
        self.push(t, Op::Gelu { a, tanh }, rg)
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let (_, cols) = av.as_matrix_dims();
        let mut out = av.data().to_vec();
        for row in out.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let t = Tensor::new(av.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(a);
        self.push(t, Op::Softmax { a }, rg)
    }

    /// Normalizes each row to zero mean and unit variance (no affine terms).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let (rows, cols) = av.as_matrix_dims();
        let mut out = av.data().to_vec();
        let mut inv_std = Vec::with_capacity(rows);
        for row in out.chunks_mut(cols) {
            inv_std.push(normalize_row(row));
        }
        let t = Tensor::new(av.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(a);
        self.push(t, Op::LayerNorm { a, inv_std }, rg)
    }

    /// Row lookup: `out[r] = table[ids[r]]`. Also serves as embedding gather.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, AutodiffError> {
        let tv = &self.nodes[table.0].value;
        let (rows, cols) = tv.as_matrix_dims();
        if ids.is_empty() {
            return Err(AutodiffError::InvalidShape { shape: vec![0, cols] });
        }
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(AutodiffError::IndexOutOfRange { index: id, len: rows });
            }
            out.extend_from_slice(&tv.data()[id * cols..(id + 1) * cols]);
        }
        let t = Tensor::new(vec![ids.len(), cols], out)?;
        let rg = self.rg(table);
        Ok(self.push(t, Op::GatherRows { table, ids: ids.to_vec() }, rg))
    }

    pub fn embedding_gather(&mut self, table: Var, ids: &[usize]) -> Result<Var, AutodiffError> {
        self.gather_rows(table, ids)
    }

    /// Stacks matrices with equal column count along rows.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = parts.first().ok_or(AutodiffError::Arity { op: "concat".into(), expected: 1, got: 0 })?;
        let cols = self.nodes[first.0].value.as_matrix_dims().1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = &self.nodes[p.0].value;
            let (r, c) = pv.as_matrix_dims();
            if c != cols {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: self.shape(*first),
                    rhs: pv.shape().to_vec(),
                });
            }
            out.extend_from_slice(pv.data());
            rows += r;
        }
        let t = Tensor::new(vec![rows, cols], out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(t, Op::Concat { parts: parts.to_vec() }, rg))
    }

    /// Rows `[start, start + len)` of the matrix view of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let av = &self.nodes[a.0].value;
        let (rows, cols) = av.as_matrix_dims();
        if len == 0 || start + len > rows {
            return Err(AutodiffError::SliceOutOfRange { start, len, rows });
        }
        let out = av.data()[start * cols..(start + len) * cols].to_vec();
        let t = Tensor::new(vec![len, cols], out)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Slice { a, start }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, AutodiffError> {
        let t = self.nodes[a.0].value.clone().with_grad(false).reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape { a }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].value.data().iter().map(|&x| x as f64).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s as f32), Op::Sum { a }, rg)
    }

    /// Multi-head scaled dot-product attention over packed `[q | k | v]` rows.
    /// Returns `batch * seq` rows of width `heads * head_dim`.
    pub fn attention(&mut self, qkv: Var, layout: AttentionLayout) -> Result<Var, AutodiffError> {
        let qv = &self.nodes[qkv.0].value;
        let (rows, cols) = qv.as_matrix_dims();
        let AttentionLayout { batch, seq, heads, causal } = layout;
        if rows != batch * seq || cols % 3 != 0 || heads == 0 || (cols / 3) % heads != 0 {
            return Err(AutodiffError::ShapeMismatch {
                op: "attention",
                lhs: qv.shape().to_vec(),
                rhs: vec![batch, seq, heads],
            });
        }
        let width = cols / 3;
        let hd = width / heads;
        let scale = 1.0 / (hd as f32).sqrt();
        let x = qv.data();
        let mut out = vec![0.0f32; rows * width];
        let mut probs = vec![0.0f32; batch * heads * seq * seq];
        let mut scores = vec![0.0f32; seq];
        for b in 0..batch {
            for h in 0..heads {
                let pbase = (b * heads + h) * seq * seq;
                for t in 0..seq {
                    let qrow = &x[(b * seq + t) * cols + h * hd..][..hd];
                    let span = if causal { t + 1 } else { seq };
                    for (s, sc) in scores[..span].iter_mut().enumerate() {
                        let krow = &x[(b * seq + s) * cols + width + h * hd..][..hd];
                        *sc = dot(qrow, krow) * scale;
                    }
                    softmax_in_place(&mut scores[..span]);
                    probs[pbase + t * seq..pbase + t * seq + span].copy_from_slice(&scores[..span]);
                    let orow = &mut out[(b * seq + t) * width + h * hd..][..hd];
                    for (s, &p) in scores[..span].iter().enumerate() {
                        let vrow = &x[(b * seq + s) * cols + 2 * width + h * hd..][..hd];
                        orow.iter_mut().zip(vrow).for_each(|(o, &v)| *o += p * v);
                    }
                }
            }
        }
        let t = Tensor::new(vec![rows, width], out)?;
        let rg = self.rg(qkv);
        Ok(self.push(t, Op::Attention { qkv, layout, probs }, rg))
    }

    /// Mean token-level negative log-likelihood over non-pad targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], pad_id: usize) -> Result<Var, AutodiffError> {
        let lv = &self.nodes[logits.0].value;
        let (rows, vocab) = lv.as_matrix_dims();
        if targets.len() != rows {
            return Err(AutodiffError::ShapeMismatch {
                op: "cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let mut probs = vec![0.0f32; rows * vocab];
        let mut total = 0.0f64;
        let mut count = 0usize;
        for (r, &tgt) in targets.iter().enumerate() {
            if tgt == pad_id {
                continue;
            }
            if tgt >= vocab {
                return Err(AutodiffError::IndexOutOfRange { index: tgt, len: vocab });
            }
            let row = &lv.data()[r * vocab..(r + 1) * vocab];
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let z: f64 = row.iter().map(|&x| ((x - max) as f64).exp()).sum();
            let lse = max as f64 + z.ln();
            total += lse - row[tgt] as f64;
            for (p, &x) in probs[r * vocab..(r + 1) * vocab].iter_mut().zip(row) {
                *p = ((x as f64 - lse).exp()) as f32;
            }
            count += 1;
        }
        if count == 0 {
            return Err(AutodiffError::NoSupervisedPositions);
        }
        let loss = (total / count as f64) as f32;
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, targets: targets.to_vec(), pad_id, count, probs },
            rg,
        ))
    }

    /// Backpropagates from a scalar node. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss { shape: lv.shape().to_vec() });
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &x)| *a += x),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                if self.rg(*a) {
                    let bd = self.nodes[b.0].value.data();
                    let ga = slot(grads, *a, m * k);
                    gemm(m, n, k, g, (n as isize, 1), bd, (1, n as isize), ga, 1.0);
                }
                if self.rg(*b) {
                    let ad = self.nodes[a.0].value.data();
                    let gb = slot(grads, *b, k * n);
                    gemm(k, m, n, ad, (1, k as isize), g, (n as isize, 1), gb, 1.0);
                }
            }
            Op::Add { a, b, broadcast } => {
                if self.rg(*a) {
                    let ga = slot(grads, *a, g.len());
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
                if self.rg(*b) {
                    let nb = self.nodes[b.0].value.numel();
                    let gb = slot(grads, *b, nb);
                    if *broadcast {
                        for row in g.chunks(nb) {
                            gb.iter_mut().zip(row).for_each(|(x, &y)| *x += y);
                        }
                    } else {
                        gb.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::Mul { a, b, broadcast } => {
                let ad = self.nodes[a.0].value.data();
                let bd = self.nodes[b.0].value.data();
                let nb = bd.len();
                if self.rg(*a) {
                    let ga = slot(grads, *a, g.len());
                    if *broadcast {
                        for (grow, gr) in ga.chunks_mut(nb).zip(g.chunks(nb)) {
                            for j in 0..nb {
                                grow[j] += gr[j] * bd[j];
                            }
                        }
                    } else {
                        for j in 0..g.len() {
                            ga[j] += g[j] * bd[j];
                        }
                    }
                }
                if self.rg(*b) {
                    let gb = slot(grads, *b, nb);
                    if *broadcast {
                        for (arow, gr) in ad.chunks(nb).zip(g.chunks(nb)) {
                            for j in 0..nb {
                                gb[j] += gr[j] * arow[j];
                            }
                        }
                    } else {
                        for j in 0..g.len() {
                            gb[j] += g[j] * ad[j];
                        }
                    }
                }
            }
            Op::Scale { a, factor } => {
                let ga = slot(grads, *a, g.len());
                ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y * factor);
            }
            Op::Gelu { a, tanh } => {
                let ad = self.nodes[a.0].value.data();
                let ga = slot(grads, *a, g.len());
                for j in 0..g.len() {
                    ga[j] += g[j] * gelu_grad(ad[j], tanh[j]);
                }
            }
            Op::Relu { a } => {
                let ad = self.nodes[a.0].value.data();
                let ga = slot(grads, *a, g.len());
                for j in 0..g.len() {
                    if ad[j] > 0.0 {
                        ga[j] += g[j];
                    }
                }
            }
            Op::Softmax { a } => {
                let cols = node.value.as_matrix_dims().1;
                let ga = slot(grads, *a, g.len());
                for ((grow, gr), yr) in ga.chunks_mut(cols).zip(g.chunks(cols)).zip(out.chunks(cols)) {
                    let s = dot(gr, yr);
                    for j in 0..cols {
                        grow[j] += yr[j] * (gr[j] - s);
                    }
                }
            }
            Op::LayerNorm { a, inv_std } => {
                let cols = node.value.as_matrix_dims().1;
                let ga = slot(grads, *a, g.len());
                let inv_n = 1.0 / cols as f32;
                for (r, ((grow, gr), yr)) in ga.chunks_mut(cols).zip(g.chunks(cols)).zip(out.chunks(cols)).enumerate() {
                    let mean_g: f32 = gr.iter().sum::<f32>() * inv_n;
                    let mean_gy: f32 = dot(gr, yr) * inv_n;
                    for j in 0..cols {
                        grow[j] += inv_std[r] * (gr[j] - mean_g - yr[j] * mean_gy);
                    }
                }
            }
            Op::GatherRows { table, ids } => {
                let cols = node.value.as_matrix_dims().1;
                let nt = self.nodes[table.0].value.numel();
                let gt = slot(grads, *table, nt);
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut gt[id * cols..(id + 1) * cols];
                    dst.iter_mut().zip(&g[r * cols..(r + 1) * cols]).for_each(|(x, &y)| *x += y);
                }
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let np = self.nodes[p.0].value.numel();
                    if self.rg(p) {
                        let gp = slot(grads, p, np);
                        gp.iter_mut().zip(&g[offset..offset + np]).for_each(|(x, &y)| *x += y);
                    }
                    offset += np;
                }
            }
            Op::Slice { a, start } => {
                let cols = node.value.as_matrix_dims().1;
                let na = self.nodes[a.0].value.numel();
                let ga = slot(grads, *a, na);
                let dst = &mut ga[start * cols..start * cols + g.len()];
                dst.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
            }
            Op::Reshape { a } => {
                let ga = slot(grads, *a, g.len());
                ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
            }
            Op::Sum { a } => {
                let na = self.nodes[a.0].value.numel();
                let ga = slot(grads, *a, na);
                ga.iter_mut().for_each(|x| *x += g[0]);
            }
            Op::Attention { qkv, layout, probs } => {
                let x = self.nodes[qkv.0].value.data();
                let cols = self.nodes[qkv.0].value.as_matrix_dims().1;
                let gx = slot(grads, *qkv, x.len());
                attention_backward(x, cols, *layout, probs, g, gx);
            }
            Op::CrossEntropy { logits, targets, pad_id, count, probs } => {
                let vocab = self.nodes[logits.0].value.as_matrix_dims().1;
                let nl = self.nodes[logits.0].value.numel();
                let gl = slot(grads, *logits, nl);
                let w = g[0] / *count as f32;
                for (r, &tgt) in targets.iter().enumerate() {
                    if tgt == *pad_id {
                        continue;
                    }
                    let grow = &mut gl[r * vocab..(r + 1) * vocab];
                    for (j, p) in probs[r * vocab..(r + 1) * vocab].iter().enumerate() {
                        grow[j] += w * p;
                    }
                    grow[tgt] -= w;
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f32>>], v: Var, len: usize) -> &mut [f32] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn attention_backward(x: &[f32], cols: usize, layout: AttentionLayout, probs: &[f32], g: &[f32], gx: &mut [f32]) {
    let AttentionLayout { batch, seq, heads, causal } = layout;
    let width = cols / 3;
    let hd = width / heads;
    let scale = 1.0 / (hd as f32).sqrt();
    let mut dp = vec![0.0f32; seq];
    for b in 0..batch {
        for h in 0..heads {
            let pbase = (b * heads + h) * seq * seq;
            for t in 0..seq {
                let span = if causal { t + 1 } else { seq };
                let prow = &probs[pbase + t * seq..][..span];
                let grow = &g[(b * seq + t) * width + h * hd..][..hd];
                for s in 0..span {
                    let vrow = &x[(b * seq + s) * cols + 2 * width + h * hd..][..hd];
                    dp[s] = dot(grow, vrow);
                    let gv = &mut gx[(b * seq + s) * cols + 2 * width + h * hd..][..hd];
                    gv.iter_mut().zip(grow).for_each(|(o, &y)| *o += prow[s] * y);
                }
                let inner = dot(&dp[..span], prow);
                for s in 0..span {
                    let ds = prow[s] * (dp[s] - inner) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let (qi, ki) = ((b * seq + t) * cols + h * hd, (b * seq + s) * cols + width + h * hd);
                    for j in 0..hd {
                        gx[qi + j] += ds * x[ki + j];
                        gx[ki + j] += ds * x[qi + j];
                    }
                }
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `tanh` via one `exp`; several times cheaper than libm's `tanhf`.
#[inline]
fn fast_tanh(u: f32) -> f32 {
    let e = (-2.0 * u.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(u)
}

#[inline]
fn gelu_tanh(x: f32) -> f32 {
    fast_tanh(GELU_C * (x + GELU_K * x * x * x))
}

pub(crate) fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + gelu_tanh(x))
}

fn gelu_grad(x: f32, t: f32) -> f32 {
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut z = 0.0f32;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        z += *x;
    }
    let inv = 1.0 / z;
    row.iter_mut().for_each(|x| *x *= inv);
}

/// In-place row standardization; returns the reciprocal standard deviation.
pub(crate) fn normalize_row(row: &mut [f32]) -> f32 {
    let n = row.len() as f32;
    let mean = row.iter().sum::<f32>() / n;
    let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f32>() / n;
    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    row.iter_mut().for_each(|x| *x = (*x - mean) * inv);
    inv
}

/// `c = a @ b + beta * c` with explicit (row, col) strides for `a` and `b`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_strides: (isize, isize),
    b: &[f32],
    b_strides: (isize, isize),
    c: &mut [f32],
    beta: f32,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserts above bound every index sgemm touches, given that
    // the strides describe an m×k and k×n view of dense buffers of that size.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(tape: &mut Tape, r: usize, c: usize, d: &[f32], grad: bool) -> Var {
        tape.leaf(Tensor::new(vec![r, c], d.to_vec()).unwrap().with_grad(grad))
    }

    #[test]
    fn matmul_by_identity() {
        let mut t = Tape::new();
        let a = mat(&mut t, 2, 2, &[1.0, 2.0, 3.0, 4.0], false);
        let i = mat(&mut t, 2, 2, &[1.0, 0.0, 0.0, 1.0], false);
        let y = t.apply(OpKind::MatMul, &[a, i]).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = mat(&mut t, 2, 3, &[0.0; 6], false);
        let b = mat(&mut t, 2, 2, &[0.0; 4], false);
        let err = t.matmul(a, b).unwrap_err();
        assert_eq!(err, AutodiffError::ShapeMismatch { op: "matmul", lhs: vec![2, 3], rhs: vec![2, 2] });
        assert!(err.to_string().contains("[2, 3]") && err.to_string().contains("[2, 2]"));
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![0.0; 3]));
        let y = t.softmax(x);
        for &p in t.value(y).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![5.0; 4]));
        let y = t.layer_norm(x);
        assert!(t.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_logits_give_ln_vocab() {
        let mut t = Tape::new();
        let l = mat(&mut t, 2, 4, &[0.5; 8], false);
        let loss = t.cross_entropy(l, &[1, 3], 0).unwrap();
        assert!((t.value(loss).data()[0] - 4f32.ln()).abs() < 1e-6);
    }

    #[test]
    fn confident_correct_logits_give_near_zero_loss() {
        let mut t = Tape::new();
        let l = mat(&mut t, 1, 3, &[0.0, 80.0, 0.0], false);
        let loss = t.cross_entropy(l, &[1], 0).unwrap();
        assert!(t.value(loss).data()[0] < 1e-6);
    }

    #[test]
    fn pad_rows_are_ignored_and_all_pad_is_an_error() {
        let mut t = Tape::new();
        let l = mat(&mut t, 2, 3, &[0.0, 1.0, 2.0, 9.0, -9.0, 0.0], false);
        let one = t.cross_entropy(l, &[2, 0], 0).unwrap();
        let l2 = mat(&mut t, 1, 3, &[0.0, 1.0, 2.0], false);
        let only = t.cross_entropy(l2, &[2], 0).unwrap();
        assert_eq!(t.value(one).data(), t.value(only).data());
        assert_eq!(t.cross_entropy(l, &[0, 0], 0).unwrap_err(), AutodiffError::NoSupervisedPositions);
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_self_dot() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0]));
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_twice_doubles_gradients() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0]));
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq);
        t.backward(s).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[4.0, 8.0]);
        t.zero_grad();
        assert!(t.grad(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0]));
        let y = t.relu(x);
        assert!(matches!(t.backward(y), Err(AutodiffError::NonScalarLoss { .. })));
    }

    #[test]
    fn causal_attention_first_row_copies_first_value() {
        // With one visible key, the output is that key's value row.
        let mut t = Tape::new();
        let qkv = mat(&mut t, 2, 6, &[0.3, 0.1, 0.2, 0.4, 7.0, 8.0, 1.0, 1.0, 1.0, 1.0, 5.0, 6.0], false);
        let layout = AttentionLayout { batch: 1, seq: 2, heads: 1, causal: true };
        let o = t.attention(qkv, layout).unwrap();
        assert_eq!(&t.value(o).data()[..2], &[7.0, 8.0]);
    }
}
