//! Seeded gradient checks: tape gradients against central differences of the
//! f64 reference.

use noisecap::autodiff::{AttentionLayout, Tape, Tensor, Var};
use noisecap::model::{Activation, BatchInput, CaptionModel, MapperConfig, MapperKind, ModelConfig};
use noisecap::seeds;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::reference::{self as r, Params, M};
use super::{central_difference, grad_close};

const STEP: f64 = 1e-6;

#[derive(Debug, Default)]
pub struct GradReport {
    pub trials: usize,
    pub passed: usize,
    pub failures: Vec<String>,
}

impl GradReport {
    fn record(&mut self, label: String, problems: Vec<String>) {
        self.trials += 1;
        if problems.is_empty() {
            self.passed += 1;
        } else {
            self.failures.push(format!("{label}: {}", problems.join("; ")));
        }
    }

    pub fn merge(&mut self, other: GradReport) {
        self.trials += other.trials;
        self.passed += other.passed;
        self.failures.extend(other.failures);
    }

    pub fn all_passed(&self) -> bool {
        self.trials > 0 && self.passed == self.trials
    }
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;
type Reference = Box<dyn Fn(&[M]) -> Vec<f64>>;

struct Case {
    name: &'static str,
    shapes: Vec<Vec<usize>>,
    build: Build,
    reference: Reference,
    /// Keeps samples away from non-differentiable points.
    away_from_zero: bool,
}

fn sample(rng: &mut ChaCha8Rng, n: usize, away_from_zero: bool) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let x: f64 = rng.random_range(-1.5..1.5);
            if away_from_zero && x.abs() < 0.1 {
                x.signum() * 0.1 + x
            } else {
                x
            }
        })
        .collect()
}

fn as_m(shape: &[usize], v: &[f64]) -> M {
    let c = *shape.last().unwrap_or(&1);
    M::new(v.len() / c, c, v.to_vec())
}

fn cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let factor = rng.random_range(-2.0f32..2.0);
    let ids = vec![0usize, 2, 2, 4, 1];
    let ids2 = ids.clone();
    let targets = vec![3usize, 0, 5, 1];
    let targets2 = targets.clone();
    let attn = |causal: bool, name: &'static str| Case {
        name,
        shapes: vec![vec![6, 12]],
        build: Box::new(move |t, v| t.attention(v[0], AttentionLayout { batch: 2, seq: 3, heads: 2, causal }).unwrap()),
        reference: Box::new(move |m| r::attention(&m[0], 2, 3, 2, causal).v),
        away_from_zero: false,
    };
    vec![
        Case {
            name: "matmul",
            shapes: vec![vec![3, 4], vec![4, 5]],
            build: Box::new(|t, v| t.matmul(v[0], v[1]).unwrap()),
            reference: Box::new(|m| r::matmul(&m[0], &m[1]).v),
            away_from_zero: false,
        },
        Case {
            name: "add",
            shapes: vec![vec![3, 4], vec![3, 4]],
            build: Box::new(|t, v| t.add(v[0], v[1]).unwrap()),
            reference: Box::new(|m| r::add(&m[0], &m[1]).v),
            away_from_zero: false,
        },
        Case {
            name: "add_broadcast",
            shapes: vec![vec![3, 4], vec![4]],
            build: Box::new(|t, v| t.add(v[0], v[1]).unwrap()),
            reference: Box::new(|m| r::add_row(&m[0], &m[1].v).v),
            away_from_zero: false,
        },
        Case {
            name: "mul",
            shapes: vec![vec![3, 4], vec![3, 4]],
            build: Box::new(|t, v| t.mul(v[0], v[1]).unwrap()),
            reference: Box::new(|m| m[0].v.iter().zip(&m[1].v).map(|(a, b)| a * b).collect()),
            away_from_zero: false,
        },
        Case {
            name: "mul_broadcast",
            shapes: vec![vec![3, 4], vec![4]],
            build: Box::new(|t, v| t.mul(v[0], v[1]).unwrap()),
            reference: Box::new(|m| r::mul_row(&m[0], &m[1].v).v),
            away_from_zero: false,
        },
        Case {
            name: "scale",
            shapes: vec![vec![2, 5]],
            build: Box::new(move |t, v| t.scale(v[0], factor)),
            reference: Box::new(move |m| m[0].v.iter().map(|x| x * factor as f64).collect()),
            away_from_zero: false,
        },
        Case {
            name: "relu",
            shapes: vec![vec![3, 5]],
            build: Box::new(|t, v| t.relu(v[0])),
            reference: Box::new(|m| r::map(&m[0], r::relu).v),
            away_from_zero: true,
        },
        Case {
            name: "gelu",
            shapes: vec![vec![3, 5]],
            build: Box::new(|t, v| t.gelu(v[0])),
            reference: Box::new(|m| r::map(&m[0], r::gelu).v),
            away_from_zero: false,
        },
        Case {
            name: "softmax",
            shapes: vec![vec![3, 5]],
            build: Box::new(|t, v| t.softmax(v[0])),
            reference: Box::new(|m| r::softmax_rows(&m[0]).v),
            away_from_zero: false,
        },
        Case {
            name: "layer_norm",
            shapes: vec![vec![3, 6]],
            build: Box::new(|t, v| t.layer_norm(v[0])),
            reference: Box::new(|m| r::layer_norm(&m[0]).v),
            away_from_zero: false,
        },
        Case {
            name: "gather_rows",
            shapes: vec![vec![5, 3]],
            build: Box::new(move |t, v| t.gather_rows(v[0], &ids).unwrap()),
            reference: Box::new(move |m| m[0].rows(ids2.iter().copied()).v),
            away_from_zero: false,
        },
        Case {
            name: "concat_rows",
            shapes: vec![vec![2, 3], vec![3, 3]],
            build: Box::new(|t, v| t.concat_rows(&[v[0], v[1]]).unwrap()),
            reference: Box::new(|m| m[0].v.iter().chain(&m[1].v).copied().collect()),
            away_from_zero: false,
        },
        Case {
            name: "slice_rows",
            shapes: vec![vec![5, 3]],
            build: Box::new(|t, v| t.slice_rows(v[0], 1, 3).unwrap()),
            reference: Box::new(|m| m[0].rows(1..4).v),
            away_from_zero: false,
        },
        Case {
            name: "reshape",
            shapes: vec![vec![2, 6]],
            build: Box::new(|t, v| t.reshape(v[0], vec![3, 4]).unwrap()),
            reference: Box::new(|m| m[0].v.clone()),
            away_from_zero: false,
        },
        Case {
            name: "sum",
            shapes: vec![vec![3, 4]],
            build: Box::new(|t, v| t.sum(v[0])),
            reference: Box::new(|m| vec![m[0].v.iter().sum()]),
            away_from_zero: false,
        },
        attn(true, "attention_causal"),
        attn(false, "attention_bidirectional"),
        Case {
            name: "cross_entropy",
            shapes: vec![vec![4, 6]],
            build: Box::new(move |t, v| t.cross_entropy(v[0], &targets, 0).unwrap()),
            reference: Box::new(move |m| vec![r::cross_entropy(&m[0], &targets2, 0)]),
            away_from_zero: false,
        },
    ]
}

fn check_case(case: &Case, rng: &mut ChaCha8Rng) -> Vec<String> {
    let inputs: Vec<Vec<f64>> = case.shapes.iter().map(|s| sample(rng, s.iter().product(), case.away_from_zero)).collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = case
        .shapes
        .iter()
        .zip(&inputs)
        .map(|(s, x)| tape.param(Tensor::new(s.clone(), x.iter().map(|&v| v as f32).collect()).unwrap()))
        .collect();
    let out = (case.build)(&mut tape, &vars);
    let out_value = tape.value(out).clone();
    let weights = sample(rng, out_value.numel(), false);
    let w = tape.leaf(Tensor::new(out_value.shape().to_vec(), weights.iter().map(|&x| x as f32).collect()).unwrap());
    let prod = tape.mul(out, w).unwrap();
    let loss = tape.sum(prod);
    tape.backward(loss).unwrap();

    let shapes = case.shapes.clone();
    let sizes: Vec<usize> = inputs.iter().map(Vec::len).collect();
    let split = |flat: &[f64]| -> Vec<M> {
        let mut at = 0;
        shapes
            .iter()
            .zip(&sizes)
            .map(|(s, &n)| {
                let m = as_m(s, &flat[at..at + n]);
                at += n;
                m
            })
            .collect()
    };
    let f = |flat: &[f64]| -> f64 { (case.reference)(&split(flat)).iter().zip(&weights).map(|(a, b)| a * b).sum() };
    let flat: Vec<f64> = inputs.concat();

    let mut problems = Vec::new();
    let expected = (case.reference)(&split(&flat));
    for (i, (&a, &b)) in out_value.data().iter().zip(&expected).enumerate() {
        if (a as f64 - b).abs() > 1e-4 * (1.0 + b.abs()) {
            problems.push(format!("forward[{i}] {a} vs {b}"));
        }
    }
    let mut at = 0;
    for (v, &n) in vars.iter().zip(&sizes) {
        let g = tape.grad(*v).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        for (j, &a) in g.iter().enumerate() {
            let num = central_difference(&f, &flat, at + j, STEP);
            if !grad_close(a as f64, num) {
                problems.push(format!("input {at}+{j}: analytic {a} numeric {num}"));
            }
        }
        at += n;
    }
    problems
}

/// Every primitive, `trials_per_op` times each with fresh random inputs.
pub fn primitive_suite(trials_per_op: usize, seed: u64) -> GradReport {
    let mut report = GradReport::default();
    for trial in 0..trials_per_op {
        let mut rng = seeds::stream(seed, "gradcheck-primitive", trial as u64);
        for case in cases(&mut rng) {
            let problems = check_case(&case, &mut rng);
            report.record(format!("{} trial {trial}", case.name), problems);
        }
    }
    report
}

pub fn small_model_config(kind: MapperKind, activation: Activation) -> ModelConfig {
    ModelConfig {
        d_embed: 6,
        d_model: 8,
        prefix_len: 2,
        n_layers: 2,
        n_heads: 2,
        ffn_mult: 2,
        vocab_size: 9,
        max_seq_len: 6,
        mapper: MapperConfig { kind, hidden: 10, activation, layers: 1 },
        init_std: 0.3,
    }
}

/// Full teacher-forced loss of the model; one coordinate of every parameter
/// tensor is checked per trial.
pub fn model_suite(trials: usize, seed: u64) -> GradReport {
    let mut report = GradReport::default();
    for trial in 0..trials {
        let mut rng = seeds::stream(seed, "gradcheck-model", trial as u64);
        let kind = if trial % 2 == 0 { MapperKind::Mlp } else { MapperKind::Transformer };
        let act = if trial % 4 < 2 { Activation::Relu } else { Activation::Gelu };
        let cfg = small_model_config(kind, act);
        let mut model = CaptionModel::new(cfg.clone(), seed ^ trial as u64).unwrap();
        for t in &mut model.params.tensors {
            for x in t.data_mut() {
                *x += rng.random_range(-0.3f32..0.3);
            }
        }
        let emb: Vec<f32> = (0..2 * cfg.d_embed).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let seqs: Vec<Vec<usize>> = [cfg.max_seq_len, 3]
            .iter()
            .map(|&len| std::iter::once(1).chain((1..len).map(|_| rng.random_range(2..cfg.vocab_size))).collect())
            .collect();

        let mut tape = Tape::new();
        let (loss, out) = model.batch_loss(&mut tape, &BatchInput { embeddings: &emb, sequences: &seqs }).unwrap();
        tape.backward(loss).unwrap();
        let tape_loss = tape.value(loss).data()[0] as f64;

        let embs: Vec<Vec<f64>> = emb.chunks(cfg.d_embed).map(|c| c.iter().map(|&x| x as f64).collect()).collect();
        let mut params = Params::from_model(&model);
        let ref_loss = r::batch_loss(&cfg, &params, &embs, &seqs, 0);
        let mut problems = Vec::new();
        if (tape_loss - ref_loss).abs() > 1e-4 * (1.0 + ref_loss.abs()) {
            problems.push(format!("loss {tape_loss} vs reference {ref_loss}"));
        }
        for (pi, name) in model.params.names.iter().enumerate() {
            let n = model.params.tensors[pi].numel();
            let j = rng.random_range(0..n);
            let analytic = tape.grad(out.params[pi]).map_or(0.0, |g| g[j] as f64);
            let base = params.map[name].v[j];
            let mut eval = |x: f64| {
                params.map.get_mut(name).unwrap().v[j] = x;
                r::batch_loss(&cfg, &params, &embs, &seqs, 0)
            };
            let numeric = (eval(base + STEP) - eval(base - STEP)) / (2.0 * STEP);
            eval(base);
            if !grad_close(analytic, numeric) {
                problems.push(format!("{name}[{j}]: analytic {analytic} numeric {numeric}"));
            }
        }
        report.record(format!("model {kind:?}/{act:?} trial {trial}"), problems);
    }
    report
}
