// Caption metrics over whitespace tokens.
//
// BLEU:    corpus level, clipped n-gram precision, geometric mean over n, brevity
//          penalty against the closest reference length (shorter on ties); any
//          zero precision yields 0 (no smoothing).
// ROUGE-L: per caption, F-measure with beta = 1.2 from the best LCS precision and
//          best LCS recall across references; corpus score is the mean.
// CIDEr:   plain CIDEr (no clipping, no length penalty). Per n, tf-idf vectors with
//          document frequency counted over the reference sets of all samples;
//          cosine against each reference, averaged over references, averaged
//          over n = 1..4, times 10. Corpus score is the mean.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::world::{marker_style, parse_caption, Attributes};

pub const ROUGE_BETA: f64 = 1.2;
pub const CIDER_MAX_N: usize = 4;

type Counts<'a> = HashMap<&'a [String], usize>;

fn ngrams(words: &[String], n: usize) -> Counts<'_> {
    let mut m = HashMap::new();
    if words.len() >= n {
        for w in words.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU with n-grams up to `max_n`.
pub fn corpus_bleu(candidates: &[Vec<String>], references: &[Vec<Vec<String>>], max_n: usize) -> f64 {
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (c, refs) in candidates.iter().zip(references) {
        cand_len += c.len();
        ref_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(c.len()), l))
            .unwrap_or(0);
        for n in 1..=max_n {
            let cc = ngrams(c, n);
            let mut best: HashMap<&[String], usize> = HashMap::new();
            for r in refs {
                for (g, k) in ngrams(r, n) {
                    let e = best.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
            totals[n - 1] += cc.values().sum::<usize>();
            matches[n - 1] += cc.iter().map(|(g, &k)| k.min(best.get(g).copied().unwrap_or(0))).sum::<usize>();
        }
    }
    if cand_len == 0 || (0..max_n).any(|i| matches[i] == 0 || totals[i] == 0) {
        return 0.0;
    }
    let log_p: f64 = (0..max_n).map(|i| (matches[i] as f64 / totals[i] as f64).ln()).sum::<f64>() / max_n as f64;
    let bp = if cand_len >= ref_len { 1.0 } else { (1.0 - ref_len as f64 / cand_len as f64).exp() };
    bp * log_p.exp()
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(candidate: &[String], references: &[Vec<String>]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let (mut p, mut r) = (0.0f64, 0.0f64);
    for reference in references.iter().filter(|x| !x.is_empty()) {
        let l = lcs(candidate, reference) as f64;
        p = p.max(l / candidate.len() as f64);
        r = r.max(l / reference.len() as f64);
    }
    if p == 0.0 || r == 0.0 {
        return 0.0;
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Per-sample CIDEr scores.
pub fn cider(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Vec<f64> {
    let docs = references.len() as f64;
    let log_docs = docs.max(1.0).ln();
    let mut df: Vec<HashMap<&[String], usize>> = vec![HashMap::new(); CIDER_MAX_N];
    for refs in references {
        for (n, table) in df.iter_mut().enumerate() {
            let mut seen: HashMap<&[String], ()> = HashMap::new();
            for r in refs {
                for g in ngrams(r, n + 1).into_keys() {
                    seen.insert(g, ());
                }
            }
            for g in seen.into_keys() {
                *table.entry(g).or_insert(0) += 1;
            }
        }
    }
    // Ordered maps keep float summation order, and so the scores, identical across processes.
    let weigh = |counts: Counts<'_>, n: usize| -> BTreeMap<Vec<String>, f64> {
        counts
            .into_iter()
            .map(|(g, k)| {
                let d = df[n].get(g).copied().unwrap_or(0).max(1) as f64;
                (g.to_vec(), k as f64 * (log_docs - d.ln()))
            })
            .collect()
    };
    let norm = |v: &BTreeMap<Vec<String>, f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
    candidates
        .iter()
        .zip(references)
        .map(|(c, refs)| {
            if refs.is_empty() {
                return 0.0;
            }
            let mut total = 0.0;
            for n in 0..CIDER_MAX_N {
                let vc = weigh(ngrams(c, n + 1), n);
                let nc = norm(&vc);
                let mut acc = 0.0;
                for r in refs {
                    let vr = weigh(ngrams(r, n + 1), n);
                    let nr = norm(&vr);
                    if nc > 0.0 && nr > 0.0 {
                        let dot: f64 = vc.iter().map(|(g, x)| x * vr.get(g).copied().unwrap_or(0.0)).sum();
                        acc += dot / (nc * nr);
                    }
                }
                total += acc / refs.len() as f64;
            }
            10.0 * total / CIDER_MAX_N as f64
        })
        .collect()
}

/// One generated caption with its references and ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
    pub truth: Attributes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: String,
    pub caption: String,
    pub attributes_correct: bool,
    pub style_marker: bool,
    pub rouge_l: f64,
    pub cider: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bleu1: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub attribute_accuracy: f64,
    pub style_marker_rate: f64,
    pub samples: Vec<SampleScore>,
    pub fingerprint: String,
}

pub const METRIC_NAMES: [&str; 6] = ["bleu1", "bleu4", "rouge_l", "cider", "attribute_accuracy", "style_marker_rate"];

impl MetricsReport {
    pub fn get(&self, metric: &str) -> Option<f64> {
        Some(match metric {
            "bleu1" => self.bleu1,
            "bleu4" => self.bleu4,
            "rouge_l" => self.rouge_l,
            "cider" => self.cider,
            "attribute_accuracy" => self.attribute_accuracy,
            "style_marker_rate" => self.style_marker_rate,
            _ => return None,
        })
    }

    pub fn values(&self) -> [(&'static str, f64); 6] {
        METRIC_NAMES.map(|m| (m, self.get(m).unwrap_or(0.0)))
    }
}

pub fn compute_metrics(samples: &[Sample], fingerprint: &str) -> Result<MetricsReport, EvalError> {
    let missing: Vec<String> = samples.iter().filter(|s| s.references.is_empty()).map(|s| s.id.clone()).collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingReferences(missing));
    }
    if samples.is_empty() {
        return Err(EvalError::InvalidConfig("no samples to score".into()));
    }
    let cands: Vec<Vec<String>> = samples.iter().map(|s| s.candidate.clone()).collect();
    let refs: Vec<Vec<Vec<String>>> = samples.iter().map(|s| s.references.clone()).collect();
    let ciders = cider(&cands, &refs);
    let scores: Vec<SampleScore> = samples
        .iter()
        .zip(&ciders)
        .map(|(s, &c)| SampleScore {
            id: s.id.clone(),
            caption: s.candidate.join(" "),
            attributes_correct: parse_caption(&s.candidate).attributes() == Some(&s.truth),
            style_marker: marker_style(&s.candidate).is_some(),
            rouge_l: rouge_l(&s.candidate, &s.references),
            cider: c,
        })
        .collect();
    let n = samples.len() as f64;
    let mean = |f: &dyn Fn(&SampleScore) -> f64| scores.iter().map(f).sum::<f64>() / n;
    Ok(MetricsReport {
        bleu1: corpus_bleu(&cands, &refs, 1),
        bleu4: corpus_bleu(&cands, &refs, 4),
        rouge_l: mean(&|s| s.rouge_l),
        cider: mean(&|s| s.cider),
        attribute_accuracy: mean(&|s| s.attributes_correct as u8 as f64),
        style_marker_rate: mean(&|s| s.style_marker as u8 as f64),
        samples: scores,
        fingerprint: fingerprint.to_string(),
    })
}
