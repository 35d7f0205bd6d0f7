//! Straightforward reimplementations of the caption metrics, keyed on joined
//! n-gram strings, for cross-checking the library.

use std::collections::{BTreeMap, BTreeSet};

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn grams(w: &[String], n: usize) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for i in 0..(w.len() + 1).saturating_sub(n) {
        *m.entry(w[i..i + n].join(" ")).or_insert(0) += 1;
    }
    m
}

pub fn bleu(cands: &[Vec<String>], refs: &[Vec<Vec<String>>], max_n: usize) -> f64 {
    let mut c_len = 0.0;
    let mut r_len = 0.0;
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (mut hit, mut all) = (0.0, 0.0);
        for (c, rs) in cands.iter().zip(refs) {
            for (g, k) in grams(c, n) {
                let cap = rs.iter().map(|r| grams(r, n).get(&g).copied().unwrap_or(0)).max().unwrap_or(0);
                hit += k.min(cap) as f64;
                all += k as f64;
            }
        }
        if hit == 0.0 {
            return 0.0;
        }
        log_sum += (hit / all as f64).ln();
    }
    for (c, rs) in cands.iter().zip(refs) {
        c_len += c.len() as f64;
        let mut lens: Vec<usize> = rs.iter().map(Vec::len).collect();
        lens.sort();
        let best = lens.iter().copied().min_by_key(|&l| (l as i64 - c.len() as i64).abs()).unwrap();
        r_len += best as f64;
    }
    let bp = if c_len > r_len { 1.0 } else { (1.0 - r_len / c_len).exp() };
    bp * (log_sum / max_n as f64).exp()
}

fn lcs_table(a: &[String], b: &[String]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] { t[i - 1][j - 1] + 1 } else { t[i - 1][j].max(t[i][j - 1]) };
        }
    }
    t[a.len()][b.len()]
}

pub fn rouge_l(c: &[String], refs: &[Vec<String>], beta: f64) -> f64 {
    let p = refs.iter().map(|r| lcs_table(c, r) as f64 / c.len() as f64).fold(0.0, f64::max);
    let r = refs.iter().map(|r| lcs_table(c, r) as f64 / r.len() as f64).fold(0.0, f64::max);
    if p == 0.0 || r == 0.0 {
        return 0.0;
    }
    (1.0 + beta * beta) * p * r / (r + beta * beta * p)
}

/// Plain CIDEr per candidate, document frequency over all reference sets.
pub fn cider(cands: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Vec<f64> {
    let n_docs = refs.len() as f64;
    let df = |g: &str, n: usize| -> f64 {
        refs.iter().filter(|rs| rs.iter().any(|r| grams(r, n).contains_key(g))).count().max(1) as f64
    };
    let vec_of = |w: &[String], n: usize| -> BTreeMap<String, f64> {
        grams(w, n).into_iter().map(|(g, k)| { let d = df(&g, n); (g, k as f64 * (n_docs / d).ln()) }).collect()
    };
    let cos = |a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>| -> f64 {
        let keys: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
        let dot: f64 = keys.iter().map(|k| a.get(*k).unwrap_or(&0.0) * b.get(*k).unwrap_or(&0.0)).sum();
        let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb) }
    };
    cands
        .iter()
        .zip(refs)
        .map(|(c, rs)| {
            let per_n: Vec<f64> = (1..=4)
                .map(|n| {
                    let vc = vec_of(c, n);
                    rs.iter().map(|r| cos(&vc, &vec_of(r, n))).sum::<f64>() / rs.len() as f64
                })
                .collect();
            10.0 * per_n.iter().sum::<f64>() / 4.0
        })
        .collect()
}

/// Three candidates with five references each.
pub fn toy_set() -> (Vec<Vec<String>>, Vec<Vec<Vec<String>>>) {
    let cands = ["a red cube sits left of a blue ball", "the small green cone", "two yellow rings near a large box"];
    let refs = [
        [
            "a red cube is left of a blue ball",
            "the red cube sits beside a blue sphere",
            "a blue ball right of a red cube",
            "red cube and blue ball",
            "a cube that is red sits left of a ball",
        ],
        [
            "a small green cone",
            "the green cone is small",
            "one small cone colored green",
            "a tiny green cone stands alone",
            "small green cone on the floor",
        ],
        [
            "two yellow rings lie near a large box",
            "a large box with two yellow rings nearby",
            "yellow rings near the big box",
            "two rings beside a large box",
            "near a large box are two yellow rings",
        ],
    ];
    (
        cands.iter().map(|s| words(s)).collect(),
        refs.iter().map(|rs| rs.iter().map(|s| words(s)).collect()).collect(),
    )
}
