//! Independent f64 oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

pub mod cli;
pub mod fixture;
pub mod gradcheck;
pub mod metrics;
pub mod reference;

/// Gradient agreement rule: `|a - n| <= REL * max(|a|, |n|) + ABS`.
pub const GRAD_REL: f64 = 1e-3;
pub const GRAD_ABS: f64 = 1e-5;

pub fn grad_close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= GRAD_REL * analytic.abs().max(numeric.abs()) + GRAD_ABS
}

/// Central difference of `f` at `x` along coordinate `i`, in f64.
pub fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut p = x.to_vec();
    p[i] = x[i] + h;
    let up = f(&p);
    p[i] = x[i] - h;
    let down = f(&p);
    (up - down) / (2.0 * h)
}

/// Brute-force ε: mean L-infinity distance over every ordered within-group
/// pair of distinct members (each unordered pair counted twice).
pub fn epsilon_oracle(groups: &[Vec<Vec<f32>>]) -> f64 {
    let mut sum = 0.0f64;
    let mut n = 0u64;
    for g in groups {
        for a in 0..g.len() {
            for b in 0..g.len() {
                if a != b {
                    let mut m = 0.0f64;
                    for k in 0..g[a].len() {
                        m = m.max((g[a][k] as f64 - g[b][k] as f64).abs());
                    }
                    sum += m;
                    n += 1;
                }
            }
        }
    }
    sum / n as f64
}

/// Library ε against the brute-force oracle on `sets` random group sets, plus
/// the identical-members case. Returns the worst absolute error.
pub fn check_epsilon(sets: usize, seed: u64) -> Result<f64, String> {
    use rand::Rng;
    let mut worst = 0.0f64;
    for s in 0..sets {
        let mut rng = noisecap::seeds::stream(seed, "epsilon-oracle", s as u64);
        let dim = rng.random_range(4..24);
        let groups: Vec<Vec<Vec<f32>>> = (0..rng.random_range(1..8))
            .map(|_| (0..rng.random_range(2..7)).map(|_| (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()).collect())
            .collect();
        let got = noisecap::train::epsilon_from_embeddings(&groups).map_err(|e| e.to_string())?;
        let want = epsilon_oracle(&groups);
        worst = worst.max((got - want).abs());
        if (got - want).abs() > 1e-7 {
            return Err(format!("set {s}: library {got} oracle {want}"));
        }
        let same: Vec<Vec<Vec<f32>>> = groups.iter().map(|g| vec![g[0].clone(); g.len()]).collect();
        let zero = noisecap::train::epsilon_from_embeddings(&same).map_err(|e| e.to_string())?;
        if zero != 0.0 {
            return Err(format!("set {s}: identical members gave {zero}"));
        }
    }
    Ok(worst)
}

/// Library metrics against the oracles on the toy set, plus the exact
/// identical and disjoint bounds. Returns the worst absolute error.
pub fn check_metrics() -> Result<f64, String> {
    use noisecap::eval::{cider, corpus_bleu, rouge_l, ROUGE_BETA};
    let (cands, refs) = metrics::toy_set();
    let mut pairs = vec![
        ("bleu1", corpus_bleu(&cands, &refs, 1), metrics::bleu(&cands, &refs, 1)),
        ("bleu4", corpus_bleu(&cands, &refs, 4), metrics::bleu(&cands, &refs, 4)),
    ];
    for (i, (c, rs)) in cands.iter().zip(&refs).enumerate() {
        pairs.push(("rouge_l", rouge_l(c, rs), metrics::rouge_l(c, rs, ROUGE_BETA)));
        pairs.push(("cider", cider(&cands, &refs)[i], metrics::cider(&cands, &refs)[i]));
    }
    let exact: Vec<Vec<String>> = refs.iter().map(|r| r[0].clone()).collect();
    let disjoint: Vec<Vec<String>> = cands.iter().map(|c| c.iter().map(|w| format!("{w}_zz")).collect()).collect();
    let bounds = [
        ("bleu1 identical", corpus_bleu(&exact, &refs, 1), 1.0),
        ("bleu4 identical", corpus_bleu(&exact, &refs, 4), 1.0),
        ("rouge_l identical", rouge_l(&exact[0], &refs[0]), 1.0),
        ("bleu1 disjoint", corpus_bleu(&disjoint, &refs, 1), 0.0),
        ("bleu4 disjoint", corpus_bleu(&disjoint, &refs, 4), 0.0),
        ("rouge_l disjoint", rouge_l(&disjoint[0], &refs[0]), 0.0),
        ("cider disjoint", cider(&disjoint, &refs).iter().sum(), 0.0),
    ];
    for (name, got, want) in bounds {
        if got != want {
            return Err(format!("{name}: {got}, expected exactly {want}"));
        }
    }
    let mut worst = 0.0f64;
    for (name, got, want) in pairs {
        worst = worst.max((got - want).abs());
        if (got - want).abs() > 1e-6 || !got.is_finite() {
            return Err(format!("{name}: library {got} oracle {want}"));
        }
    }
    Ok(worst)
}
