use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::encode::{Embedding, TextEncoder};
use crate::world::Caption;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSource {
    Estimated,
    Fixed,
}

/// Standard deviation of the Gaussian noise added to conditioning embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub epsilon: f32,
    pub source: NoiseSource,
    /// Selects the RNG stream noise is drawn from.
    pub stream: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { epsilon: 0.0, source: NoiseSource::Estimated, stream: 0 }
    }
}

impl NoiseConfig {
    pub fn fixed(epsilon: f32) -> Self {
        NoiseConfig { epsilon, source: NoiseSource::Fixed, stream: 0 }
    }

    pub fn variance(&self) -> f32 {
        self.epsilon * self.epsilon
    }
}

/// Mean L-infinity norm over all unordered within-group pairs of vectors,
/// averaged across every pair of every group.
pub fn epsilon_from_embeddings(groups: &[Vec<Vec<f32>>]) -> Result<f64, TrainError> {
    if groups.is_empty() {
        return Err(TrainError::InvalidConfig("no caption groups".into()));
    }
    let mut total = 0.0f64;
    let mut pairs = 0usize;
    for (gi, g) in groups.iter().enumerate() {
        if g.len() < 2 {
            return Err(TrainError::GroupTooSmall { group: gi, size: g.len() });
        }
        for i in 0..g.len() {
            for j in i + 1..g.len() {
                let linf = g[i].iter().zip(&g[j]).fold(0.0f64, |m, (&a, &b)| m.max((a as f64 - b as f64).abs()));
                total += linf;
                pairs += 1;
            }
        }
    }
    Ok(total / pairs as f64)
}

/// Encodes each caption group and returns the pairwise ε estimate.
pub fn estimate_epsilon(groups: &[Vec<&Caption>], encoder: &TextEncoder) -> Result<f64, TrainError> {
    let mut embedded = Vec::with_capacity(groups.len());
    for g in groups {
        let mut vs = Vec::with_capacity(g.len());
        for c in g {
            vs.push(encoder.encode_text(c)?.values);
        }
        embedded.push(vs);
    }
    epsilon_from_embeddings(&embedded)
}

/// Adds i.i.d. `N(0, epsilon^2)` to every coordinate without renormalizing.
/// `epsilon == 0` returns the input unchanged and draws nothing.
pub fn inject_noise<R: Rng + ?Sized>(embedding: &Embedding, epsilon: f32, rng: &mut R) -> Embedding {
    if epsilon == 0.0 {
        return embedding.clone();
    }
    let values = embedding.values.iter().map(|&v| v + epsilon * rng.sample::<f32, _>(StandardNormal)).collect();
    Embedding { values, normalized: false }
}

pub(crate) fn add_noise_in_place<R: Rng + ?Sized>(values: &mut [f32], epsilon: f32, rng: &mut R) {
    if epsilon != 0.0 {
        values.iter_mut().for_each(|v| *v += epsilon * rng.sample::<f32, _>(StandardNormal));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;

    #[test]
    fn identical_group_is_zero() {
        let v = vec![0.1f32, -0.2, 0.3];
        assert_eq!(epsilon_from_embeddings(&[vec![v.clone(); 5]]).unwrap(), 0.0);
    }

    #[test]
    fn single_coordinate_pair() {
        let a = vec![0.0f32; 6];
        let mut b = a.clone();
        b[3] = 0.2;
        let e = epsilon_from_embeddings(&[vec![a, b]]).unwrap();
        assert!((e - 0.2).abs() < 1e-7);
    }

    #[test]
    fn small_group_rejected() {
        let r = epsilon_from_embeddings(&[vec![vec![0.0; 2]; 2], vec![vec![0.0; 2]]]);
        assert!(matches!(r, Err(TrainError::GroupTooSmall { group: 1, size: 1 })));
    }

    #[test]
    fn zero_noise_is_identity_and_calls_are_independent() {
        let e = Embedding { values: vec![0.5, -0.5], normalized: true };
        let mut rng = seeds::stream(1, "noise", 0);
        assert_eq!(inject_noise(&e, 0.0, &mut rng), e);
        let a = inject_noise(&e, 0.1, &mut rng);
        let b = inject_noise(&e, 0.1, &mut rng);
        assert_ne!(a, b);
    }
}
