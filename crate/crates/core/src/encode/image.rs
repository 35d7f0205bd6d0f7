use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::text::TextEncoder;
use super::{Embedding, EncodeError};
use crate::seeds;
use crate::world::grammar::{canonical_paraphrases, realize};
use crate::world::{Scene, Style};

/// Synthetic modality gap between a scene's caption centroid and its image
/// embedding: partial rotation toward a fixed direction, a constant offset,
/// and per-sample jitter, optionally followed by renormalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GapConfig {
    pub seed: u64,
    /// Target L-infinity norm of the offset vector `g`.
    pub offset_scale: f32,
    /// Slerp fraction toward the fixed direction, in `[0, 1]`.
    pub rotation_strength: f32,
    pub jitter_std: f32,
    /// Jitter lives in a fixed random subspace of this rank; 0 means every coordinate.
    pub jitter_rank: usize,
    pub renormalize: bool,
}

impl Default for GapConfig {
    fn default() -> Self {
        GapConfig { seed: 99, offset_scale: 0.12, rotation_strength: 0.25, jitter_std: 0.15, jitter_rank: 8, renormalize: true }
    }
}

impl GapConfig {
    pub fn none() -> Self {
        GapConfig { offset_scale: 0.0, rotation_strength: 0.0, jitter_std: 0.0, ..Default::default() }
    }

    /// A constant translation only; no renormalization afterwards.
    pub fn pure_offset(offset_scale: f32) -> Self {
        GapConfig { offset_scale, rotation_strength: 0.0, jitter_std: 0.0, renormalize: false, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), EncodeError> {
        let ok = self.offset_scale.is_finite()
            && self.offset_scale >= 0.0
            && (0.0..=1.0).contains(&self.rotation_strength)
            && self.jitter_std.is_finite()
            && self.jitter_std >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(EncodeError::InvalidConfig(format!("invalid gap config {self:?}")))
        }
    }
}

/// Frozen image encoder built on top of the text encoder.
#[derive(Clone, Debug)]
pub struct ImageEncoder {
    text: TextEncoder,
    gap: GapConfig,
    offset: Vec<f32>,
    direction: Vec<f32>,
    jitter_basis: Vec<Vec<f64>>,
}

/// Gap magnitudes recorded in run manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub offset_linf: f32,
    pub offset_l2: f32,
    pub rotation_strength: f32,
    pub jitter_std: f32,
}

impl ImageEncoder {
    pub fn new(text: TextEncoder, gap: GapConfig) -> Result<Self, EncodeError> {
        gap.validate()?;
        let d = text.dim();
        let mut rng = seeds::stream(gap.seed, "gap-offset", 0);
        let raw: Vec<f32> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let linf = raw.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        let offset = raw.iter().map(|v| v * gap.offset_scale / linf).collect();
        let mut rng = seeds::stream(gap.seed, "gap-direction", 0);
        let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let direction = Embedding::normalized_from_f64(&dir).values;
        let jitter_basis = if gap.jitter_rank == 0 || gap.jitter_rank >= d {
            Vec::new()
        } else {
            let mut rng = seeds::stream(gap.seed, "gap-jitter-basis", 0);
            orthonormal_basis(d, gap.jitter_rank, &mut rng)
        };
        Ok(ImageEncoder { text, gap, offset, direction, jitter_basis })
    }

    pub fn text_encoder(&self) -> &TextEncoder {
        &self.text
    }

    pub fn gap(&self) -> &GapConfig {
        &self.gap
    }

    pub fn offset(&self) -> &[f32] {
        &self.offset
    }

    pub fn report(&self) -> GapReport {
        GapReport {
            offset_linf: self.offset.iter().fold(0.0f32, |m, v| m.max(v.abs())),
            offset_l2: self.offset.iter().map(|v| v * v).sum::<f32>().sqrt(),
            rotation_strength: self.gap.rotation_strength,
            jitter_std: self.gap.jitter_std,
        }
    }

    /// Normalized mean of the scene's canonical caption embeddings.
    pub fn caption_centroid(&self, scene: &Scene) -> Result<Embedding, EncodeError> {
        let d = self.text.dim();
        let mut acc = vec![0.0f64; d];
        let paraphrases = canonical_paraphrases(scene);
        for p in &paraphrases {
            let text = realize(scene, p, Style::Neutral).join(" ");
            let e = self.text.encode_str(&text)?;
            acc.iter_mut().zip(&e.values).for_each(|(a, &v)| *a += v as f64);
        }
        Ok(Embedding::normalized_from_f64(&acc))
    }

    pub fn encode_image(&self, scene: &Scene) -> Result<Embedding, EncodeError> {
        let centroid = self.caption_centroid(scene)?;
        let g = &self.gap;
        if g.offset_scale == 0.0 && g.rotation_strength == 0.0 && g.jitter_std == 0.0 {
            return Ok(centroid);
        }
        let mut v: Vec<f64> = centroid.values.iter().map(|&x| x as f64).collect();
        if g.rotation_strength > 0.0 {
            v = slerp(&v, &self.direction, g.rotation_strength as f64);
        }
        for (x, &o) in v.iter_mut().zip(&self.offset) {
            *x += o as f64;
        }
        if g.jitter_std > 0.0 {
            let mut rng = seeds::stream(g.seed, "gap-jitter", scene.scene_id);
            if self.jitter_basis.is_empty() {
                for x in v.iter_mut() {
                    *x += rng.sample::<f64, _>(StandardNormal) * g.jitter_std as f64;
                }
            } else {
                for b in &self.jitter_basis {
                    let z = rng.sample::<f64, _>(StandardNormal) * g.jitter_std as f64;
                    v.iter_mut().zip(b).for_each(|(x, &bi)| *x += z * bi);
                }
            }
        }
        if g.renormalize {
            Ok(Embedding::normalized_from_f64(&v))
        } else {
            Ok(Embedding { values: v.iter().map(|&x| x as f32).collect(), normalized: false })
        }
    }
}

/// `rank` orthonormal vectors in `d` dimensions via Gram-Schmidt on Gaussian draws.
fn orthonormal_basis<R: Rng + ?Sized>(d: usize, rank: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rank);
    while basis.len() < rank {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

fn slerp(from: &[f64], to: &[f32], t: f64) -> Vec<f64> {
    let cos: f64 = from.iter().zip(to).map(|(a, &b)| a * b as f64).sum::<f64>().clamp(-1.0, 1.0);
    let theta = cos.acos();
    if theta.abs() < 1e-9 {
        return from.to_vec();
    }
    let s = theta.sin();
    let wa = ((1.0 - t) * theta).sin() / s;
    let wb = (t * theta).sin() / s;
    from.iter().zip(to).map(|(a, &b)| wa * a + wb * b as f64).collect()
}
