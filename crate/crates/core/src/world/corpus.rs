use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grammar::{self, capacity, paraphrase_at};
use super::scene::{Relation, Scene, SceneObject, Style};
use super::vocab::{TokenId, Vocabulary};
use super::WorldError;
use crate::seeds;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn is_eval(self) -> bool {
        self != Split::Train
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Caption {
    pub scene_id: u64,
    pub split: Split,
    pub style: Style,
    pub text: String,
    pub tokens: Vec<TokenId>,
}

/// Captions grouped by scene, each scene tagged with one split.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub captions: Vec<Caption>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Caption> {
        self.captions.iter().filter(move |c| c.split == split)
    }

    /// Captions grouped by scene id (ascending).
    pub fn groups(&self) -> BTreeMap<u64, Vec<&Caption>> {
        let mut m: BTreeMap<u64, Vec<&Caption>> = BTreeMap::new();
        for c in &self.captions {
            m.entry(c.scene_id).or_default().push(c);
        }
        m
    }

    pub fn scene_split(&self, scene_id: u64) -> Option<Split> {
        self.captions.iter().find(|c| c.scene_id == scene_id).map(|c| c.split)
    }

    pub fn len(&self) -> usize {
        self.captions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.captions.is_empty()
    }
}

/// Parameters of [`generate_corpus`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub seed: u64,
    pub n_scenes: usize,
    pub captions_per_scene: usize,
    /// Captions per validation/test scene; at least 5.
    pub eval_captions_per_scene: usize,
    pub style: Style,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            seed: 7,
            n_scenes: 10000,
            captions_per_scene: 5,
            eval_captions_per_scene: 5,
            style: Style::Neutral,
            val_fraction: 0.05,
            test_fraction: 0.1,
        }
    }
}

pub const MIN_EVAL_CAPTIONS: usize = 5;

impl CorpusSpec {
    pub fn split_of(&self, index: usize) -> Split {
        let n_test = (self.n_scenes as f64 * self.test_fraction).round() as usize;
        let n_val = (self.n_scenes as f64 * self.val_fraction).round() as usize;
        let n_train = self.n_scenes.saturating_sub(n_test + n_val);
        if index < n_train {
            Split::Train
        } else if index < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

/// Scene `index` for `seed`; independent of style and caption counts.
pub fn scene_for(seed: u64, index: usize) -> Scene {
    Scene::sample(index as u64, &mut seeds::stream(seed, "scene", index as u64))
}

/// Deterministic synthetic corpus and its scenes.
pub fn generate_corpus(spec: &CorpusSpec, vocab: &Vocabulary) -> Result<(Corpus, Vec<Scene>), WorldError> {
    if spec.n_scenes == 0 {
        return Err(WorldError::InvalidSpec("n_scenes must be at least 1".into()));
    }
    if spec.captions_per_scene == 0 {
        return Err(WorldError::InvalidSpec("captions_per_scene must be at least 1".into()));
    }
    if spec.eval_captions_per_scene < MIN_EVAL_CAPTIONS {
        return Err(WorldError::InvalidSpec(format!(
            "eval_captions_per_scene must be at least {MIN_EVAL_CAPTIONS}"
        )));
    }
    let mut scenes = Vec::with_capacity(spec.n_scenes);
    let mut captions = Vec::new();
    for i in 0..spec.n_scenes {
        let scene = scene_for(spec.seed, i);
        let split = spec.split_of(i);
        let wanted = if split.is_eval() {
            spec.captions_per_scene.max(spec.eval_captions_per_scene)
        } else {
            spec.captions_per_scene
        };
        let cap = capacity(&scene, spec.style);
        if wanted as u64 > cap {
            return Err(WorldError::CapacityExceeded { scene_id: scene.scene_id, requested: wanted, capacity: cap });
        }
        let mut rng = seeds::stream(spec.seed, "caption", i as u64);
        let picks = rand::seq::index::sample(&mut rng, cap as usize, wanted);
        for idx in picks.iter() {
            let words = grammar::realize(&scene, &paraphrase_at(&scene, spec.style, idx as u64), spec.style);
            let text = words.join(" ");
            let tokens = vocab.tokenize(&text)?;
            captions.push(Caption { scene_id: scene.scene_id, split, style: spec.style, text, tokens });
        }
        scenes.push(scene);
    }
    Ok((Corpus { captions }, scenes))
}

#[derive(Serialize, Deserialize)]
struct CaptionRecord {
    scene_id: u64,
    split: Split,
    style: Style,
    text: String,
}

/// Scene line in the scenes file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: u64,
    pub split: Split,
    pub objects: Vec<SceneObject>,
    pub relation: Option<Relation>,
}

impl SceneRecord {
    pub fn scene(&self) -> Scene {
        Scene { scene_id: self.scene_id, objects: self.objects.clone(), relation: self.relation }
    }
}

fn write_lines<T: Serialize>(path: &Path, items: impl Iterator<Item = T>) -> Result<(), WorldError> {
    let mut w = BufWriter::new(File::create(path)?);
    for it in items {
        serde_json::to_writer(&mut w, &it)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<(), WorldError> {
    write_lines(
        path,
        corpus.captions.iter().map(|c| CaptionRecord {
            scene_id: c.scene_id,
            split: c.split,
            style: c.style,
            text: c.text.clone(),
        }),
    )
}

pub fn read_corpus(path: &Path, vocab: &Vocabulary) -> Result<Corpus, WorldError> {
    let r = BufReader::new(File::open(path)?);
    let mut captions = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CaptionRecord =
            serde_json::from_str(&line).map_err(|e| WorldError::Record { line: n + 1, message: e.to_string() })?;
        let tokens = vocab.tokenize(&rec.text)?;
        captions.push(Caption { scene_id: rec.scene_id, split: rec.split, style: rec.style, text: rec.text, tokens });
    }
    Ok(Corpus { captions })
}

pub fn write_scenes(scenes: &[Scene], corpus: &Corpus, path: &Path) -> Result<(), WorldError> {
    let splits: BTreeMap<u64, Split> = corpus.captions.iter().map(|c| (c.scene_id, c.split)).collect();
    write_lines(
        path,
        scenes.iter().map(|s| SceneRecord {
            scene_id: s.scene_id,
            split: splits.get(&s.scene_id).copied().unwrap_or(Split::Train),
            objects: s.objects.clone(),
            relation: s.relation,
        }),
    )
}

pub fn read_scenes(path: &Path) -> Result<Vec<SceneRecord>, WorldError> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SceneRecord =
            serde_json::from_str(&line).map_err(|e| WorldError::Record { line: n + 1, message: e.to_string() })?;
        if !rec.scene().is_valid() {
            return Err(WorldError::Record { line: n + 1, message: "scene violates attribute invariants".into() });
        }
        out.push(rec);
    }
    Ok(out)
}
