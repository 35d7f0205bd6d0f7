//! Small generated worlds for tests.

use noisecap::encode::{GapConfig, ImageEncoder, TextEncoder, TextEncoderConfig};
use noisecap::model::{CaptionModel, ModelConfig};
use noisecap::world::{generate_corpus, Corpus, CorpusSpec, Scene, Split, Vocabulary};

pub struct World {
    pub vocab: Vocabulary,
    pub corpus: Corpus,
    pub scenes: Vec<Scene>,
    pub text: TextEncoder,
    pub image: ImageEncoder,
}

impl World {
    pub fn new(spec: &CorpusSpec, gap: GapConfig) -> World {
        let vocab = Vocabulary::from_grammar();
        let (corpus, scenes) = generate_corpus(spec, &vocab).unwrap();
        let text = TextEncoder::new(TextEncoderConfig::default(), &vocab).unwrap();
        let image = ImageEncoder::new(text.clone(), gap).unwrap();
        World { vocab, corpus, scenes, text, image }
    }

    pub fn small(n_scenes: usize) -> World {
        World::new(&CorpusSpec { n_scenes, ..Default::default() }, GapConfig::default())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig { d_embed: self.text.dim(), vocab_size: self.vocab.len(), ..Default::default() }
    }

    pub fn model(&self, seed: u64) -> CaptionModel {
        CaptionModel::new(self.model_config(), seed).unwrap()
    }

    pub fn scenes_in(&self, split: Split) -> Vec<&Scene> {
        self.scenes.iter().filter(|s| self.corpus.scene_split(s.scene_id) == Some(split)).collect()
    }
}
