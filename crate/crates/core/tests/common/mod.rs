#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use transzero::backends::{Backends, Logged};
use transzero::mtp::{Direction, LanguageTag, LengthGate, SearchConfig, Sentence};
use transzero::synthlab::{LabBackend, SyntheticWorld, ToyTranslator};

pub fn syn(k: usize) -> LanguageTag {
    LanguageTag::synthetic(k)
}

pub fn dir(a: usize, b: usize) -> Direction {
    Direction::new(syn(a), syn(b)).unwrap()
}

pub fn lab_config(languages: usize) -> SearchConfig {
    SearchConfig {
        languages: (0..languages).map(syn).collect(),
        length_gate: LengthGate::new(1, 1_000_000),
        ..SearchConfig::default()
    }
}

pub struct Lab {
    pub world: Arc<SyntheticWorld>,
    pub model: Arc<ToyTranslator>,
    pub logged: Arc<Logged<LabBackend>>,
    pub backends: Backends,
}

impl Lab {
    pub fn new(world: SyntheticWorld, model: ToyTranslator) -> Self {
        let world = Arc::new(world);
        let model = Arc::new(model);
        let logged = Arc::new(Logged::new(LabBackend::new(world.clone(), model.clone())));
        let backends = Backends::from_shared(logged.clone());
        Self { world, model, logged, backends }
    }

    /// Every direction at the same accuracy.
    pub fn uniform(languages: usize, vocab: usize, seed: u64, accuracy: f64) -> Self {
        let world = SyntheticWorld::generate(languages, vocab, seed).unwrap();
        let model = ToyTranslator::with_accuracy(&world, |_, _| accuracy, 2.0);
        Self::new(world, model)
    }

    pub fn sentence<R: Rng>(&self, lang: usize, len: usize, rng: &mut R) -> Sentence {
        self.world.random_sentence(lang, len, rng)
    }
}
