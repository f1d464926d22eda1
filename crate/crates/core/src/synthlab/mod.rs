//! Deterministic desk-scale laboratory: cipher languages, a learnable toy
//! translator with exact log-probabilities, and exact scoring/detection.

mod toy;
mod world;

use std::sync::Arc;

use crate::backends::{LanguageDetector, Scorer, TranslateRequest, Translator};
use crate::error::{Error, Result};
use crate::mtp::{LanguageTag, Sentence};

pub use toy::{accuracy_logit, Gradient, ToyTranslator};
pub use world::SyntheticWorld;

/// Position-wise token agreement divided by the longer length.
pub fn token_match_rate(a: &str, b: &str) -> f64 {
    let ta: Vec<&str> = a.split_whitespace().collect();
    let tb: Vec<&str> = b.split_whitespace().collect();
    let longest = ta.len().max(tb.len());
    if longest == 0 {
        return 1.0;
    }
    let hits = ta.iter().zip(&tb).filter(|(x, y)| x == y).count();
    hits as f64 / longest as f64
}

pub fn synth_score(a: &Sentence, b: &Sentence) -> Result<f64> {
    if a.lang != b.lang {
        return Err(Error::LanguageMismatch(a.lang.clone(), b.lang.clone()));
    }
    Ok(token_match_rate(&a.text, &b.text))
}

/// Majority language by token range; `None` for empty text or a tie.
pub fn synth_detect(world: &SyntheticWorld, text: &str) -> Option<LanguageTag> {
    let mut counts = vec![0usize; world.languages().len()];
    for tok in text.split_whitespace() {
        if let Some(k) = tok.parse::<usize>().ok().and_then(|v| world.language_of_token(v)) {
            counts[k] += 1;
        }
    }
    let top = *counts.iter().max()?;
    if top == 0 || counts.iter().filter(|c| **c == top).count() > 1 {
        return None;
    }
    let k = counts.iter().position(|c| *c == top)?;
    Some(world.languages()[k].clone())
}

/// Serves translate, score and detect from a world and a toy model.
#[derive(Clone)]
pub struct LabBackend {
    world: Arc<SyntheticWorld>,
    model: Arc<ToyTranslator>,
}

impl LabBackend {
    pub fn new(world: Arc<SyntheticWorld>, model: Arc<ToyTranslator>) -> Self {
        Self { world, model }
    }

    pub fn world(&self) -> &SyntheticWorld {
        &self.world
    }

    pub fn model(&self) -> &ToyTranslator {
        &self.model
    }
}

impl Translator for LabBackend {
    fn translate(&self, req: &TranslateRequest) -> Result<Vec<String>> {
        self.model.translate(&self.world, req)
    }
}

impl Scorer for LabBackend {
    fn score_batch(&self, pairs: &[(&Sentence, &Sentence)]) -> Result<Vec<f64>> {
        pairs.iter().map(|(a, b)| synth_score(a, b)).collect()
    }
}

impl LanguageDetector for LabBackend {
    fn detect(&self, texts: &[&str]) -> Result<Vec<Option<LanguageTag>>> {
        Ok(texts.iter().map(|t| synth_detect(&self.world, t)).collect())
    }
}
