//! Translation, scoring and language-detection backends.
//!
//! The search only talks to the traits defined here. Two families of
//! implementations exist: the HTTP wire client in [`http`] for external model
//! servers, and the deterministic laboratory backend in
//! [`crate::synthlab::LabBackend`].

pub mod http;
pub mod prompt;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mtp::{Direction, LanguageTag, Sentence};

pub use prompt::{default_templates, find_template, render_prompt, PromptTemplate};

/// A completed (source, target) translation shown to the model in-context.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub src: String,
    pub tgt: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TranslateRequest {
    pub text: String,
    pub direction: Direction,
    pub exemplars: Vec<Exemplar>,
    pub num_candidates: usize,
    /// `0.0` means greedy decoding.
    pub temperature: f64,
    pub top_k: usize,
    pub instruction_id: String,
    pub seed: u64,
}

impl TranslateRequest {
    /// A single greedy candidate with the default instruction.
    pub fn new(text: impl Into<String>, direction: Direction) -> Self {
        Self {
            text: text.into(),
            direction,
            exemplars: Vec::new(),
            num_candidates: 1,
            temperature: 0.0,
            top_k: 1,
            instruction_id: "alma".to_string(),
            seed: 0,
        }
    }

    pub fn with_exemplars(mut self, exemplars: Vec<Exemplar>) -> Self {
        self.exemplars = exemplars;
        self
    }

    pub fn sampled(mut self, num_candidates: usize, temperature: f64, top_k: usize) -> Self {
        self.num_candidates = num_candidates;
        self.temperature = temperature;
        self.top_k = top_k;
        self
    }

    pub fn with_instruction(mut self, id: impl Into<String>) -> Self {
        self.instruction_id = id.into();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

pub trait Translator: Send + Sync {
    /// Returns exactly `req.num_candidates` strings. An empty string marks a
    /// failed generation for that slot.
    fn translate(&self, req: &TranslateRequest) -> Result<Vec<String>>;
}

pub trait Scorer: Send + Sync {
    /// Metric `M(a, b)` for each pair. Both sides of a pair share a language.
    fn score_batch(&self, pairs: &[(&Sentence, &Sentence)]) -> Result<Vec<f64>>;
}

pub trait LanguageDetector: Send + Sync {
    /// Best-guess language per text, `None` when indeterminate.
    fn detect(&self, texts: &[&str]) -> Result<Vec<Option<LanguageTag>>>;
}

/// The backend bundle a search runs against. Enforces the contracts that must
/// hold regardless of implementation: candidate counts, same-language score
/// pairs and scores clamped into `[0, 1]`.
#[derive(Clone)]
pub struct Backends {
    translator: Arc<dyn Translator>,
    scorer: Arc<dyn Scorer>,
    detector: Arc<dyn LanguageDetector>,
    templates: Arc<Vec<PromptTemplate>>,
}

impl Backends {
    pub fn new(
        translator: Arc<dyn Translator>,
        scorer: Arc<dyn Scorer>,
        detector: Arc<dyn LanguageDetector>,
    ) -> Self {
        Self { translator, scorer, detector, templates: Arc::new(default_templates()) }
    }

    /// One object serving all three roles.
    pub fn from_shared<B>(backend: Arc<B>) -> Self
    where
        B: Translator + Scorer + LanguageDetector + 'static,
    {
        Self::new(backend.clone(), backend.clone(), backend)
    }

    pub fn with_templates(mut self, templates: Vec<PromptTemplate>) -> Result<Self> {
        if templates.is_empty() {
            return Err(Error::InvalidConfig("template set is empty".into()));
        }
        for t in &templates {
            t.validate()?;
        }
        self.templates = Arc::new(templates);
        Ok(self)
    }

    pub fn templates(&self) -> &[PromptTemplate] {
        &self.templates
    }

    pub fn translate(&self, req: &TranslateRequest) -> Result<Vec<String>> {
        let mut out = self.translator.translate(req)?;
        if out.len() != req.num_candidates {
            return Err(Error::Protocol(format!(
                "asked for {} candidates, got {}",
                req.num_candidates,
                out.len()
            )));
        }
        for c in &mut out {
            if c.trim().is_empty() {
                c.clear();
            }
        }
        Ok(out)
    }

    pub fn score_batch(&self, pairs: &[(&Sentence, &Sentence)]) -> Result<Vec<f64>> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        for (a, b) in pairs {
            if a.lang != b.lang {
                return Err(Error::LanguageMismatch(a.lang.clone(), b.lang.clone()));
            }
        }
        let raw = self.scorer.score_batch(pairs)?;
        if raw.len() != pairs.len() {
            return Err(Error::Protocol(format!(
                "scored {} pairs, got {} scores",
                pairs.len(),
                raw.len()
            )));
        }
        Ok(raw.into_iter().map(clamp_unit).collect())
    }

    pub fn score(&self, a: &Sentence, b: &Sentence) -> Result<f64> {
        Ok(self.score_batch(&[(a, b)])?[0])
    }

    pub fn detect(&self, texts: &[&str]) -> Result<Vec<Option<LanguageTag>>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.detector.detect(texts)?;
        if out.len() != texts.len() {
            return Err(Error::Protocol(format!(
                "detected {} of {} texts",
                out.len(),
                texts.len()
            )));
        }
        Ok(out)
    }
}

fn clamp_unit(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0)
    }
}

/// Request counts observed at the backend boundary.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestCounts {
    pub translate_requests: u64,
    pub translate_candidates: u64,
    pub score_requests: u64,
    pub score_pairs: u64,
    pub detect_requests: u64,
}

/// Wraps a backend and keeps its own request log, independent of the
/// counters the search maintains.
pub struct Logged<B> {
    inner: B,
    translate_requests: AtomicU64,
    translate_candidates: AtomicU64,
    score_requests: AtomicU64,
    score_pairs: AtomicU64,
    detect_requests: AtomicU64,
}

impl<B> Logged<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            translate_requests: AtomicU64::new(0),
            translate_candidates: AtomicU64::new(0),
            score_requests: AtomicU64::new(0),
            score_pairs: AtomicU64::new(0),
            detect_requests: AtomicU64::new(0),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn counts(&self) -> RequestCounts {
        RequestCounts {
            translate_requests: self.translate_requests.load(Ordering::SeqCst),
            translate_candidates: self.translate_candidates.load(Ordering::SeqCst),
            score_requests: self.score_requests.load(Ordering::SeqCst),
            score_pairs: self.score_pairs.load(Ordering::SeqCst),
            detect_requests: self.detect_requests.load(Ordering::SeqCst),
        }
    }
}

impl<B: Translator> Translator for Logged<B> {
    fn translate(&self, req: &TranslateRequest) -> Result<Vec<String>> {
        self.translate_requests.fetch_add(1, Ordering::SeqCst);
        self.translate_candidates.fetch_add(req.num_candidates as u64, Ordering::SeqCst);
        self.inner.translate(req)
    }
}

impl<B: Scorer> Scorer for Logged<B> {
    fn score_batch(&self, pairs: &[(&Sentence, &Sentence)]) -> Result<Vec<f64>> {
        self.score_requests.fetch_add(1, Ordering::SeqCst);
        self.score_pairs.fetch_add(pairs.len() as u64, Ordering::SeqCst);
        self.inner.score_batch(pairs)
    }
}

impl<B: LanguageDetector> LanguageDetector for Logged<B> {
    fn detect(&self, texts: &[&str]) -> Result<Vec<Option<LanguageTag>>> {
        self.detect_requests.fetch_add(1, Ordering::SeqCst);
        self.inner.detect(texts)
    }
}
