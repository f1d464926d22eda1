//! Domain types for the multilingual translation process: languages,
//! sentences, translation directions, trajectories and search configuration.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Short language identifier such as `en`, `de` or the synthetic `syn0`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LanguageTag(String);

impl LanguageTag {
    pub fn new(code: impl Into<String>) -> Result<Self> {
        let code = code.into();
        if code.trim().is_empty() || code.chars().any(char::is_whitespace) {
            return Err(Error::InvalidLanguageTag(code));
        }
        Ok(Self(code))
    }

    /// Reserved tag for the `k`-th synthetic laboratory language.
    pub fn synthetic(k: usize) -> Self {
        Self(format!("syn{k}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Index `k` of a reserved `synK` tag.
    pub fn synthetic_index(&self) -> Option<usize> {
        self.0.strip_prefix("syn")?.parse().ok()
    }

    /// English display name used when rendering prompts.
    pub fn display_name(&self) -> &str {
        match self.0.as_str() {
            "en" => "English",
            "de" => "German",
            "pt" => "Portuguese",
            "it" => "Italian",
            "zh" => "Chinese",
            "ru" => "Russian",
            "fr" => "French",
            "es" => "Spanish",
            "ja" => "Japanese",
            "cs" => "Czech",
            "is" => "Icelandic",
            other => other,
        }
    }
}

impl TryFrom<String> for LanguageTag {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        Self::new(value)
    }
}

impl From<LanguageTag> for String {
    fn from(tag: LanguageTag) -> Self {
        tag.0
    }
}

impl fmt::Display for LanguageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for LanguageTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::new(s)
    }
}

/// A sentence in a known language. The text is never blank.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub lang: LanguageTag,
}

impl Sentence {
    pub fn new(text: impl Into<String>, lang: LanguageTag) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::EmptySentence);
        }
        Ok(Self { text, lang })
    }

    /// Number of unicode scalar values in the raw text.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

/// A translation direction; source and target always differ.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawDirection", into = "RawDirection")]
pub struct Direction {
    src: LanguageTag,
    tgt: LanguageTag,
}

#[derive(Serialize, Deserialize)]
struct RawDirection {
    src: LanguageTag,
    tgt: LanguageTag,
}

impl TryFrom<RawDirection> for Direction {
    type Error = Error;

    fn try_from(raw: RawDirection) -> Result<Self> {
        Direction::new(raw.src, raw.tgt)
    }
}

impl From<Direction> for RawDirection {
    fn from(d: Direction) -> Self {
        RawDirection { src: d.src, tgt: d.tgt }
    }
}

impl Direction {
    pub fn new(src: LanguageTag, tgt: LanguageTag) -> Result<Self> {
        if src == tgt {
            return Err(Error::SameLanguageDirection(src));
        }
        Ok(Self { src, tgt })
    }

    pub fn src(&self) -> &LanguageTag {
        &self.src
    }

    pub fn tgt(&self) -> &LanguageTag {
        &self.tgt
    }

    pub fn reversed(&self) -> Self {
        Self { src: self.tgt.clone(), tgt: self.src.clone() }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.src, self.tgt)
    }
}

/// An ordered chain of translations, starting from the source sentence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Sentence>,
}

impl Trajectory {
    pub fn new(steps: Vec<Sentence>) -> Self {
        Self { steps }
    }

    pub fn source_language(&self) -> Option<&LanguageTag> {
        self.steps.first().map(|s| &s.lang)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// True iff every adjacent pair of steps changes language and at least two
/// distinct languages appear.
pub fn validate_trajectory(t: &Trajectory) -> bool {
    if t.steps.len() < 2 {
        return false;
    }
    let changes = t.steps.windows(2).all(|w| w[0].lang != w[1].lang);
    let distinct: BTreeSet<&LanguageTag> = t.steps.iter().map(|s| &s.lang).collect();
    changes && distinct.len() >= 2
}

/// Inclusive bounds on input length, counted in unicode scalar values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthGate {
    pub min: usize,
    pub max: usize,
}

impl LengthGate {
    pub const fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }
}

impl Default for LengthGate {
    fn default() -> Self {
        Self::new(30, 256)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RejectReason {
    TooShort { len: usize, min: usize },
    TooLong { len: usize, max: usize },
    UnsupportedLanguage(LanguageTag),
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::TooShort { len, min } => write!(f, "too short ({len} < {min} chars)"),
            RejectReason::TooLong { len, max } => write!(f, "too long ({len} > {max} chars)"),
            RejectReason::UnsupportedLanguage(l) => write!(f, "language {l} is not configured"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GateDecision {
    Accept,
    Reject(RejectReason),
}

impl GateDecision {
    pub fn is_accept(&self) -> bool {
        matches!(self, GateDecision::Accept)
    }
}

/// How the two squared brackets of the SPPO loss are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SppoSign {
    /// `[w]^2 - [l]^2`. Also accepted under its long config name.
    #[serde(alias = "paper_difference")]
    Difference,
    /// `[w]^2 + [l]^2`, the form used by the original SPPO objective.
    #[default]
    SumOfSquares,
}

/// Knobs for one G-MCTS search and the preference/training steps after it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub languages: Vec<LanguageTag>,
    pub width_b: usize,
    pub sim_depth_n: usize,
    /// Expansions allowed after initialization.
    pub node_budget: usize,
    pub length_gate: LengthGate,
    pub seed: u64,
    /// Utility multiplier for nodes that fail target-language detection.
    pub detect_penalty: f64,
    pub eta: f64,
    pub sppo_sign: SppoSign,
    /// Sampling temperature for candidate generation.
    pub temperature: f64,
    pub top_k: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        let languages = ["en", "de", "pt", "it", "zh", "ru"]
            .into_iter()
            .map(|c| LanguageTag(c.to_string()))
            .collect();
        Self {
            languages,
            width_b: 5,
            sim_depth_n: 2,
            node_budget: 20,
            length_gate: LengthGate::default(),
            seed: 0,
            detect_penalty: 0.5,
            eta: 10.0,
            sppo_sign: SppoSign::SumOfSquares,
            temperature: 1.0,
            top_k: 50,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let unique: BTreeSet<&LanguageTag> = self.languages.iter().collect();
        if self.languages.len() < 2 {
            return bad("at least two languages are required".into());
        }
        if unique.len() != self.languages.len() {
            return bad("language set contains duplicates".into());
        }
        if self.width_b == 0 {
            return bad("width_b must be >= 1".into());
        }
        if self.sim_depth_n == 0 {
            return bad("sim_depth_n must be >= 1".into());
        }
        if self.length_gate.min > self.length_gate.max {
            return bad("length_gate.min exceeds length_gate.max".into());
        }
        if !(self.detect_penalty > 0.0 && self.detect_penalty <= 1.0) {
            return bad(format!("detect_penalty {} outside (0, 1]", self.detect_penalty));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return bad(format!("eta {} must be positive", self.eta));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad(format!("temperature {} must be >= 0", self.temperature));
        }
        if self.top_k == 0 {
            return bad("top_k must be >= 1".into());
        }
        Ok(())
    }

    pub fn supports(&self, lang: &LanguageTag) -> bool {
        self.languages.contains(lang)
    }

    pub fn check_direction(&self, d: &Direction) -> Result<()> {
        if self.supports(d.src()) && self.supports(d.tgt()) {
            Ok(())
        } else {
            Err(Error::UnsupportedDirection { src: d.src().clone(), tgt: d.tgt().clone() })
        }
    }

    /// All ordered directions whose source is `src`.
    pub fn directions_from(&self, src: &LanguageTag) -> Vec<Direction> {
        self.languages
            .iter()
            .filter(|l| *l != src)
            .filter_map(|l| Direction::new(src.clone(), l.clone()).ok())
            .collect()
    }

    /// Hex SHA-256 over the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

pub fn validate_input(x: &Sentence, cfg: &SearchConfig) -> GateDecision {
    if !cfg.supports(&x.lang) {
        return GateDecision::Reject(RejectReason::UnsupportedLanguage(x.lang.clone()));
    }
    let len = x.char_len();
    if len < cfg.length_gate.min {
        GateDecision::Reject(RejectReason::TooShort { len, min: cfg.length_gate.min })
    } else if len > cfg.length_gate.max {
        GateDecision::Reject(RejectReason::TooLong { len, max: cfg.length_gate.max })
    } else {
        GateDecision::Accept
    }
}
